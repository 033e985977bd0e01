"""Command-line entry point: ``clickgraph {preprocess,train,online,report}``.

Exit codes: 0 success, 1 usage, 2 data error, 3 numerical divergence,
4 checkpoint/dataset incompatibility.  Progress goes to stderr; results go
to stdout or files.  ``--config file.json`` supplies defaults for any flag
(keys are the flag names with dashes replaced by underscores); explicit
flags win.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import data, metrics, pipeline
from .models import (
    CheckpointError,
    ConfigError,
    DivergenceError,
    ModelConfig,
    init_model,
    load_checkpoint,
    predict,
    save_checkpoint,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGENCE, EXIT_COMPAT = 0, 1, 2, 3, 4

log = logging.getLogger("clickgraph")


class UsageError(Exception):
    pass


class CompatibilityError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# --------------------------------------------------------------------------
# run configuration
# --------------------------------------------------------------------------


@dataclass
class RunConfig:
    """Everything a command needs: model and online settings, paths, rebalance mode."""

    model: ModelConfig = field(default_factory=ModelConfig)
    online: pipeline.OnlineConfig = field(default_factory=pipeline.OnlineConfig)
    raw_input: str | None = None
    dataset: str | None = None
    checkpoint: str | None = None
    out_dir: str | None = None
    rebalance: str = "none"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model"] = self.model.to_dict()
        d["online"]["seeds"] = list(self.online.seeds)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        d["model"] = ModelConfig.from_dict(d.get("model", {}))
        d["online"] = pipeline.OnlineConfig(**d.get("online", {}))
        return cls(**d)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _int_list(text: str) -> list[int]:
    """``"100..1000"`` (step 100 unless ``a..b:step``), ``"1,2,3"`` or a single int."""
    text = str(text).strip()
    try:
        if ".." in text:
            rng, _, step = text.partition(":")
            lo, hi = (int(x) for x in rng.split(".."))
            step = int(step) if step else (100 if lo % 100 == 0 and hi % 100 == 0 else 1)
            return list(range(lo, hi + 1, step))
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer list: {text!r}") from None


def _grid(text: str) -> np.ndarray:
    """``"lo:hi:step"`` or a comma list of thresholds."""
    try:
        if ":" in text:
            lo, hi, step = (float(x) for x in text.split(":"))
            n = int(round((hi - lo) / step))
            return np.round(lo + step * np.arange(n + 1), 10)
        return np.array(sorted(float(x) for x in text.split(",")))
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a threshold grid: {text!r}") from None


def _seeds(text: str) -> list[int]:
    """A bare count ``n`` means seeds 0..n-1; a comma list is taken literally."""
    text = str(text)
    if "," in text:
        return _int_list(text)
    try:
        return list(range(int(text)))
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a seed count or list: {text!r}") from None


def _model_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("model")
    g.add_argument("--model", choices=("lr", "fm", "deepfm", "fignn"), default="fignn")
    g.add_argument("--embed-dim", type=int, default=16)
    g.add_argument("--heads", type=int, default=2)
    g.add_argument("--gnn-steps", type=int, default=2)
    g.add_argument("--mlp-hidden", type=_int_list, default=[64, 32])
    g.add_argument("--init-scale", type=float, default=0.01)
    g.add_argument("--lr", type=float, default=1e-3)


def _online_flags(p: argparse.ArgumentParser, epochs_default: int = 3) -> None:
    g = p.add_argument_group("training")
    g.add_argument("--offline-batch-size", type=int, default=100)
    g.add_argument("--epochs", type=int, default=epochs_default)
    g.add_argument("--threshold", type=float, default=metrics.DEFAULT_THRESHOLD)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="clickgraph", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="JSON file with default flag values")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("preprocess", help="parse a Criteo TSV into an encoded CTRF dataset")
    p.add_argument("raw_tsv")
    p.add_argument("out")
    p.add_argument("--min-freq", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rebalance", choices=("none", "undersample", "oversample"), default="none")
    p.add_argument("--max-bad-lines", type=int, default=0)

    p = sub.add_parser("train", help="offline training; writes checkpoint, metrics and test predictions")
    p.add_argument("dataset")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=0)
    _model_flags(p)
    _online_flags(p)

    p = sub.add_parser("online", help="prequential online simulation / sweep over M")
    p.add_argument("dataset")
    p.add_argument("checkpoint")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--M", dest="M", type=_int_list, default=[400])
    p.add_argument("--seeds", type=_seeds, default=[0, 1, 2])
    p.add_argument("--passes", type=int, default=1, help="passes over each accumulated online batch")
    p.add_argument("--rescore-final", action="store_true", help="score the whole stream with the final model")
    p.add_argument("--from-scratch", action="store_true",
                   help="re-run offline training per seed with the checkpoint's config instead of reusing it")
    _online_flags(p)

    p = sub.add_parser("report", help="curves and confusion matrices from a prediction CSV")
    p.add_argument("predictions")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--threshold-grid", type=_grid, default=None)
    p.add_argument("--threshold", type=float, default=metrics.DEFAULT_THRESHOLD)
    return parser


def parse_args(argv=None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            defaults = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, ValueError) as err:
            parser.error(f"cannot read config {args.config}: {err}")
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        unknown = set(defaults) - known - {"config", "verbose", "command"}
        if unknown:
            parser.error(f"unknown keys in config: {sorted(unknown)}")
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)
    return args


def _validate_input(path: str) -> None:
    if not Path(path).is_file():
        raise UsageError(f"no such file: {path}")


def _out_dir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_preprocess(args) -> int:
    _validate_input(args.raw_tsv)
    records, bad = data.read_tsv(args.raw_tsv, has_label=True, max_bad_lines=args.max_bad_lines)
    for err in bad:
        log.warning("skipped malformed %s", err)
    vocab = data.build_vocabulary(records, args.min_freq)
    encoded = data.encode_all(records, vocab)
    split = data.split_and_partition(encoded, args.seed, vocab)
    if args.rebalance != "none":
        split = data.rebalance_split(split, args.rebalance, args.seed)
    data.save_encoded(split, args.out)
    train = split.train
    print(f"records: {len(records)} (skipped {len(bad)})")
    print(f"features: {vocab.total_features}")
    print("split: train " + "/".join(str(len(p)) for p in split.train_partitions)
          + f", val {len(split.val_partition)}, test {len(split.test_partition)}")
    print(f"class ratio (pos/neg) train: {data.class_ratio(train):.4f} "
          f"all: {data.class_ratio(encoded):.4f}")
    return EXIT_OK


def _model_config(args, seed: int) -> ModelConfig:
    return ModelConfig(
        model_kind=args.model, embed_dim=args.embed_dim, attention_heads=args.heads,
        gnn_steps=args.gnn_steps, mlp_hidden=tuple(args.mlp_hidden), init_scale=args.init_scale,
        seed=seed, lr=args.lr,
    )


def _write_history(history, path) -> None:
    import csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(("epoch", "iterations", "train_loss", "val_auc", "val_logloss"))
        for r in history:
            writer.writerow((r.epoch, r.iterations, repr(r.train_loss), repr(r.val_auc), repr(r.val_logloss)))


def cmd_train(args) -> int:
    _validate_input(args.dataset)
    split = data.load_encoded(args.dataset)
    if split.vocab is None:
        raise data.DataError(f"{args.dataset} carries no vocabulary")
    cfg = _model_config(args, args.seed)
    online = pipeline.OnlineConfig(offline_batch_size=args.offline_batch_size, offline_epochs=args.epochs,
                                   eval_threshold=args.threshold, seeds=(args.seed,))
    out = _out_dir(args.out_dir)
    RunConfig(cfg, online, dataset=args.dataset, out_dir=str(out)).save(out / "run_config.json")
    state = init_model(cfg, split.vocab.field_sizes, args.seed)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", pipeline.InsufficientIterationsWarning)
        state, history = pipeline.train_offline(state, split, online, args.seed)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    save_checkpoint(state, out / "model.ctrm")
    _write_history(history, out / "history.csv")
    test = split.test_partition
    probs = predict(state, test)
    pipeline.write_predictions(out / "test_predictions.csv", test.labels, probs, np.zeros(len(test), dtype=int))
    report = metrics.evaluate(test.labels, probs, args.threshold)
    payload = {
        "model": cfg.model_kind,
        "test": report.to_dict(with_curves=False),
        "history": [asdict(r) for r in history],
        "iterations": pipeline.count_offline_iterations(split, online),
    }
    (out / "metrics.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    auc_text = "n/a" if report.auc is None else f"{report.auc:.4f}"
    print(f"{cfg.model_kind}: test AUC {auc_text}  test LogLoss {report.logloss:.4f}")
    return EXIT_OK


def cmd_online(args) -> int:
    _validate_input(args.dataset)
    _validate_input(args.checkpoint)
    split = data.load_encoded(args.dataset)
    try:
        state = load_checkpoint(args.checkpoint)
    except CheckpointError as err:
        raise CompatibilityError(str(err)) from None
    if split.vocab is None or tuple(state.field_sizes) != tuple(split.vocab.field_sizes):
        raise CompatibilityError(
            f"checkpoint vocabulary ({sum(state.field_sizes)} features) does not match "
            f"dataset vocabulary ({split.vocab.total_features if split.vocab else 'none'} features)"
        )
    if any(m < 1 for m in args.M):
        raise UsageError("--M values must be >= 1")
    online = pipeline.OnlineConfig(
        offline_batch_size=args.offline_batch_size, offline_epochs=args.epochs,
        online_passes_per_retrain=args.passes, seeds=tuple(args.seeds),
        eval_threshold=args.threshold, rescore_final=args.rescore_final,
    )
    out = _out_dir(args.out_dir)
    cells = out / "cells"
    cells.mkdir(exist_ok=True)

    def on_run(M, seed, final, glog, preds):
        cell = cells / f"M{M}_seed{seed}"
        cell.mkdir(exist_ok=True)
        preds.to_csv(cell / "predictions.csv")
        glog.to_csv(cell / "generations.csv")
        (cell / "generations.json").write_text(glog.to_json() + "\n", encoding="utf-8")
        print(f"M={M} seed={seed}: retrains {final.generation - state.generation}", file=sys.stderr)

    result = pipeline.sweep_M(
        split, state.config, args.M, online,
        offline_state=None if args.from_scratch else state, on_run=on_run,
    )
    result.to_csv(out / "sweep.csv")
    (out / "sweep.json").write_text(result.to_json() + "\n", encoding="utf-8")
    for M in result.Ms:
        print(f"M={M}: mean AUC {result.mean_auc(M):.4f}  mean LogLoss {result.mean_logloss(M):.4f}")
    return EXIT_OK


def cmd_report(args) -> int:
    _validate_input(args.predictions)
    labels, probs, _ = pipeline.read_predictions(args.predictions)
    if labels.size == 0:
        raise data.DataError(f"{args.predictions} holds no predictions")
    out = _out_dir(args.out_dir)
    report = metrics.evaluate(labels, probs, args.threshold, with_curves=True, grid=args.threshold_grid)
    if report.auc is None:
        print("warning: only one class present; AUC and ROC omitted", file=sys.stderr)
    files = {
        "roc": "roc.csv",
        "f1_vs_threshold": "f1_vs_threshold.csv",
        "precision_vs_recall": "precision_recall.csv",
        "precision_vs_threshold": "precision_vs_threshold.csv",
        "recall_vs_threshold": "recall_vs_threshold.csv",
    }
    for kind, name in files.items():
        if kind in report.curves:
            metrics.CurveSeries(kind, report.curves[kind]).to_csv(out / name)
    sweep = metrics.threshold_sweep(labels, probs, args.threshold_grid)
    confusion = {
        "argmax_f1": metrics.confusion_at(labels, probs, sweep.best_threshold).to_dict(),
        "at_threshold": metrics.confusion_at(labels, probs, args.threshold).to_dict(),
    }
    (out / "confusion.json").write_text(json.dumps(confusion, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    report.save(out / "report.json")
    auc_text = "n/a" if report.auc is None else f"{report.auc:.4f}"
    print(f"AUC {auc_text}  LogLoss {report.logloss:.4f}  best F1 {sweep.best_f1:.4f} at threshold {sweep.best_threshold:.2f}")
    c = confusion["at_threshold"]
    print(f"at {args.threshold:.2f}: tp={c['tp']} fp={c['fp']} tn={c['tn']} fn={c['fn']} "
          f"precision={c['precision']:.4f} recall={c['recall']:.4f} f1={c['f1']:.4f}")
    return EXIT_OK


COMMANDS = {"preprocess": cmd_preprocess, "train": cmd_train, "online": cmd_online, "report": cmd_report}


def main(argv=None) -> int:
    args = parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (data.DataError, ValueError) as err:
        if isinstance(err, ConfigError):
            print(f"error: {err}", file=sys.stderr)
            return EXIT_USAGE
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except (DivergenceError, FloatingPointError) as err:
        print(f"numerical divergence: {err}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except CompatibilityError as err:
        print(f"incompatible inputs: {err}", file=sys.stderr)
        return EXIT_COMPAT


if __name__ == "__main__":
    sys.exit(main())
