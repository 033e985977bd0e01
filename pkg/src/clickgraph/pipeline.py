"""Offline training over the eight train partitions, prequential online
serving with a retrain every ``M`` arrivals, and the sweep over ``M``.
"""

from __future__ import annotations

import csv
import json
import logging
import time
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import metrics
from .data import N_TRAIN_PARTITIONS, DatasetSplit, EncodedBatch, as_batch
from .models import DivergenceError, ModelConfig, ModelState, init_model, predict, train_step

log = logging.getLogger(__name__)

MIN_HEALTHY_ITERATIONS = 100
DEFAULT_MS = tuple(range(100, 1001, 100))


class InsufficientIterationsWarning(UserWarning):
    """Offline training performed fewer optimizer steps than is healthy."""


@dataclass(frozen=True)
class OnlineConfig:
    offline_batch_size: int = 100
    offline_epochs: int = 3
    learning_batch_size: int = 400
    online_passes_per_retrain: int = 1
    seeds: tuple[int, ...] = (0, 1, 2)
    eval_threshold: float = 0.3
    rescore_final: bool = False

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if self.learning_batch_size < 1:
            raise ValueError("learning_batch_size (M) must be >= 1")
        if self.offline_batch_size < 1:
            raise ValueError("offline_batch_size must be >= 1")
        if self.offline_epochs < 0 or self.online_passes_per_retrain < 0:
            raise ValueError("epoch/pass counts must be non-negative")
        if not self.seeds:
            raise ValueError("at least one seed is required")


def _minibatches(batch: EncodedBatch, size: int, rng: np.random.Generator | None):
    order = np.arange(len(batch)) if rng is None else rng.permutation(len(batch))
    for lo in range(0, len(batch), size):
        yield batch[order[lo:lo + size]]


# --------------------------------------------------------------------------
# offline
# --------------------------------------------------------------------------


@dataclass
class EpochRecord:
    epoch: int
    iterations: int
    train_loss: float
    val_auc: float
    val_logloss: float


def count_offline_iterations(split: DatasetSplit, config: OnlineConfig) -> int:
    per_epoch = sum(-(-len(p) // config.offline_batch_size) for p in split.train_partitions)
    return per_epoch * config.offline_epochs


def train_offline(state: ModelState, split: DatasetSplit, config: OnlineConfig, seed: int | None = None):
    """Train partition by partition for ``offline_epochs`` passes.

    Partition order is fixed; minibatch order inside a partition is shuffled
    under ``seed`` (default: the model config's seed).  Validation AUC and
    LogLoss are recorded after every epoch.  Returns ``(state, history)``.
    """
    if len(split.train_partitions) != N_TRAIN_PARTITIONS:
        raise ValueError(f"expected {N_TRAIN_PARTITIONS} train partitions, got {len(split.train_partitions)}")
    total = count_offline_iterations(split, config)
    if total < MIN_HEALTHY_ITERATIONS:
        warnings.warn(
            f"offline training will run only {total} iterations "
            f"(batch size {config.offline_batch_size}, {config.offline_epochs} epochs); "
            f"fewer than {MIN_HEALTHY_ITERATIONS} usually leaves the model undertrained",
            InsufficientIterationsWarning,
            stacklevel=2,
        )
    rng = np.random.default_rng(state.config.seed if seed is None else seed)
    history = []
    iterations = 0
    for epoch in range(config.offline_epochs):
        losses = []
        for part in split.train_partitions:
            for mb in _minibatches(part, config.offline_batch_size, rng):
                state, value = train_step(state, mb)
                losses.append(value)
                iterations += 1
        val = split.val_partition
        probs = predict(state, val)
        record = EpochRecord(
            epoch, iterations, float(np.mean(losses)) if losses else float("nan"),
            metrics.safe_auc(val.labels, probs), metrics.logloss(val.labels, probs) if len(val) else float("nan"),
        )
        log.info("epoch %d: loss %.4f val auc %.4f logloss %.4f", epoch, record.train_loss, record.val_auc, record.val_logloss)
        history.append(record)
    return state, history


# --------------------------------------------------------------------------
# online (prequential)
# --------------------------------------------------------------------------


@dataclass
class GenerationRecord:
    generation: int
    n_scored: int
    n_trained: int
    first_index: int
    trained_through: int
    cum_auc: float
    cum_logloss: float
    wall_time: float


@dataclass
class GenerationLog:
    """One record per generation in force during the stream.

    ``first_index`` is the stream position of the first example the
    generation scored; ``trained_through`` is one past the last stream
    position whose label had been used in training when the generation was
    created (0 for the offline model).
    """

    records: list[GenerationRecord] = field(default_factory=list)

    CSV_COLUMNS = ("generation", "n_scored", "n_trained", "first_index", "trained_through", "cum_auc", "cum_logloss")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.CSV_COLUMNS)
            for r in self.records:
                writer.writerow([getattr(r, c) for c in self.CSV_COLUMNS])

    def to_json(self) -> str:
        return json.dumps([asdict(r) for r in self.records], indent=2)


@dataclass
class OnlinePredictions:
    probs: np.ndarray
    labels: np.ndarray
    generation: np.ndarray
    rescored: np.ndarray | None = None

    def __len__(self) -> int:
        return self.probs.shape[0]

    def scores(self, rescore_final: bool = False) -> np.ndarray:
        return self.rescored if rescore_final and self.rescored is not None else self.probs

    def to_csv(self, path) -> None:
        write_predictions(path, self.labels, self.probs, self.generation)


def write_predictions(path, labels, probs, generation) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(("id", "label", "prob", "generation"))
        for i, (y, p, g) in enumerate(zip(labels, probs, generation)):
            writer.writerow((i, int(y), repr(float(p)), int(g)))


def read_predictions(path):
    """Returns ``(labels, probs, generation)`` arrays from a prediction CSV."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = {"label", "prob"} - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        rows = list(reader)
    labels = np.array([int(r["label"]) for r in rows], dtype=np.int64)
    probs = np.array([float(r["prob"]) for r in rows], dtype=np.float64)
    gen = np.array([int(r.get("generation") or 0) for r in rows], dtype=np.int64)
    return labels, probs, gen


def retrain(state: ModelState, batch: EncodedBatch, config: OnlineConfig, rng: np.random.Generator) -> ModelState:
    """Continue training (Adam moments kept) on one accumulated online batch."""
    for _ in range(config.online_passes_per_retrain):
        for mb in _minibatches(batch, config.offline_batch_size, rng):
            state, _ = train_step(state, mb)
    return state


def run_online(state: ModelState, test_stream, config: OnlineConfig, seed: int | None = None):
    """Prequential test-then-train over ``test_stream``.

    Each arriving example is scored by the generation in force before its
    label is seen.  Every ``M`` arrivals the accumulated examples retrain the
    model and the generation counter advances; a trailing partial batch never
    triggers a retrain.  Returns ``(state, GenerationLog, OnlinePredictions)``.
    """
    stream = as_batch(test_stream)
    n = len(stream)
    if n == 0:
        raise ValueError("online stream is empty")
    M = config.learning_batch_size
    rng = np.random.default_rng(state.config.seed if seed is None else seed)
    probs = np.empty(n)
    gens = np.empty(n, dtype=np.int64)
    glog = GenerationLog()
    trained_through = 0
    n_trained = 0
    start = 0
    t0 = time.perf_counter()
    # Parameters only change at retrain boundaries, so a whole chunk of
    # arrivals can be scored with one call before any of its labels are used.
    while start < n:
        stop = min(start + M, n)
        chunk = stream[start:stop]
        probs[start:stop] = predict(state, chunk)
        gens[start:stop] = state.generation
        glog.records.append(GenerationRecord(
            state.generation, stop - start, n_trained, start, trained_through,
            metrics.safe_auc(stream.labels[:stop], probs[:stop]),
            metrics.logloss(stream.labels[:stop], probs[:stop]),
            time.perf_counter() - t0,
        ))
        if stop - start == M:
            try:
                state = retrain(state, chunk, config, rng)
            except DivergenceError as err:
                raise DivergenceError(
                    f"divergence while training generation {state.generation + 1}: {err}",
                    generation=state.generation + 1,
                ) from err
            state = state.with_generation(state.generation + 1)
            trained_through = stop
            n_trained += stop - start
        start = stop
    rescored = predict(state, stream) if config.rescore_final else None
    return state, glog, OnlinePredictions(probs, stream.labels.copy(), gens, rescored)


def check_prequential(glog: GenerationLog, preds: OnlinePredictions) -> bool:
    """True when no prediction was made by a generation trained on its own or later labels."""
    through = {r.generation: r.trained_through for r in glog.records}
    for i, g in enumerate(preds.generation):
        if through[int(g)] > i:
            return False
    return True


# --------------------------------------------------------------------------
# sweep
# --------------------------------------------------------------------------


@dataclass
class RunResult:
    M: int
    seed: int
    auc: float
    logloss: float


@dataclass
class SweepResult:
    runs: list[RunResult] = field(default_factory=list)

    @property
    def Ms(self) -> list[int]:
        return sorted({r.M for r in self.runs})

    def per_seed(self, M: int) -> list[RunResult]:
        return [r for r in self.runs if r.M == M]

    def mean_auc(self, M: int) -> float:
        return float(np.mean([r.auc for r in self.per_seed(M)]))

    def mean_logloss(self, M: int) -> float:
        return float(np.mean([r.logloss for r in self.per_seed(M)]))

    def as_table(self) -> dict[int, tuple[float, float, list[RunResult]]]:
        return {M: (self.mean_auc(M), self.mean_logloss(M), self.per_seed(M)) for M in self.Ms}

    def to_csv(self, path) -> None:
        """Per-run rows followed by one ``mean`` row per M."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(("M", "seed", "auc", "logloss"))
            for r in sorted(self.runs, key=lambda r: (r.M, r.seed)):
                writer.writerow((r.M, r.seed, repr(r.auc), repr(r.logloss)))
            for M in self.Ms:
                writer.writerow((M, "mean", repr(self.mean_auc(M)), repr(self.mean_logloss(M))))

    def to_json(self) -> str:
        return json.dumps(
            {
                "runs": [asdict(r) for r in self.runs],
                "means": {str(M): {"auc": self.mean_auc(M), "logloss": self.mean_logloss(M)} for M in self.Ms},
            },
            indent=2,
        )


def sweep_M(
    split: DatasetSplit,
    model_config: ModelConfig,
    Ms: Sequence[int] = DEFAULT_MS,
    config: OnlineConfig = OnlineConfig(),
    offline_state: ModelState | None = None,
    on_run=None,
) -> SweepResult:
    """Offline-train once per seed, then run the online stream once per M.

    With ``offline_state`` the given model replaces offline training for every
    seed (the seed then only drives online minibatch shuffling).  ``on_run``
    is called as ``on_run(M, seed, state, glog, preds)`` after every cell.
    """
    Ms = list(Ms)
    if not Ms:
        raise ValueError("Ms must be non-empty")
    if split.vocab is None and offline_state is None:
        raise ValueError("split carries no vocabulary; field sizes unknown")
    result = SweepResult()
    stream = split.test_partition
    for seed in config.seeds:
        if offline_state is None:
            cfg = ModelConfig.from_dict({**model_config.to_dict(), "seed": seed})
            state = init_model(cfg, split.vocab.field_sizes, seed)
            state, _ = train_offline(state, split, config, seed)
        else:
            state = offline_state
        for M in Ms:
            run_cfg = OnlineConfig(**{**asdict(config), "learning_batch_size": M})
            final, glog, preds = run_online(state.copy(), stream, run_cfg, seed)
            scores = preds.scores(config.rescore_final)
            result.runs.append(RunResult(M, seed, metrics.safe_auc(preds.labels, scores), metrics.logloss(preds.labels, scores)))
            log.info("M=%d seed=%d auc=%.4f logloss=%.4f", M, seed, result.runs[-1].auc, result.runs[-1].logloss)
            if on_run is not None:
                on_run(M, seed, final, glog, preds)
    return result
