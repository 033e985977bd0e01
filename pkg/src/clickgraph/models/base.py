"""Model configuration, state, and the kind-independent train/predict surface."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from ..data import N_FIELDS, as_batch
from ..numerics import AdamState, Params, adam_update, sigmoid

MODEL_KINDS = ("lr", "fm", "deepfm", "fignn")
PROB_CLIP = 1e-7

_P_MIN = np.finfo(np.float64).tiny
_P_MAX = np.nextafter(1.0, 0.0)
_Z_CLIP = float(np.log((1.0 - PROB_CLIP) / PROB_CLIP))  # logit of the clip bound


class ModelError(ValueError):
    pass


class ConfigError(ModelError):
    pass


class IndexRangeError(ModelError):
    pass


class DivergenceError(FloatingPointError):
    """Training produced a non-finite loss."""

    def __init__(self, message: str, generation: int | None = None, step: int | None = None):
        self.generation = generation
        self.step = step
        super().__init__(message)


@dataclass(frozen=True)
class ModelConfig:
    model_kind: str = "fignn"
    embed_dim: int = 16
    attention_heads: int = 2
    gnn_steps: int = 2
    mlp_hidden: tuple[int, ...] = (64, 32)
    init_scale: float = 0.01
    seed: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        object.__setattr__(self, "model_kind", self.model_kind.lower())
        object.__setattr__(self, "mlp_hidden", tuple(int(w) for w in self.mlp_hidden))
        self.validate()

    def validate(self) -> None:
        if self.model_kind not in MODEL_KINDS:
            raise ConfigError(f"model_kind must be one of {MODEL_KINDS}, got {self.model_kind!r}")
        if self.embed_dim < 1:
            raise ConfigError("embed_dim must be positive")
        if self.attention_heads < 1 or self.embed_dim % self.attention_heads:
            raise ConfigError(
                f"embed_dim {self.embed_dim} must be divisible by attention_heads {self.attention_heads}"
            )
        if self.gnn_steps < 0:
            raise ConfigError("gnn_steps must be non-negative")
        if any(w < 1 for w in self.mlp_hidden):
            raise ConfigError("mlp_hidden widths must be positive")
        if self.init_scale < 0:
            raise ConfigError("init_scale must be non-negative")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mlp_hidden"] = list(self.mlp_hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


@dataclass
class ModelState:
    """Parameters, optimizer moments, and the generation counter of one model."""

    config: ModelConfig
    field_sizes: tuple[int, ...]
    params: Params
    adam: AdamState
    generation: int = 0

    @property
    def field_offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.field_sizes)[:-1]]).astype(np.int64)

    @property
    def n_features(self) -> int:
        return int(sum(self.field_sizes))

    def copy(self) -> "ModelState":
        return ModelState(
            self.config,
            tuple(self.field_sizes),
            {name: p.copy() for name, p in self.params.items()},
            self.adam.copy(),
            self.generation,
        )

    def with_generation(self, generation: int) -> "ModelState":
        return replace(self, generation=generation)


def _arch(kind: str):
    from . import deepfm, fignn, linear

    return {"lr": linear.LR, "fm": linear.FM, "deepfm": deepfm, "fignn": fignn}[kind]


def init_model(config: ModelConfig, field_sizes: Sequence[int], seed: int | None = None) -> ModelState:
    """Fresh parameters: weights ~ U(-init_scale, init_scale), biases zero."""
    config.validate()
    field_sizes = tuple(int(s) for s in field_sizes)
    if len(field_sizes) != N_FIELDS or min(field_sizes) < 1:
        raise ConfigError(f"need {N_FIELDS} positive field sizes")
    rng = np.random.default_rng(config.seed if seed is None else seed)
    params = _arch(config.model_kind).init_params(config, sum(field_sizes), rng)
    adam = AdamState.for_params(params, lr=config.lr, beta1=config.beta1, beta2=config.beta2, eps=config.adam_eps)
    return ModelState(config, field_sizes, params, adam, 0)


def uniform(rng: np.random.Generator, scale: float, shape) -> np.ndarray:
    return rng.uniform(-scale, scale, size=shape) if scale > 0 else np.zeros(shape)


def _inputs(state: ModelState, batch):
    batch = as_batch(batch)
    idx = batch.indices
    lo = state.field_offsets
    hi = lo + np.asarray(state.field_sizes)
    bad = (idx < lo) | (idx >= hi)
    if bad.any():
        row, col = np.argwhere(bad)[0]
        raise IndexRangeError(
            f"example {row}: field {col} index {idx[row, col]} outside [{lo[col]}, {hi[col]})"
        )
    return batch, idx, batch.values


def logits(state: ModelState, batch) -> np.ndarray:
    _, idx, vals = _inputs(state, batch)
    return _arch(state.config.model_kind).forward(state.params, state.config, idx, vals)[0]


def predict(state: ModelState, batch) -> np.ndarray:
    """Click probabilities, strictly inside (0, 1). Does not touch the state."""
    if len(as_batch(batch)) == 0:
        return np.zeros(0)
    return np.clip(sigmoid(logits(state, batch)), _P_MIN, _P_MAX)


def loss(probs, labels) -> float:
    """Mean binary cross-entropy with probabilities clipped to [1e-7, 1 - 1e-7]."""
    p = np.clip(np.asarray(probs, dtype=np.float64), PROB_CLIP, 1.0 - PROB_CLIP)
    y = np.asarray(labels, dtype=np.float64)
    if p.shape != y.shape:
        raise ValueError(f"probs {p.shape} and labels {y.shape} differ in shape")
    if p.size == 0:
        raise ValueError("loss of an empty batch is undefined")
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log1p(-p)))


def loss_and_grad(params: Params, state: ModelState, batch) -> tuple[float, Params]:
    """Batch loss and its gradient for an arbitrary parameter set of ``state``'s kind."""
    batch, idx, vals = _inputs(state, batch)
    arch = _arch(state.config.model_kind)
    z, cache = arch.forward(params, state.config, idx, vals)
    p = sigmoid(z)
    y = batch.labels.astype(np.float64)
    # same value as loss(p, y), but evaluated on the logit scale so that
    # confident predictions do not lose digits in log(1 - p)
    zc = np.clip(z, -_Z_CLIP, _Z_CLIP)
    with np.errstate(invalid="ignore"):  # non-finite logits are reported by train_step
        value = float(np.mean(np.logaddexp(0.0, zc) - y * zc))
    inside = (p > PROB_CLIP) & (p < 1.0 - PROB_CLIP)
    dz = np.where(inside, (p - y) / len(y), 0.0)
    return value, arch.backward(params, state.config, cache, dz)


def train_step(state: ModelState, batch) -> tuple[ModelState, float]:
    """Forward, backward, one Adam update. The returned loss is the pre-update value."""
    if len(as_batch(batch)) == 0:
        raise ValueError("train_step needs a non-empty batch")
    value, grads = loss_and_grad(state.params, state, batch)
    if not np.isfinite(value) or not all(np.all(np.isfinite(g)) for g in grads.values()):
        raise DivergenceError(f"non-finite loss/gradient ({value})", generation=state.generation, step=state.adam.t)
    params, adam = adam_update(state.params, grads, state.adam)
    return ModelState(state.config, state.field_sizes, params, adam, state.generation), value
