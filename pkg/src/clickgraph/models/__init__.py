"""Four CTR models behind one train/predict surface: ``lr``, ``fm``,
``deepfm`` and ``fignn``."""

from .base import (
    MODEL_KINDS,
    PROB_CLIP,
    ConfigError,
    DivergenceError,
    IndexRangeError,
    ModelConfig,
    ModelError,
    ModelState,
    init_model,
    logits,
    loss,
    loss_and_grad,
    predict,
    train_step,
)
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .linear import fm_pairwise


def fignn_forward(state: ModelState, batch, return_cache: bool = False):
    """FiGNN probabilities; with ``return_cache`` also the intermediate tensors
    (edge weights per step, self-attention probabilities, node states)."""
    from ..data import as_batch
    from . import fignn

    if state.config.model_kind != "fignn":
        raise ConfigError(f"fignn_forward called on a {state.config.model_kind!r} model")
    probs = predict(state, batch)
    if not return_cache:
        return probs
    batch = as_batch(batch)
    _, cache = fignn.forward(state.params, state.config, batch.indices, batch.values)
    return probs, cache


__all__ = [
    "MODEL_KINDS", "PROB_CLIP", "CheckpointError", "ConfigError", "DivergenceError",
    "IndexRangeError", "ModelConfig", "ModelError", "ModelState", "fignn_forward",
    "fm_pairwise", "init_model", "load_checkpoint", "logits", "loss", "loss_and_grad",
    "predict", "save_checkpoint", "train_step",
]
