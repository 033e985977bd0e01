"""Instance generators shared by gradient-check tests."""

import numpy as np

from clickgraph.data import N_FIELDS, EncodedBatch
from clickgraph.models import ModelConfig, fignn_forward, init_model, loss_and_grad
from clickgraph.numerics import finite_diff_check


def random_batch(rng, field_sizes, n, labels=None):
    sizes = np.asarray(field_sizes)
    offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    idx = offsets + rng.integers(0, sizes, (n, N_FIELDS))
    if labels is None:
        labels = rng.integers(0, 2, n)
    return EncodedBatch(idx, labels)


GRAD_EPS = 1e-4
# Central differences straddling a ReLU / leaky-ReLU kink measure a slope
# jump, not a derivative; instances are redrawn until every kinked
# pre-activation sits at least this far from zero.
KINK_MARGIN = 1e-4


def _deepfm_margin(state, batch):
    p = state.params
    x = (p["v"][batch.indices] * batch.values[..., None]).reshape(len(batch), -1)
    margin = np.inf
    for layer in range(len(state.config.mlp_hidden)):
        x = x @ p[f"mlp.W{layer}"] + p[f"mlp.b{layer}"]
        margin = min(margin, np.abs(x).min())
        x = np.maximum(x, 0.0)
    return margin


def _fignn_margin(state, batch):
    _, cache = fignn_forward(state, batch, return_cache=True)
    off = ~np.eye(N_FIELDS, dtype=bool)
    return min((np.abs(s.pre[:, off]).min() for s in cache.steps), default=np.inf)


# The FM pairwise term sums 741 field pairs, so a large init scale drives
# logits to ~10; the loss then carries enough roundoff to swamp gradient
# coordinates near the checker's 1e-8 floor.
INIT_SCALE = {"lr": 0.5, "fm": 0.3, "deepfm": 0.3, "fignn": 0.5}


def gradcheck_instance(kind, seed, field_sizes=(3,) * N_FIELDS, batch=4, embed_dim=4, gnn_steps=2, init_scale=None):
    """A random small model + batch whose loss is smooth around the parameters."""
    init_scale = INIT_SCALE[kind] if init_scale is None else init_scale
    for attempt in range(10_000):
        rng = np.random.default_rng([seed, attempt])
        cfg = ModelConfig(kind, embed_dim=embed_dim, attention_heads=2, gnn_steps=gnn_steps,
                          mlp_hidden=(8, 4), init_scale=init_scale, seed=int(rng.integers(2**31)))
        state = init_model(cfg, field_sizes)
        b = random_batch(rng, field_sizes, batch)
        if kind == "deepfm" and _deepfm_margin(state, b) < KINK_MARGIN:
            continue
        if kind == "fignn" and _fignn_margin(state, b) < KINK_MARGIN:
            continue
        return state, b
    raise RuntimeError("no kink-free instance found")


def gradcheck(state, batch, eps=GRAD_EPS):
    return finite_diff_check(lambda p: loss_and_grad(p, state, batch), state.params, eps)
