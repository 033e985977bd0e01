"""DeepFM-lite: an FM and a ReLU MLP reading the same embedding table.

logit = FM logit + MLP(concat_f v[i_f] x_f)
"""

from __future__ import annotations

import numpy as np

from ..data import N_FIELDS
from . import linear


def init_params(config, n_features, rng):
    from .base import uniform

    params = linear.FM.init_params(config, n_features, rng)
    widths = [N_FIELDS * config.embed_dim, *config.mlp_hidden, 1]
    for layer, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
        params[f"mlp.W{layer}"] = uniform(rng, config.init_scale, (fan_in, fan_out))
        params[f"mlp.b{layer}"] = np.zeros(fan_out)
    return params


def _n_layers(config) -> int:
    return len(config.mlp_hidden) + 1


def forward(params, config, idx, vals):
    z_fm, fm_cache = linear.FM.forward(params, config, idx, vals)
    emb = fm_cache[2]
    x = emb.reshape(len(idx), -1)
    acts = [x]
    n = _n_layers(config)
    for layer in range(n):
        x = x @ params[f"mlp.W{layer}"] + params[f"mlp.b{layer}"]
        if layer < n - 1:
            x = np.maximum(x, 0.0)
        acts.append(x)
    return z_fm + x[:, 0], (fm_cache, acts)


def mlp_logit(params, config, idx, vals) -> np.ndarray:
    """The deep component alone (used to check that both halves share embeddings)."""
    z, (fm_cache, acts) = forward(params, config, idx, vals)
    return acts[-1][:, 0]


def backward(params, config, cache, dz):
    fm_cache, acts = cache
    idx, vals, emb = fm_cache
    grads = linear.FM.backward(params, config, fm_cache, dz)
    delta = dz[:, None]
    for layer in reversed(range(_n_layers(config))):
        grads[f"mlp.W{layer}"] = acts[layer].T @ delta
        grads[f"mlp.b{layer}"] = delta.sum(axis=0)
        delta = delta @ params[f"mlp.W{layer}"].T
        if layer > 0:
            delta = delta * (acts[layer] > 0)
    demb = delta.reshape(emb.shape) * vals[..., None]
    np.add.at(grads["v"], idx, demb)
    return grads
