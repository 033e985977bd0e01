"""Logistic regression and the factorization machine.

With one active feature per field the FM logit is

    w0 + sum_f w[i_f] x_f + 1/2 sum_k [(sum_f v[i_f,k] x_f)^2 - sum_f v[i_f,k]^2 x_f^2]

which is the O(k n) form of the pairwise sum over distinct field pairs.
"""

from __future__ import annotations

from types import SimpleNamespace

import numpy as np


def _lr_init(config, n_features, rng):
    from .base import uniform

    return {"bias": np.zeros(1), "w": uniform(rng, config.init_scale, n_features)}


def _lr_forward(params, config, idx, vals):
    z = params["bias"][0] + np.sum(params["w"][idx] * vals, axis=1)
    return z, (idx, vals)


def _lr_backward(params, config, cache, dz):
    idx, vals = cache
    gw = np.zeros_like(params["w"])
    np.add.at(gw, idx, dz[:, None] * vals)
    return {"bias": np.array([dz.sum()]), "w": gw}


def fm_pairwise(emb: np.ndarray) -> np.ndarray:
    """Sum over field pairs f < g of <e_f, e_g>, for ``emb`` of shape (B, F, k)."""
    s = emb.sum(axis=1)
    return 0.5 * np.sum(s * s - np.sum(emb * emb, axis=1), axis=1)


def fm_pairwise_backward(emb: np.ndarray, dpair: np.ndarray) -> np.ndarray:
    # d/de_f of the pairwise term is (sum_g e_g) - e_f
    return dpair[:, None, None] * (emb.sum(axis=1, keepdims=True) - emb)


def _fm_init(config, n_features, rng):
    from .base import uniform

    params = _lr_init(config, n_features, rng)
    params["v"] = uniform(rng, config.init_scale, (n_features, config.embed_dim))
    return params


def _fm_forward(params, config, idx, vals):
    z_lin, _ = _lr_forward(params, config, idx, vals)
    emb = params["v"][idx] * vals[..., None]
    return z_lin + fm_pairwise(emb), (idx, vals, emb)


def _fm_backward(params, config, cache, dz):
    idx, vals, emb = cache
    grads = _lr_backward(params, config, (idx, vals), dz)
    gv = np.zeros_like(params["v"])
    np.add.at(gv, idx, fm_pairwise_backward(emb, dz) * vals[..., None])
    grads["v"] = gv
    return grads


LR = SimpleNamespace(init_params=_lr_init, forward=_lr_forward, backward=_lr_backward)
FM = SimpleNamespace(init_params=_fm_init, forward=_fm_forward, backward=_fm_backward)
