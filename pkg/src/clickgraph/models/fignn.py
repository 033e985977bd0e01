"""FiGNN-lite: fields as nodes of a complete graph.

Pipeline for a batch of shape (B, F):

1. ``E = emb[idx] * x``                                  (B, F, k)
2. ``h0 = E + MHA(E)``  one multi-head self-attention layer with residual
3. for t in 1..T:
      ``e_ij = leaky_relu(h_i . a_src + h_j . a_dst)``, softmax over j != i
      ``m_j  = h_j @ W_edge[j]``                         per-node projection
      ``agg_i = sum_{j != i} w_ij m_j``
      ``h_i <- GRU(h_i, agg_i) + h0_i``
4. ``s_i = h_i . w_out + b_out``; ``alpha = softmax_i(h_i . w_pool)``;
   ``logit = sum_i alpha_i s_i``
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..data import N_FIELDS
from ..numerics import (
    GRU_KEYS,
    gru_cell_backward,
    gru_cell_forward,
    leaky_relu,
    leaky_relu_grad,
    multi_head_attention_backward,
    multi_head_attention_forward,
    softmax,
    softmax_backward,
)

LEAKY_SLOPE = 0.2
_OFF_DIAG = ~np.eye(N_FIELDS, dtype=bool)


def init_params(config, n_features, rng):
    from .base import uniform

    k, s = config.embed_dim, config.init_scale
    params = {"emb": uniform(rng, s, (n_features, k))}
    for key in ("q", "k", "v", "o"):
        params[f"att.{key}"] = uniform(rng, s, (k, k))
    params["edge.src"] = uniform(rng, s, k)
    params["edge.dst"] = uniform(rng, s, k)
    params["edge.W"] = uniform(rng, s, (N_FIELDS, k, k))
    for key in GRU_KEYS:
        shape = (k,) if key.startswith("b") else (k, k)
        params[f"gru.{key}"] = np.zeros(shape) if key.startswith("b") else uniform(rng, s, shape)
    params["out.w"] = uniform(rng, s, k)
    params["out.b"] = np.zeros(1)
    params["pool.w"] = uniform(rng, s, k)
    return params


def _attention_weights(params):
    return {key: params[f"att.{key}"] for key in ("q", "k", "v", "o")}


def _gru_weights(params):
    return {key: params[f"gru.{key}"] for key in GRU_KEYS}


@dataclass
class _Step:
    h: np.ndarray
    pre: np.ndarray
    weights: np.ndarray
    messages: np.ndarray
    gru_cache: tuple


@dataclass
class FiGNNCache:
    idx: np.ndarray
    vals: np.ndarray
    E: np.ndarray
    att_cache: tuple
    h0: np.ndarray
    steps: list
    h_final: np.ndarray
    scores: np.ndarray
    alpha: np.ndarray

    @property
    def edge_weights(self) -> list[np.ndarray]:
        """Per propagation step, the (B, F, F) matrix of edge weights w_ij."""
        return [step.weights for step in self.steps]

    @property
    def attention(self) -> np.ndarray:
        """Self-attention probabilities (B, heads, F, F)."""
        return self.att_cache[-1]


def forward(params, config, idx, vals):
    E = params["emb"][idx] * vals[..., None]
    y, att_cache = multi_head_attention_forward(E, _attention_weights(params), config.attention_heads)
    h0 = E + y
    gru_w = _gru_weights(params)
    h = h0
    steps = []
    for _ in range(config.gnn_steps):
        pre = (h @ params["edge.src"])[:, :, None] + (h @ params["edge.dst"])[:, None, :]
        weights = softmax(leaky_relu(pre, LEAKY_SLOPE), axis=-1, mask=_OFF_DIAG)
        messages = np.einsum("bjk,jkl->bjl", h, params["edge.W"])
        agg = weights @ messages
        h_gru, gru_cache = gru_cell_forward(h, agg, gru_w)
        steps.append(_Step(h, pre, weights, messages, gru_cache))
        h = h_gru + h0
    scores = h @ params["out.w"] + params["out.b"][0]
    alpha = softmax(h @ params["pool.w"], axis=-1)
    z = np.sum(alpha * scores, axis=1)
    return z, FiGNNCache(idx, vals, E, att_cache, h0, steps, h, scores, alpha)


def backward(params, config, cache: FiGNNCache, dz):
    grads = {name: np.zeros_like(p) for name, p in params.items() if name != "emb"}
    h, alpha, scores = cache.h_final, cache.alpha, cache.scores

    ds = dz[:, None] * alpha
    dbeta = softmax_backward(alpha, dz[:, None] * scores)
    grads["out.w"] = np.einsum("bf,bfk->k", ds, h)
    grads["out.b"] = np.array([ds.sum()])
    grads["pool.w"] = np.einsum("bf,bfk->k", dbeta, h)
    dh = ds[..., None] * params["out.w"] + dbeta[..., None] * params["pool.w"]

    gru_w = _gru_weights(params)
    dh0 = np.zeros_like(cache.h0)
    for step in reversed(cache.steps):
        dh0 += dh
        dh, dagg, g_gru = gru_cell_backward(dh, step.gru_cache, gru_w)
        for key, g in g_gru.items():
            grads[f"gru.{key}"] += g
        dweights = dagg @ np.swapaxes(step.messages, 1, 2)
        dmessages = np.swapaxes(step.weights, 1, 2) @ dagg
        grads["edge.W"] += np.einsum("bjk,bjl->jkl", step.h, dmessages)
        dh = dh + np.einsum("bjl,jkl->bjk", dmessages, params["edge.W"])
        dpre = softmax_backward(step.weights, dweights) * leaky_relu_grad(step.pre, LEAKY_SLOPE)
        dsrc = dpre.sum(axis=2)
        ddst = dpre.sum(axis=1)
        grads["edge.src"] += np.einsum("bf,bfk->k", dsrc, step.h)
        grads["edge.dst"] += np.einsum("bf,bfk->k", ddst, step.h)
        dh = dh + dsrc[..., None] * params["edge.src"] + ddst[..., None] * params["edge.dst"]
    dh0 += dh

    dE, g_att = multi_head_attention_backward(dh0, cache.att_cache, _attention_weights(params))
    dE = dE + dh0
    for key, g in g_att.items():
        grads[f"att.{key}"] = g
    g_emb = np.zeros_like(params["emb"])
    np.add.at(g_emb, cache.idx, dE * cache.vals[..., None])
    grads["emb"] = g_emb
    return grads
