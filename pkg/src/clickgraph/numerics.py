"""Dense kernels shared by every model: activations, softmax, GRU cell,
multi-head self-attention, the Adam optimizer and a finite-difference
gradient checker.

Everything works on float64 numpy arrays using the row-vector convention
``y = x @ W`` with ``W`` of shape ``(in, out)``.  Forward functions that are
needed for training come in ``*_forward`` / ``*_backward`` pairs; the forward
returns a cache consumed by the backward.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

Params = dict[str, np.ndarray]

GRU_KEYS = ("Wz", "Uz", "bz", "Wr", "Ur", "br", "Wh", "Uh", "bh")
ATTENTION_KEYS = ("q", "k", "v", "o")


class ShapeError(ValueError):
    """Raised when array dimensions are inconsistent."""


# --------------------------------------------------------------------------
# activations
# --------------------------------------------------------------------------


def sigmoid(x):
    """Logistic function, stable for any finite input (no overflow warnings)."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def leaky_relu(x: np.ndarray, slope: float = 0.2) -> np.ndarray:
    return np.where(x > 0, x, slope * x)


def leaky_relu_grad(x: np.ndarray, slope: float = 0.2) -> np.ndarray:
    return np.where(x > 0, 1.0, slope)


def softmax(x: np.ndarray, axis: int = -1, mask: np.ndarray | None = None) -> np.ndarray:
    """Softmax along ``axis``.

    ``mask`` (broadcastable, True = keep) excludes entries: they receive
    exactly zero weight.  Every slice must keep at least one entry.
    """
    x = np.asarray(x, dtype=np.float64)
    if mask is not None:
        x = np.where(mask, x, -np.inf)
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def softmax_backward(p: np.ndarray, dp: np.ndarray, axis: int = -1) -> np.ndarray:
    """Gradient w.r.t. the logits given the softmax output ``p`` and upstream ``dp``."""
    return p * (dp - np.sum(dp * p, axis=axis, keepdims=True))


# --------------------------------------------------------------------------
# GRU
# --------------------------------------------------------------------------


def _check_gru(h: np.ndarray, a: np.ndarray, w: Mapping[str, np.ndarray]) -> None:
    missing = [key for key in GRU_KEYS if key not in w]
    if missing:
        raise ShapeError(f"GRU weights missing {missing}")
    k = h.shape[-1]
    n_in = a.shape[-1]
    if h.shape[:-1] != a.shape[:-1]:
        raise ShapeError(f"state {h.shape} and input {a.shape} disagree on leading dims")
    for gate in "zrh":
        if w["W" + gate].shape != (n_in, k):
            raise ShapeError(f"W{gate} must be {(n_in, k)}, got {w['W' + gate].shape}")
        if w["U" + gate].shape != (k, k):
            raise ShapeError(f"U{gate} must be {(k, k)}, got {w['U' + gate].shape}")
        if w["b" + gate].shape != (k,):
            raise ShapeError(f"b{gate} must be {(k,)}, got {w['b' + gate].shape}")


def gru_cell_forward(h: np.ndarray, a: np.ndarray, w: Mapping[str, np.ndarray]):
    """One GRU update of state ``h`` with input ``a``; returns ``(h_new, cache)``.

    z = sigmoid(a Wz + h Uz + bz)
    r = sigmoid(a Wr + h Ur + br)
    n = tanh(a Wh + (r * h) Uh + bh)
    h_new = (1 - z) * h + z * n
    """
    h = np.asarray(h, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    _check_gru(h, a, w)
    z = sigmoid(a @ w["Wz"] + h @ w["Uz"] + w["bz"])
    r = sigmoid(a @ w["Wr"] + h @ w["Ur"] + w["br"])
    rh = r * h
    n = np.tanh(a @ w["Wh"] + rh @ w["Uh"] + w["bh"])
    h_new = (1.0 - z) * h + z * n
    return h_new, (h, a, z, r, rh, n)


def gru_cell(h: np.ndarray, a: np.ndarray, w: Mapping[str, np.ndarray]) -> np.ndarray:
    return gru_cell_forward(h, a, w)[0]


def gru_cell_backward(dh_new: np.ndarray, cache, w: Mapping[str, np.ndarray]):
    """Returns ``(dh, da, grads)`` where ``grads`` is keyed like the weights."""
    h, a, z, r, rh, n = cache
    k = h.shape[-1]
    h2 = h.reshape(-1, k)
    a2 = a.reshape(-1, a.shape[-1])
    rh2 = rh.reshape(-1, k)

    dz = dh_new * (n - h)
    dn = dh_new * z
    dh = dh_new * (1.0 - z)

    dn_pre = (dn * (1.0 - n * n)).reshape(-1, k)
    drh = dn_pre @ w["Uh"].T
    dr = drh.reshape(h.shape) * h
    dh = dh + drh.reshape(h.shape) * r
    dr_pre = (dr * r * (1.0 - r)).reshape(-1, k)
    dz_pre = (dz * z * (1.0 - z)).reshape(-1, k)

    grads = {
        "Wh": a2.T @ dn_pre,
        "Uh": rh2.T @ dn_pre,
        "bh": dn_pre.sum(axis=0),
        "Wr": a2.T @ dr_pre,
        "Ur": h2.T @ dr_pre,
        "br": dr_pre.sum(axis=0),
        "Wz": a2.T @ dz_pre,
        "Uz": h2.T @ dz_pre,
        "bz": dz_pre.sum(axis=0),
    }
    da = dn_pre @ w["Wh"].T + dr_pre @ w["Wr"].T + dz_pre @ w["Wz"].T
    dh = dh + (dr_pre @ w["Ur"].T + dz_pre @ w["Uz"].T).reshape(h.shape)
    return dh, da.reshape(a.shape), grads


# --------------------------------------------------------------------------
# multi-head self-attention
# --------------------------------------------------------------------------


def _split_heads(x: np.ndarray, heads: int) -> np.ndarray:
    # (..., n, k) -> (..., heads, n, d)
    *lead, n, k = x.shape
    return np.moveaxis(x.reshape(*lead, n, heads, k // heads), -2, -3)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    # (..., heads, n, d) -> (..., n, k)
    x = np.moveaxis(x, -3, -2)
    *lead, n, heads, d = x.shape
    return x.reshape(*lead, n, heads * d)


def multi_head_attention_forward(X: np.ndarray, w: Mapping[str, np.ndarray], heads: int):
    """Scaled dot-product self-attention over the rows of ``X``.

    ``X`` is ``(n, k)`` or batched ``(B, n, k)``.  Per head,
    ``softmax(Q K^T / sqrt(d)) V`` with ``d = k / heads``; heads are
    concatenated and projected by ``w["o"]``.  Returns ``(Y, cache)``; the
    attention probabilities are ``cache[-1]`` with shape ``(..., heads, n, n)``.
    """
    X = np.asarray(X, dtype=np.float64)
    k = X.shape[-1]
    if heads < 1 or k % heads:
        raise ShapeError(f"embedding size {k} not divisible by {heads} heads")
    for key in ATTENTION_KEYS:
        if w[key].shape != (k, k):
            raise ShapeError(f"attention weight {key!r} must be {(k, k)}, got {w[key].shape}")
    d = k // heads
    Q = _split_heads(X @ w["q"], heads)
    K = _split_heads(X @ w["k"], heads)
    V = _split_heads(X @ w["v"], heads)
    P = softmax(Q @ np.swapaxes(K, -1, -2) / np.sqrt(d), axis=-1)
    O = _merge_heads(P @ V)
    return O @ w["o"], (X, Q, K, V, O, P)


def multi_head_attention(X: np.ndarray, w: Mapping[str, np.ndarray], heads: int) -> np.ndarray:
    return multi_head_attention_forward(X, w, heads)[0]


def multi_head_attention_backward(dY: np.ndarray, cache, w: Mapping[str, np.ndarray]):
    """Returns ``(dX, grads)`` for :func:`multi_head_attention_forward`."""
    X, Q, K, V, O, P = cache
    heads = P.shape[-3]
    k = X.shape[-1]
    d = k // heads
    flat = lambda arr: arr.reshape(-1, k)  # noqa: E731

    grads = {"o": flat(O).T @ flat(dY)}
    dO = _split_heads(dY @ w["o"].T, heads)
    dP = dO @ np.swapaxes(V, -1, -2)
    dV = np.swapaxes(P, -1, -2) @ dO
    dS = softmax_backward(P, dP) / np.sqrt(d)
    dQ = _merge_heads(dS @ K)
    dK = _merge_heads(np.swapaxes(dS, -1, -2) @ Q)
    dV = _merge_heads(dV)
    grads["q"] = flat(X).T @ flat(dQ)
    grads["k"] = flat(X).T @ flat(dK)
    grads["v"] = flat(X).T @ flat(dV)
    dX = dQ @ w["q"].T + dK @ w["k"].T + dV @ w["v"].T
    return dX, grads


# --------------------------------------------------------------------------
# Adam
# --------------------------------------------------------------------------


@dataclass
class AdamState:
    """First/second moment accumulators keyed like the parameters."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: Params = field(default_factory=dict)
    v: Params = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: Mapping[str, np.ndarray], **hyper) -> "AdamState":
        state = cls(**hyper)
        state.m = {name: np.zeros_like(p) for name, p in params.items()}
        state.v = {name: np.zeros_like(p) for name, p in params.items()}
        return state

    def copy(self) -> "AdamState":
        return AdamState(
            self.lr, self.beta1, self.beta2, self.eps, self.t,
            {n: a.copy() for n, a in self.m.items()},
            {n: a.copy() for n, a in self.v.items()},
        )


def adam_update(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray], state: AdamState):
    """One bias-corrected Adam step.

    Pure: returns ``(new_params, new_state)`` and leaves the inputs untouched.
    Moments missing from ``state`` are created as zeros.
    """
    if set(params) != set(grads):
        raise ShapeError(f"parameter/gradient keys differ: {sorted(set(params) ^ set(grads))}")
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    new_params, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {name!r} has shape {g.shape}, parameter {p.shape}")
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1.0 - b1) * g if m is None else b1 * m + (1.0 - b1) * g
        v = (1.0 - b2) * g * g if v is None else b2 * v + (1.0 - b2) * g * g
        new_params[name] = p - state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        new_m[name] = m
        new_v[name] = v
    return new_params, AdamState(state.lr, b1, b2, state.eps, t, new_m, new_v)


# --------------------------------------------------------------------------
# gradient checking
# --------------------------------------------------------------------------


def finite_diff_check(
    loss_fn: Callable[[Params], tuple[float, Mapping[str, np.ndarray]]],
    params: Mapping[str, np.ndarray],
    epsilon: float = 1e-6,
    *,
    max_coords: int | None = None,
    seed: int = 0,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss_fn(params)`` must return ``(loss, grads)``.  For every checked
    coordinate the error is ``|g - n| / max(1e-8, |g| + |n|)`` with
    ``n = (f(p + eps) - f(p - eps)) / (2 eps)``.  ``max_coords`` caps the
    number of coordinates checked per parameter (sampled under ``seed``, with
    coordinates carrying a nonzero analytic gradient preferred).
    """
    work = {name: np.array(p, dtype=np.float64, copy=True) for name, p in params.items()}
    loss, grads = loss_fn(work)
    if not np.isfinite(loss):
        raise FloatingPointError(f"loss is not finite: {loss}")
    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, p in work.items():
        analytic = np.asarray(grads[name], dtype=np.float64)
        flat = p.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            hot = coords[analytic.reshape(-1) != 0]
            cold = coords[analytic.reshape(-1) == 0]
            take_hot = min(hot.size, max_coords)
            coords = np.concatenate([
                rng.choice(hot, take_hot, replace=False),
                rng.choice(cold, min(cold.size, max_coords - take_hot), replace=False),
            ])
        for i in coords:
            orig = flat[i]
            flat[i] = orig + epsilon
            f_plus = loss_fn(work)[0]
            flat[i] = orig - epsilon
            f_minus = loss_fn(work)[0]
            flat[i] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise FloatingPointError(f"loss became non-finite perturbing {name}[{i}]")
            numeric = (f_plus - f_minus) / (2.0 * epsilon)
            g = analytic.reshape(-1)[i]
            err = abs(g - numeric) / max(1e-8, abs(g) + abs(numeric))
            worst = max(worst, err)
    return worst
