"""Synthetic Criteo-format corpora.

``xor_records`` plants a pure second-order signal (the label is the XOR of
two categorical fields); ``criteo_like_records`` draws labels from a
latent-factor click model over Zipf-distributed tokens with missing values,
giving data with the same shape as the public sample.  Neither is a
substitute for real Criteo traffic.
"""

from __future__ import annotations

import numpy as np

from .data import N_CAT, N_INT, RawRecord, transform_numeric
from .numerics import sigmoid


def xor_records(n: int, seed: int = 0, noise_vocab: int = 4, fields: tuple[int, int] = (0, 1)) -> list[RawRecord]:
    """Label = XOR of two binary categorical fields; every other field is noise."""
    rng = np.random.default_rng(seed)
    a = rng.integers(0, 2, n)
    b = rng.integers(0, 2, n)
    noise_cat = rng.integers(0, noise_vocab, (n, N_CAT))
    noise_int = rng.integers(0, 50, (n, N_INT))
    records = []
    for i in range(n):
        cats = [f"n{c}_{noise_cat[i, c]}" for c in range(N_CAT)]
        cats[fields[0]] = f"a{a[i]}"
        cats[fields[1]] = f"b{b[i]}"
        records.append(RawRecord(int(a[i] ^ b[i]), tuple(int(v) for v in noise_int[i]), tuple(cats)))
    return records


def criteo_like_records(
    n: int,
    seed: int = 0,
    base_ctr: float = 0.25,
    latent_dim: int = 4,
    interaction_scale: float = 0.6,
    first_order_scale: float = 0.5,
    missing_rate: float = 0.15,
) -> list[RawRecord]:
    """Labels drawn from ``sigmoid(b + sum_f w_f + sum_{f<g} <u_f, u_g>)``.

    Categorical fields have between 3 and 300 tokens drawn with Zipf-like
    popularity; integer fields are log-normal counts whose discretised
    bucket carries the weight.  The bias is solved so that the mean click
    rate is close to ``base_ctr``.
    """
    rng = np.random.default_rng(seed)
    cat_sizes = rng.integers(3, 300, N_CAT)
    cat_tokens, cat_probs = [], []
    for size in cat_sizes:
        cat_tokens.append([f"{rng.integers(0, 2**32):08x}" for _ in range(size)])
        p = 1.0 / np.arange(1, size + 1) ** 1.1
        cat_probs.append(p / p.sum())
    int_mu = rng.uniform(0.5, 4.0, N_INT)

    weights: dict[tuple[int, str], tuple[float, np.ndarray]] = {}
    active = rng.random(N_INT + N_CAT) < 0.5  # fields that carry signal

    def lookup(f: int, token: str):
        key = (f, token)
        if key not in weights:
            if active[f]:
                weights[key] = (
                    rng.normal(0, first_order_scale),
                    rng.normal(0, interaction_scale / np.sqrt(latent_dim), latent_dim),
                )
            else:
                weights[key] = (0.0, np.zeros(latent_dim))
        return weights[key]

    int_vals = np.floor(np.exp(rng.normal(int_mu, 1.2, (n, N_INT)))).astype(np.int64)
    int_missing = rng.random((n, N_INT)) < missing_rate
    cat_idx = np.stack([rng.choice(len(p), n, p=p) for p in cat_probs], axis=1)
    cat_missing = rng.random((n, N_CAT)) < missing_rate

    rows, logits = [], np.empty(n)
    for i in range(n):
        ints = tuple(None if int_missing[i, j] else int(int_vals[i, j]) for j in range(N_INT))
        cats = tuple(None if cat_missing[i, c] else cat_tokens[c][cat_idx[i, c]] for c in range(N_CAT))
        z, total = 0.0, np.zeros(latent_dim)
        sq = 0.0
        for f, tok in enumerate([transform_numeric(v) for v in ints] + [c or "<na>" for c in cats]):
            w, u = lookup(f, tok)
            z += w
            total += u
            sq += u @ u
        logits[i] = z + 0.5 * (total @ total - sq)
        rows.append((ints, cats))

    # shift so the mean click probability matches base_ctr
    lo, hi = -20.0, 20.0
    for _ in range(60):
        mid = (lo + hi) / 2
        if np.mean(sigmoid(logits + mid)) > base_ctr:
            hi = mid
        else:
            lo = mid
    labels = (rng.random(n) < sigmoid(logits + (lo + hi) / 2)).astype(int)
    return [RawRecord(int(y), ints, cats) for y, (ints, cats) in zip(labels, rows)]
