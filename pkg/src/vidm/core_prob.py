"""Finite-probability primitives.

Distributions are plain numpy arrays whose last axis is a probability
simplex. A 1-D array is a categorical distribution; an array of shape
``(..., K)`` is a conditional table with one categorical row per leading
index. The validators below renormalize rounding noise and reject arrays
that are off the simplex by more than ``CONSTRUCT_TOL``.

Random streams come from numpy's PCG64 generator seeded through a
``SeedSequence`` built from the integer seed and a hash of string labels,
so independent parts of an experiment can draw from separate, reproducible
streams.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .errors import EmptyInput, InvalidDistribution, SupportViolation

SIMPLEX_TOL = 1e-12
CONSTRUCT_TOL = 1e-9

__all__ = [
    "SIMPLEX_TOL",
    "CONSTRUCT_TOL",
    "categorical",
    "conditional_table",
    "uniform",
    "kl_divergence",
    "kl_rows",
    "entropy",
    "log_sum_exp",
    "normalize_log",
    "make_rng",
    "sample_categorical",
    "draw_rows",
]


def _as_simplex(p, name):
    arr = np.array(p, dtype=float)
    if arr.ndim == 0 or arr.shape[-1] == 0:
        raise InvalidDistribution(f"{name} must have a non-empty last axis")
    if not np.all(np.isfinite(arr)):
        raise InvalidDistribution(f"{name} has non-finite entries")
    if np.any(arr < -CONSTRUCT_TOL):
        raise InvalidDistribution(f"{name} has negative entries")
    arr = np.clip(arr, 0.0, None)
    sums = arr.sum(axis=-1, keepdims=True)
    if np.any(np.abs(sums - 1.0) > CONSTRUCT_TOL):
        worst = float(np.max(np.abs(sums - 1.0)))
        raise InvalidDistribution(f"{name} rows deviate from 1 by {worst:.3g}")
    arr = arr / sums
    arr.setflags(write=False)
    return arr


def categorical(p) -> np.ndarray:
    """Validate and renormalize a probability vector.

    Returns a read-only float array. Raises ``InvalidDistribution`` if the
    input is not 1-D or deviates from the simplex by more than 1e-9.
    """
    arr = _as_simplex(p, "categorical")
    if arr.ndim != 1:
        raise InvalidDistribution(f"categorical must be 1-D, got shape {arr.shape}")
    return arr


def conditional_table(p, shape=None) -> np.ndarray:
    """Validate a table of categorical rows (last axis is the outcome).

    If ``shape`` is given the table must match it exactly, which is how the
    row set is checked to cover the declared condition domain.
    """
    arr = _as_simplex(p, "conditional table")
    if shape is not None and arr.shape != tuple(shape):
        raise InvalidDistribution(f"expected table of shape {tuple(shape)}, got {arr.shape}")
    return arr


def uniform(n: int) -> np.ndarray:
    return categorical(np.full(n, 1.0 / n))


def kl_rows(q, p) -> np.ndarray:
    """KL(q || p) along the last axis, broadcasting leading axes.

    Uses 0 ln 0 = 0. Raises ``SupportViolation`` if q has mass outside the
    support of p.
    """
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    q, p = np.broadcast_arrays(q, p)
    pos = q > 0
    if np.any(pos & (p <= 0)):
        raise SupportViolation("support(q) is not contained in support(p)")
    terms = np.zeros(q.shape)
    terms[pos] = q[pos] * (np.log(q[pos]) - np.log(p[pos]))
    # clip tiny negative rounding; KL is non-negative
    return np.maximum(terms.sum(axis=-1), 0.0)


def kl_divergence(q, p) -> float:
    """KL(q || p) for two categoricals on the same index set."""
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    if q.shape != p.shape or q.ndim != 1:
        raise InvalidDistribution(f"shape mismatch: {q.shape} vs {p.shape}")
    return float(kl_rows(q, p))


def entropy(p) -> np.ndarray:
    """Shannon entropy in nats along the last axis."""
    p = np.asarray(p, dtype=float)
    terms = np.zeros(p.shape)
    pos = p > 0
    terms[pos] = -p[pos] * np.log(p[pos])
    return terms.sum(axis=-1)


def log_sum_exp(xs, axis=None):
    """ln sum exp(xs), shifted by the maximum so large inputs do not overflow.

    ``-inf`` entries are allowed (they contribute zero mass). With
    ``axis=None`` the whole array is reduced and a float is returned.
    """
    xs = np.asarray(xs, dtype=float)
    if xs.size == 0:
        raise EmptyInput("log_sum_exp of an empty array")
    if np.any(np.isnan(xs)) or np.any(xs == np.inf):
        raise ValueError("log_sum_exp needs finite inputs or -inf")
    m = np.max(xs, axis=axis, keepdims=True)
    m_safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(xs - m_safe), axis=axis, keepdims=True)) + m_safe
    if axis is None:
        return float(out.reshape(()))
    return np.squeeze(out, axis=axis)


def normalize_log(log_w, axis=-1) -> np.ndarray:
    """Turn unnormalized log weights into probabilities along ``axis``."""
    log_w = np.asarray(log_w, dtype=float)
    lse = log_sum_exp(log_w, axis=axis)
    with np.errstate(invalid="ignore"):
        p = np.exp(log_w - np.expand_dims(lse, axis))
    return p / p.sum(axis=axis, keepdims=True)


def _label_words(label: str) -> list[int]:
    digest = hashlib.blake2b(label.encode("utf-8"), digest_size=8).digest()
    return [int.from_bytes(digest[:4], "little"), int.from_bytes(digest[4:], "little")]


def make_rng(seed: int, *labels) -> np.random.Generator:
    """PCG64 generator for the stream identified by ``(seed, *labels)``.

    Labels may be strings or non-negative ints; the same seed and labels
    always give the same stream.
    """
    seed = int(seed)
    if seed < 0 or seed >= 2**64:
        raise ValueError("seed must be a 64-bit unsigned integer")
    entropy_words = [seed & 0xFFFFFFFF, seed >> 32]
    for label in labels:
        if isinstance(label, (int, np.integer)):
            entropy_words += [int(label) & 0xFFFFFFFF, int(label) >> 32]
        else:
            entropy_words += _label_words(str(label))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy_words)))


def sample_categorical(d, seed, size=None):
    """Draw index i with probability d[i] by inverse-CDF sampling.

    ``seed`` is either an int (a fresh stream is derived) or an existing
    ``numpy.random.Generator``. Returns an int, or an int array if ``size``
    is given.
    """
    d = np.asarray(d, dtype=float)
    rng = seed if isinstance(seed, np.random.Generator) else make_rng(seed, "sample_categorical")
    cdf = np.cumsum(d)
    cdf[-1] = 1.0
    u = rng.random(size)
    idx = np.searchsorted(cdf, u, side="right")
    # zero-probability trailing entries must never be drawn
    last = int(np.flatnonzero(d > 0)[-1])
    idx = np.minimum(idx, last)
    if size is None:
        return int(idx)
    return idx.astype(int)


def draw_rows(probs, rng: np.random.Generator) -> np.ndarray:
    """Inverse-CDF draw of one index per row of a (n, K) probability array."""
    cdf = np.cumsum(probs, axis=1)
    u = rng.random(probs.shape[0]) * cdf[:, -1]
    idx = np.sum(cdf <= u[:, None], axis=1)
    return np.minimum(idx, probs.shape[1] - 1)
