"""Shared numeric primitives: normalization, softmax similarity, KL.

All functions are float64 and raise rather than return NaN on degenerate
input.  Probabilities are in nats throughout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyKeySet, IndexOutOfRange, LengthMismatch, ZeroVector

NORM_TOL = 1e-12


@dataclass(frozen=True)
class Temperatures:
    """Softmax temperatures for each similarity head."""

    pa: float = 0.5
    ia: float = 0.1
    cam: float = 0.07
    ps: float = 0.1
    is_: float = 0.2


def normalize(v: np.ndarray) -> np.ndarray:
    """Project a vector onto the unit sphere.  Raises ZeroVector below tolerance."""
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v)
    if n < NORM_TOL:
        raise ZeroVector("norm %.3e below tolerance" % n)
    return v / n


def normalize_rows(m: np.ndarray) -> np.ndarray:
    """Row-wise unit normalization of a 2-d array."""
    m = np.asarray(m, dtype=np.float64)
    norms = np.linalg.norm(m, axis=1)
    if np.any(norms < NORM_TOL):
        raise ZeroVector("row norm below tolerance")
    return m / norms[:, None]


def stable_softmax(logits: np.ndarray) -> np.ndarray:
    """Softmax along the last axis with max subtraction.

    Invariant under adding a constant to all logits, which keeps the
    exponentials bounded for any temperature.
    """
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_distribution(query: np.ndarray, keys: np.ndarray, temperature: float) -> np.ndarray:
    """Distribution over keys from temperature-scaled cosine similarities.

    query and keys are unit vectors; similarity is the plain dot product.
    """
    keys = np.asarray(keys, dtype=np.float64)
    if keys.ndim != 2 or keys.shape[0] == 0:
        raise EmptyKeySet("need at least one key")
    query = np.asarray(query, dtype=np.float64)
    return stable_softmax(keys @ query / temperature)


def softmax_similarity(
    query: np.ndarray, keys: np.ndarray, positive_index: int, temperature: float
) -> float:
    """Probability assigned to the positive key.

    Equals exp(q.k_pos / t) / sum_i exp(q.k_i / t), computed stably.
    """
    probs = softmax_distribution(query, keys, temperature)
    if not 0 <= positive_index < probs.shape[0]:
        raise IndexOutOfRange("positive index %d for %d keys" % (positive_index, probs.shape[0]))
    return float(probs[positive_index])


def kl_divergence(p: np.ndarray, r: np.ndarray) -> float:
    """KL(p || r) in nats with the 0 * log 0 = 0 convention.

    Parameters
    ----------
    p : array, the prediction distribution; entries may be exactly zero.
    r : array, the reference distribution; entries must be strictly positive.

    Nonnegative for any pair of distributions, zero iff p == r.
    """
    p = np.asarray(p, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    if p.shape != r.shape:
        raise LengthMismatch("p has shape %s, r has shape %s" % (p.shape, r.shape))
    if np.any(r <= 0.0):
        raise ValueError("reference distribution must be strictly positive")
    mask = p > 0.0
    return float(np.sum(p[mask] * (np.log(p[mask]) - np.log(r[mask]))))
