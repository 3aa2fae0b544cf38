"""Numerically stable kernels shared by the loss, queue and model code."""

from __future__ import annotations

from typing import Callable

import numpy as np


class DegenerateEmbeddingError(ValueError):
    """Raised when a zero-norm vector is asked to be projected on the sphere."""


def l2_normalize(v):
    """Project ``v`` (or each row of a 2-D array) onto the unit sphere."""
    v = np.asarray(v, dtype=np.float64)
    norms = np.linalg.norm(v, axis=-1, keepdims=True)
    if not np.all(np.isfinite(v)):
        raise ValueError("cannot normalize a vector with non-finite entries")
    if np.any(norms == 0.0):
        raise DegenerateEmbeddingError("cannot normalize a zero-norm vector")
    return v / norms


def log_sum_exp(xs, axis=None):
    """``log(sum(exp(xs)))`` with a max shift.

    Constant inputs are exact: the shifted terms are all ``exp(0) = 1``.
    """
    xs = np.asarray(xs, dtype=np.float64)
    if xs.size == 0:
        raise ValueError("log_sum_exp of an empty sequence")
    if not np.all(np.isfinite(xs)):
        raise ValueError("log_sum_exp requires finite inputs")
    m = np.max(xs, axis=axis, keepdims=True)
    out = m + np.log(np.sum(np.exp(xs - m), axis=axis, keepdims=True))
    if axis is None:
        return float(out.reshape(()))
    return np.squeeze(out, axis=axis)


def softmax(xs, axis=-1):
    xs = np.asarray(xs, dtype=np.float64)
    shifted = xs - np.max(xs, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def top_k_indices(scores, k, order="largest"):
    """Indices of the ``k`` most extreme scores.

    Ties go to the smaller original index, and the result is ordered by
    extremity first, index second, so top-k sets are nested in ``k``.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 1:
        raise ValueError("scores must be one-dimensional")
    n = scores.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k={k} out of range for {n} scores")
    if order == "largest":
        idx = np.argsort(-scores, kind="stable")
    elif order == "smallest":
        idx = np.argsort(scores, kind="stable")
    else:
        raise ValueError(f"unknown order {order!r}")
    return idx[:k]


def top_k_rows(scores, k, order="largest", valid=None):
    """Row-wise :func:`top_k_indices` for a 2-D score matrix.

    ``valid`` masks out candidates; every row must keep at least ``k`` of them.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if order == "largest":
        keyed = -scores
    elif order == "smallest":
        keyed = scores.copy()
    else:
        raise ValueError(f"unknown order {order!r}")
    if valid is not None:
        counts = valid.sum(axis=1)
        if np.any(counts < k):
            raise ValueError(f"fewer than k={k} candidates in some row")
        keyed = np.where(valid, keyed, np.inf)
    elif not 1 <= k <= scores.shape[1]:
        raise ValueError(f"k={k} out of range for {scores.shape[1]} columns")
    return np.argsort(keyed, axis=1, kind="stable")[:, :k]


def default_step(x) -> float:
    return 1e-4 * max(1.0, float(np.max(np.abs(x))) if np.size(x) else 1.0)


def finite_difference_gradient(f: Callable[[np.ndarray], float], x, h: float | None = None):
    """Central-difference gradient of a scalar function ``f`` at ``x``."""
    x = np.array(x, dtype=np.float64)
    if h is None:
        h = default_step(x)
    if h <= 0:
        raise ValueError("step h must be positive")
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError(f"non-finite function value at coordinate {i}")
        g[i] = (fp - fm) / (2.0 * h)
    return grad


def relative_error(a, b, floor: float = 1e-12) -> float:
    """Norm-wise relative discrepancy ``|a - b| / max(|a|, |b|)``."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    scale = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return float(np.linalg.norm(a - b) / scale)
