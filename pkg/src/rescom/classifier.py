"""Balanced Softmax and its two-view (Siamese) average."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import log_sum_exp


@dataclass
class ClassifierLoss:
    value: float
    grad: np.ndarray


@dataclass
class SiameseLoss:
    value: float
    grad_view1: np.ndarray
    grad_view2: np.ndarray


def _log_counts(profile):
    counts = profile.as_array() if hasattr(profile, "as_array") else np.asarray(profile, dtype=np.float64)
    if counts.shape[0] < 2:
        raise ValueError("balanced softmax needs at least two classes")
    if np.any(counts < 1):
        raise ValueError("class counts must be >= 1")
    return np.log(counts)


def balanced_softmax_loss(logits, label, profile):
    """Cross-entropy on prior-adjusted logits ``s_k + log N_k``.

    Gradient w.r.t. the raw logits is ``softmax(s + log N) - onehot(label)``.
    """
    s = np.asarray(logits, dtype=np.float64).reshape(-1)
    adj = s + _log_counts(profile)
    if adj.shape != s.shape:
        raise ValueError("logit length does not match the number of classes")
    lse = log_sum_exp(adj)
    p = np.exp(adj - lse)
    grad = p.copy()
    grad[label] -= 1.0
    return ClassifierLoss(float(lse - adj[label]), grad)


def siambs_loss(logits1, logits2, label, profile):
    """Half the sum of the two views' balanced-softmax losses."""
    s1 = np.asarray(logits1, dtype=np.float64).reshape(-1)
    s2 = np.asarray(logits2, dtype=np.float64).reshape(-1)
    if s1.shape != s2.shape:
        raise ValueError("the two views must have the same number of classes")
    a = balanced_softmax_loss(s1, label, profile)
    b = balanced_softmax_loss(s2, label, profile)
    return SiameseLoss(0.5 * (a.value + b.value), 0.5 * a.grad, 0.5 * b.grad)


def balanced_softmax_batch(logits, labels, profile):
    """Batch-mean balanced softmax; returns ``(mean, grad / B, per_sample)``."""
    s = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    adj = s + _log_counts(profile)[None, :]
    m = adj.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(adj - m).sum(axis=1))
    rows = np.arange(s.shape[0])
    values = lse - adj[rows, labels]
    grad = np.exp(adj - lse[:, None])
    grad[rows, labels] -= 1.0
    return float(values.mean()), grad / s.shape[0], values


def siambs_batch(logits1, logits2, labels, profile):
    v1, g1, _ = balanced_softmax_batch(logits1, labels, profile)
    v2, g2, _ = balanced_softmax_batch(logits2, labels, profile)
    return 0.5 * (v1 + v2), 0.5 * g1, 0.5 * g2
