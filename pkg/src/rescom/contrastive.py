"""Queue-based supervised contrastive losses with analytical query gradients.

All losses take a unit-norm query ``z`` and keys from a memory; similarities
are dot products scaled by ``1 / temperature``. Gradients are with respect to
the raw query vector (the L2-normalization Jacobian is applied by the model).
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .numerics import log_sum_exp, top_k_indices, top_k_rows
from .queue import QueueError


@dataclass(frozen=True)
class ContrastiveConfig:
    """Temperature, effective-number ``beta`` and hard-pair mining counts.

    ``qp`` / ``qn`` of ``None`` mean "all positives" / "all negatives", which
    turns pair mining into the plain balanced-queue loss.
    """

    temperature: float = 0.2
    beta: float = 0.0
    qp: int | None = None
    qn: int | None = None

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        if not 0.0 <= self.beta < 1.0:
            raise ValueError("beta must lie in [0, 1)")
        if self.qp is not None and self.qp < 1:
            raise ValueError("qp must be >= 1")
        if self.qn is not None and self.qn < 1:
            raise ValueError("qn must be >= 1")

    def mining_counts(self, n_classes, queue_size):
        qp = queue_size if self.qp is None else self.qp
        qn = (n_classes - 1) * queue_size if self.qn is None else self.qn
        if not 1 <= qp <= queue_size:
            raise ValueError(f"qp={qp} must lie in [1, Q={queue_size}]")
        if not 1 <= qn <= (n_classes - 1) * queue_size:
            raise ValueError(f"qn={qn} must lie in [1, (K-1)Q={(n_classes - 1) * queue_size}]")
        return qp, qn


@dataclass
class LossResult:
    value: float
    grad_query: np.ndarray


@dataclass
class BatchLoss:
    """Batch-mean loss, its gradient w.r.t. each query row, and per-query values."""

    value: float
    grad: np.ndarray
    per_sample: np.ndarray
    mined: np.ndarray | None = None


def class_weight(beta, class_count):
    """Inverse effective number ``(1 - beta) / (1 - beta**N)``.

    ``beta = 0`` gives 1 for every class; ``beta -> 1`` tends to ``1 / N``.
    Works elementwise on arrays of counts.
    """
    if not 0.0 <= beta < 1.0:
        raise ValueError("beta must lie in [0, 1)")
    n = np.asarray(class_count, dtype=np.float64)
    if np.any(n < 1):
        raise ValueError("class counts must be >= 1")
    if beta == 0.0:
        w = np.ones_like(n)
    else:
        gap = 1.0 - beta
        # 1 - beta**N via expm1/log1p: stays accurate when beta is within 1e-9 of 1
        w = gap / -np.expm1(n * np.log1p(-gap))
    return float(w) if w.ndim == 0 else w


def _weight(profile, label, cfg):
    if profile is None:
        return 1.0
    return class_weight(cfg.beta, profile.counts[label])


def _query(z):
    z = np.asarray(z, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(z)):
        raise ValueError("query must be finite")
    return z


def _masked_loss(z, keys, pos_mask, tau, weight):
    """Mean positive log-likelihood under a softmax over ``keys``."""
    n_pos = int(pos_mask.sum())
    if n_pos == 0:
        raise ValueError("no positive key for this query; the loss is undefined")
    logits = keys @ z / tau
    lse = log_sum_exp(logits)
    p = np.exp(logits - lse)
    value = -weight * float(np.sum(logits[pos_mask] - lse)) / n_pos
    coef = p - pos_mask / n_pos
    grad = (weight / tau) * (keys.T @ coef)
    return LossResult(value, grad)


def supcon_queue_loss(query, label, keys, key_labels, cfg):
    """Supervised contrastive loss of one query against a key queue.

    Positives are the queue keys sharing ``label``; the denominator runs over
    every queue key.
    """
    z = _query(query)
    keys = np.asarray(keys, dtype=np.float64)
    key_labels = np.asarray(key_labels)
    return _masked_loss(z, keys, key_labels == label, cfg.temperature, 1.0)


def cb_supcon_loss(query, label, keys, key_labels, profile, cfg):
    """:func:`supcon_queue_loss` scaled by the class-balanced weight of ``label``."""
    z = _query(query)
    keys = np.asarray(keys, dtype=np.float64)
    w = class_weight(cfg.beta, profile.counts[label])
    return _masked_loss(z, keys, np.asarray(key_labels) == label, cfg.temperature, w)


def _balanced_logits(z, bank, tau):
    if bank.policy != "balanced":
        raise QueueError("balanced-queue loss requires a balanced bank")
    keys = bank.balanced_keys()  # (K, Q, C); raises if not warm
    logits = keys @ z / tau  # (K, Q)
    return keys, logits


def bq_loss(query, label, bank, profile, cfg):
    """Balanced-queue loss: Q positives from the query's class buffer, KQ keys in the softmax.

    The gradient is assembled from its positive and negative parts,
    ``(w/tau) [sum_p z_p (P_p - 1/Q) + sum_n z_n P_n]``.
    """
    z = _query(query)
    tau = cfg.temperature
    keys, logits = _balanced_logits(z, bank, tau)
    q = keys.shape[1]
    lse = log_sum_exp(logits)
    p = np.exp(logits - lse)
    w = _weight(profile, label, cfg)
    value = -(w / q) * float(np.sum(logits[label] - lse))
    pos_part = keys[label].T @ (p[label] - 1.0 / q)
    others = np.arange(keys.shape[0]) != label
    neg_part = np.einsum("kqc,kq->c", keys[others], p[others])
    return LossResult(value, (w / tau) * (pos_part + neg_part))


def _mine_indices(z, label, bank, cfg):
    pos = bank.get_positives(label)
    neg = bank.get_negatives(label)
    qp, qn = cfg.mining_counts(bank.n_classes, bank.queue_size)
    if pos.shape[0] < qp or neg.shape[0] < qn:
        raise QueueError("not enough stored keys to mine the requested pairs")
    pi = top_k_indices(pos @ z, qp, order="smallest")
    ni = top_k_indices(neg @ z, qn, order="largest")
    return pos, neg, pi, ni


def mine_pairs(query, label, bank, cfg):
    """Hard positives (least similar ``qp``) and hard negatives (most similar ``qn``)."""
    z = _query(query)
    bank.require_warm()
    pos, neg, pi, ni = _mine_indices(z, label, bank, cfg)
    return pos[pi], neg[ni]


def loss_on_sets(query, positives, negatives, weight, temperature):
    """Contrastive loss with the softmax restricted to the given positive and negative keys."""
    z = _query(query)
    keys = np.concatenate([positives, negatives], axis=0)
    mask = np.zeros(keys.shape[0], dtype=bool)
    mask[: positives.shape[0]] = True
    return _masked_loss(z, keys, mask, temperature, weight)


def spm_loss(query, label, bank, profile, cfg):
    """Contrastive loss over mined hard pairs.

    The mined sets are treated as constants when differentiating; top-k
    selection is piecewise constant in the query.
    """
    positives, negatives = mine_pairs(query, label, bank, cfg)
    return loss_on_sets(query, positives, negatives, _weight(profile, label, cfg), cfg.temperature)


def per_key_gradients(query, label, bank, cfg, profile=None):
    """Per-key terms of the balanced-queue gradient.

    Returns ``(coef, keys, is_positive, similarity)`` with the gradient equal to
    ``sum_j coef[j] * keys[j]``.
    """
    z = _query(query)
    tau = cfg.temperature
    keys, logits = _balanced_logits(z, bank, tau)
    k, q, c = keys.shape
    lse = log_sum_exp(logits)
    p = np.exp(logits - lse).reshape(-1)
    is_pos = np.repeat(np.arange(k) == label, q)
    w = _weight(profile, label, cfg)
    coef = (w / tau) * (p - is_pos / q)
    flat = keys.reshape(-1, c)
    return coef, flat, is_pos, flat @ z


def gradient_norm_profile(query, label, bank, cfg, profile=None):
    """Per-key gradient norms, positives then negatives, each by similarity descending.

    Rows are ``(rank, is_positive, similarity, gradient_norm)`` with 1-based
    rank inside each polarity.
    """
    coef, keys, is_pos, sims = per_key_gradients(query, label, bank, cfg, profile)
    norms = np.abs(coef) * np.linalg.norm(keys, axis=1)
    rows = []
    for polarity in (True, False):
        idx = np.flatnonzero(is_pos == polarity)
        idx = idx[np.argsort(-sims[idx], kind="stable")]
        for r, j in enumerate(idx, start=1):
            rows.append((r, polarity, float(sims[j]), float(norms[j])))
    return rows


def mean_gradient_norm_profile(queries, labels, bank, cfg, profile=None):
    """Rank-wise mean of :func:`gradient_norm_profile` over many queries."""
    pos_acc, neg_acc = [], []
    for z, y in zip(queries, labels):
        rows = gradient_norm_profile(z, int(y), bank, cfg, profile)
        pos_acc.append([(r[2], r[3]) for r in rows if r[1]])
        neg_acc.append([(r[2], r[3]) for r in rows if not r[1]])
    out = []
    for polarity, acc in ((True, pos_acc), (False, neg_acc)):
        arr = np.mean(np.asarray(acc), axis=0)
        for r, (s, g) in enumerate(arr, start=1):
            out.append((r, polarity, float(s), float(g)))
    return out


def gradient_profile_csv(rows):
    buf = io.StringIO()
    buf.write("rank,polarity,similarity,grad_norm\n")
    for rank, is_pos, sim, g in rows:
        buf.write(f"{rank},{'positive' if is_pos else 'negative'},{sim:.6f},{g:.6e}\n")
    return buf.getvalue()


# -- batched forms used by the training loop ---------------------------------


def spm_loss_batch(queries, labels, bank_keys, class_counts, cfg, mined=None):
    """Mean mined-pair loss over a batch and its gradient w.r.t. every query row.

    ``bank_keys`` is the ``(K, Q, C)`` balanced memory. Mining and tie-breaking
    follow :func:`mine_pairs` exactly. Passing the ``mined`` column indices of a
    previous call reuses those sets instead of mining again.
    """
    z = np.asarray(queries, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    k, q, c = bank_keys.shape
    qp, qn = cfg.mining_counts(k, q)
    tau = cfg.temperature
    b = z.shape[0]
    flat = bank_keys.reshape(k * q, c)
    sims = z @ flat.T  # (B, KQ), columns in (class, age) order
    rows = np.arange(b)[:, None]

    if mined is None:
        block = labels[:, None] * q + np.arange(q)[None, :]
        pos_local = np.argsort(sims[rows, block], axis=1, kind="stable")[:, :qp]
        pos_cols = np.take_along_axis(block, pos_local, axis=1)
        neg_valid = np.ones((b, k * q), dtype=bool)
        neg_valid[rows, block] = False
        neg_cols = top_k_rows(sims, qn, "largest", valid=neg_valid)
        cols = np.concatenate([pos_cols, neg_cols], axis=1)
    else:
        cols = mined
    logits = sims[rows, cols] / tau
    m = logits.max(axis=1, keepdims=True)
    lse = m + np.log(np.exp(logits - m).sum(axis=1, keepdims=True))
    p = np.exp(logits - lse)
    w = class_weight(cfg.beta, np.asarray(class_counts)[labels]) if cfg.beta > 0 else np.ones(b)
    values = -w * np.sum(logits[:, :qp] - lse, axis=1) / qp
    mask = np.zeros_like(p)
    mask[:, :qp] = 1.0 / qp
    coef = (w / tau)[:, None] * (p - mask)
    full = np.zeros((b, k * q))
    np.add.at(full, (np.broadcast_to(rows, cols.shape), cols), coef)
    grad = full @ flat / b
    return BatchLoss(float(values.mean()), grad, values, cols)


def supcon_loss_batch(queries, labels, keys, key_labels, cfg, class_counts=None):
    """Mean queue SupCon (class-weighted when ``class_counts`` is given) over a batch.

    Queries with no same-class key in the queue contribute zero loss and zero
    gradient but still count in the batch mean.
    """
    z = np.asarray(queries, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    b = z.shape[0]
    if keys.shape[0] == 0:
        return BatchLoss(0.0, np.zeros_like(z), np.zeros(b))
    tau = cfg.temperature
    logits = z @ keys.T / tau
    m = logits.max(axis=1, keepdims=True)
    lse = m + np.log(np.exp(logits - m).sum(axis=1, keepdims=True))
    p = np.exp(logits - lse)
    pos = (labels[:, None] == np.asarray(key_labels)[None, :]).astype(np.float64)
    n_pos = pos.sum(axis=1)
    has = n_pos > 0
    safe = np.where(has, n_pos, 1.0)
    if class_counts is not None and cfg.beta > 0:
        w = class_weight(cfg.beta, np.asarray(class_counts)[labels])
    else:
        w = np.ones(b)
    w = np.where(has, w, 0.0)
    values = -w * np.sum(pos * (logits - lse), axis=1) / safe
    coef = (w / tau)[:, None] * (p - pos / safe[:, None])
    grad = coef @ keys / b
    return BatchLoss(float(values.mean()), grad, values)
