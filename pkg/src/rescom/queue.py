"""Key memories for queue-based contrastive learning.

Three policies share one interface:

* ``original`` - a single FIFO of ``K * Q`` keys with no class constraint, so
  its composition follows the label stream.
* ``reversed`` - per-class FIFOs whose capacities follow the reversed class
  frequencies (tail classes get the most slots).
* ``balanced`` - ``K`` per-class FIFOs of exactly ``Q`` keys each.
"""

from __future__ import annotations

import io
from collections import deque

import numpy as np

POLICIES = ("original", "reversed", "balanced")
NORM_TOLERANCE = 1e-3


class QueueError(ValueError):
    pass


class QueueNotWarmError(QueueError):
    """A loss needs every per-class buffer at capacity, and one is not."""


def largest_remainder(shares, total):
    """Round non-negative ``shares`` (summing to ``total``) to integers with the same sum."""
    shares = np.asarray(shares, dtype=np.float64)
    base = np.floor(shares).astype(np.int64)
    left = int(total - base.sum())
    if left > 0:
        frac = shares - base
        # stable sort: ties go to the smaller class index
        order = np.argsort(-frac, kind="stable")[:left]
        base[order] += 1
    return base


def reversed_capacities(class_counts, queue_size):
    """Per-class capacities following the reversed class-frequency ranking.

    The class ranked ``r`` by descending count receives the share of the total
    ``K * queue_size`` belonging to the class ranked ``K + 1 - r``; rounding is
    largest-remainder with a floor of one slot per class.
    """
    counts = np.asarray(class_counts, dtype=np.float64)
    k = counts.shape[0]
    total = k * int(queue_size)
    order = np.argsort(-counts, kind="stable")
    freq_sorted = counts[order] / counts.sum()
    shares = np.empty(k)
    shares[order] = total * freq_sorted[::-1]
    caps = largest_remainder(shares, total)
    return np.maximum(caps, 1)


def policy_capacities(policy, n_classes, queue_size, class_counts=None):
    """Per-class capacities, or ``None`` for the unconstrained original FIFO."""
    if policy == "balanced":
        return np.full(n_classes, int(queue_size), dtype=np.int64)
    if policy == "reversed":
        if class_counts is None:
            raise QueueError("reversed policy needs class counts")
        if len(class_counts) != n_classes:
            raise QueueError("class_counts length does not match n_classes")
        return reversed_capacities(class_counts, queue_size)
    if policy == "original":
        return None
    raise QueueError(f"unknown queue policy {policy!r}; expected one of {POLICIES}")


class ClassQueueBank:
    """Detached memory of unit-norm keys with their labels.

    Parameters
    ----------
    n_classes : int
    dim : int
        Embedding dimension of the stored keys.
    queue_size : int
        Per-class capacity ``Q``. The original FIFO holds ``n_classes * Q`` keys
        in total and the reversed policy redistributes the same total.
    policy : {"balanced", "original", "reversed"}
    class_counts : sequence of int, optional
        Training class counts; required by the reversed policy.
    """

    def __init__(self, n_classes, dim, queue_size, policy="balanced", class_counts=None):
        if queue_size < 1:
            raise QueueError("queue_size must be at least 1")
        self.n_classes = int(n_classes)
        self.dim = int(dim)
        self.queue_size = int(queue_size)
        self.policy = policy
        caps = policy_capacities(policy, self.n_classes, self.queue_size, class_counts)
        self.capacities = caps
        if caps is None:
            self.total_capacity = self.n_classes * self.queue_size
            self._fifo = deque(maxlen=self.total_capacity)
        else:
            self.total_capacity = int(caps.sum())
            self._buffers = [deque(maxlen=int(c)) for c in caps]
        self._seq = 0

    def enqueue(self, keys, labels):
        """Append keys (rows) in order; full buffers evict their oldest entry."""
        keys = np.array(keys, dtype=np.float64, copy=True, ndmin=2)
        labels = np.asarray(labels, dtype=np.int64).reshape(-1)
        if keys.shape != (labels.shape[0], self.dim):
            raise QueueError(f"keys shape {keys.shape} does not match labels/dim")
        if labels.size and (labels.min() < 0 or labels.max() >= self.n_classes):
            raise QueueError("label out of range")
        norms = np.linalg.norm(keys, axis=1)
        if np.any(np.abs(norms - 1.0) > NORM_TOLERANCE):
            raise QueueError("queue keys must be unit-norm")
        for key, y in zip(keys, labels):
            entry = (self._seq, int(y), key)
            self._seq += 1
            if self.capacities is None:
                self._fifo.append(entry)
            else:
                self._buffers[y].append(entry)
        return self

    def _entries(self, label):
        if self.capacities is None:
            return [e for e in self._fifo if e[1] == label]
        return list(self._buffers[label])

    def get_positives(self, label):
        """Stored keys of class ``label``, oldest first."""
        ents = self._entries(int(label))
        return np.array([e[2] for e in ents]).reshape(len(ents), self.dim)

    def get_negatives(self, label):
        """Stored keys of every other class, ordered by (class id, age)."""
        parts = [self.get_positives(k) for k in range(self.n_classes) if k != label]
        if not parts:
            return np.empty((0, self.dim))
        return np.concatenate(parts, axis=0)

    def occupancy(self):
        if self.capacities is None:
            occ = np.zeros(self.n_classes, dtype=np.int64)
            for e in self._fifo:
                occ[e[1]] += 1
            return occ
        return np.array([len(b) for b in self._buffers], dtype=np.int64)

    def __len__(self):
        if self.capacities is None:
            return len(self._fifo)
        return sum(len(b) for b in self._buffers)

    def is_warm(self, label=None):
        if self.capacities is None:
            return len(self._fifo) == self.total_capacity
        if label is not None:
            return len(self._buffers[label]) == self.capacities[label]
        return all(len(b) == b.maxlen for b in self._buffers)

    def require_warm(self):
        if not self.is_warm():
            raise QueueNotWarmError("queue bank has not reached capacity yet")

    def snapshot(self):
        """All stored keys and labels as arrays, ordered by (class id, age)."""
        keys, labels = [], []
        for k in range(self.n_classes):
            pos = self.get_positives(k)
            keys.append(pos)
            labels.append(np.full(pos.shape[0], k, dtype=np.int64))
        return np.concatenate(keys, axis=0), np.concatenate(labels)

    def balanced_keys(self):
        """Keys as a ``(K, Q, dim)`` array; only defined for a warm balanced bank."""
        if self.policy != "balanced":
            raise QueueError("balanced_keys requires the balanced policy")
        self.require_warm()
        return np.stack([self.get_positives(k) for k in range(self.n_classes)])

    def occupancy_csv(self):
        buf = io.StringIO()
        buf.write("class,occupancy\n")
        for k, n in enumerate(self.occupancy()):
            buf.write(f"{k},{n}\n")
        return buf.getvalue()
