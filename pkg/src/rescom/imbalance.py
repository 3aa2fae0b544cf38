"""Class-count profiles and the pair-count imbalance of queue-based contrastive learning.

Under uniform batch sampling with a FIFO key queue of size ``Q``, the number of
keys of class ``k`` in the queue is hypergeometric with mean ``N_k Q / N``, so
the expected number of same-class (query, key) pairs per epoch is
``N_k**2 Q / N``. The ratio between head and tail classes is therefore the
*square* of the classification imbalance factor.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np

from . import _rng
from .queue import POLICIES, policy_capacities


@dataclass(frozen=True)
class LongTailProfile:
    """Per-class training counts ``N_k``; class ids are 0-based positions."""

    counts: tuple

    def __post_init__(self):
        counts = tuple(int(c) for c in self.counts)
        if not counts:
            raise ValueError("a profile needs at least one class")
        if min(counts) < 1:
            raise ValueError("every class needs at least one sample")
        object.__setattr__(self, "counts", counts)

    @classmethod
    def exponential(cls, n_classes, imbalance_factor, n_max):
        """CIFAR-LT style profile ``N_k = n_max * IF**(-k / (K - 1))``, k = 0..K-1."""
        if imbalance_factor < 1:
            raise ValueError("imbalance_factor must be >= 1")
        if n_classes < 1:
            raise ValueError("n_classes must be >= 1")
        if n_classes == 1:
            return cls((int(n_max),))
        k = np.arange(n_classes)
        raw = n_max * float(imbalance_factor) ** (-k / (n_classes - 1))
        return cls(tuple(max(1, int(math.floor(x + 0.5))) for x in raw))

    @classmethod
    def from_labels(cls, labels, n_classes=None):
        labels = np.asarray(labels, dtype=np.int64)
        n = int(labels.max()) + 1 if n_classes is None else int(n_classes)
        return cls(tuple(np.bincount(labels, minlength=n)))

    @property
    def n_classes(self):
        return len(self.counts)

    @property
    def total(self):
        return sum(self.counts)

    @property
    def frequencies(self):
        c = np.asarray(self.counts, dtype=np.float64)
        return c / c.sum()

    @property
    def imbalance_factor(self):
        return max(self.counts) / min(self.counts)

    def is_sorted(self):
        return all(a >= b for a, b in zip(self.counts, self.counts[1:]))

    def as_array(self):
        return np.asarray(self.counts, dtype=np.float64)


def expected_positive_pairs(profile, queue_size, k):
    """Expected same-class pairs per epoch for class ``k``: ``N_k**2 Q / N``."""
    if queue_size < 1:
        raise ValueError("queue_size must be >= 1")
    if not 0 <= k < profile.n_classes:
        raise IndexError(f"class {k} out of range")
    nk = profile.counts[k]
    return nk * nk * queue_size / profile.total


def contrastive_imbalance_factor(profile):
    """``(max_k N_k / min_k N_k) ** 2``."""
    if profile.n_classes < 2:
        raise ValueError("the contrastive imbalance factor needs at least two classes")
    return (max(profile.counts) / min(profile.counts)) ** 2


@dataclass
class PairFrequencyMatrix:
    """Accumulated (query class, key class) pair counts from a sampling run."""

    counts: np.ndarray
    epochs: int
    policy: str = "original"
    queue_size: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def normalization(self):
        return float(self.counts.max())

    def normalized(self):
        norm = self.normalization
        if norm == 0:
            return np.zeros_like(self.counts, dtype=np.float64)
        return self.counts / norm

    def diagonal_per_epoch(self):
        return np.diag(self.counts) / self.epochs

    def empirical_gamma(self):
        d = np.diag(self.counts).astype(np.float64)
        return float(d.max() / d.min())

    def to_csv(self):
        k = self.counts.shape[0]
        buf = io.StringIO()
        buf.write("class," + ",".join(str(j) for j in range(k)) + "\n")
        for i, row in enumerate(self.normalized()):
            buf.write(f"{i}," + ",".join(f"{v:.6f}" for v in row) + "\n")
        return buf.getvalue()


def expected_pairs_csv(profile, queue_size, simulated=None):
    """Closed-form expected pairs per class, optionally beside simulated per-epoch rates."""
    buf = io.StringIO()
    header = "class,count,expected_pairs"
    if simulated is not None:
        header += ",simulated_pairs,relative_error"
    buf.write(header + "\n")
    for k in range(profile.n_classes):
        e = expected_positive_pairs(profile, queue_size, k)
        line = f"{k},{profile.counts[k]},{e:.6f}"
        if simulated is not None:
            s = float(simulated[k])
            line += f",{s:.6f},{(s - e) / e:.6f}"
        buf.write(line + "\n")
    return buf.getvalue()


class _LabelQueue:
    """Label-only queue state; only class occupancy matters for pair counts."""

    def __init__(self, policy, profile, queue_size):
        k = profile.n_classes
        self.k = k
        if policy == "original":
            self.caps = None
            self.ring = np.zeros(queue_size, dtype=np.int64)
            self.occupied = np.zeros(queue_size, dtype=bool)
            self.ptr = 0
        else:
            per_class = max(1, queue_size // k)
            self.caps = policy_capacities(policy, k, per_class, profile.counts)
        self.hist = np.zeros(k, dtype=np.int64)

    def warm(self):
        if self.caps is None:
            return bool(self.occupied.all())
        return bool(np.all(self.hist == self.caps))

    def push(self, batch, batch_hist):
        if self.caps is not None:
            np.minimum(self.hist + batch_hist, self.caps, out=self.hist)
            return
        cap = self.ring.shape[0]
        if batch.shape[0] > cap:
            batch = batch[-cap:]
        pos = (self.ptr + np.arange(batch.shape[0])) % cap
        old = self.ring[pos][self.occupied[pos]]
        self.hist -= np.bincount(old, minlength=self.k)
        self.ring[pos] = batch
        self.occupied[pos] = True
        self.hist += np.bincount(batch, minlength=self.k)
        self.ptr = int((self.ptr + batch.shape[0]) % cap)


def simulate_pair_frequencies(profile, batch_size, policy="original", epochs=200,
                              seed=0, queue_size=1024):
    """Monte-Carlo pair counts between each batch and the queue of previous batches.

    Each epoch shuffles the ``N`` labels, walks batches of ``batch_size`` (the
    last one may be short), adds ``outer(batch_hist, queue_hist)`` to the counts,
    then enqueues the batch. Counting starts once the queue is first full; the
    fill phase streams extra shuffled epochs that are not counted.

    ``queue_size`` is the total queue size. Per-class policies get
    ``queue_size // K`` slots per class (reversed: the same total redistributed).
    """
    if policy not in POLICIES:
        raise ValueError(f"unknown queue policy {policy!r}")
    if not 1 <= batch_size <= profile.total:
        raise ValueError("batch_size must be in [1, N]")
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    rng = _rng.stream(seed, "simulate")
    k = profile.n_classes
    labels = np.repeat(np.arange(k), profile.counts)
    queue = _LabelQueue(policy, profile, int(queue_size))
    pairs = np.zeros((k, k), dtype=np.int64)

    def run_epoch(count):
        order = rng.permutation(labels)
        for start in range(0, order.shape[0], batch_size):
            if not count and queue.warm():
                return
            batch = order[start:start + batch_size]
            bh = np.bincount(batch, minlength=k)
            if count:
                pairs[:] += np.outer(bh, queue.hist)
            queue.push(batch, bh)

    while not queue.warm():
        run_epoch(count=False)
    for _ in range(epochs):
        run_epoch(count=True)
    return PairFrequencyMatrix(pairs, int(epochs), policy, int(queue_size),
                               meta={"batch_size": int(batch_size), "seed": int(seed)})
