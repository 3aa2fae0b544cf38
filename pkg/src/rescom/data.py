"""Datasets: long-tailed Gaussian mixtures, CSV files and two-view augmentation."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from . import _rng
from .imbalance import LongTailProfile

MANY, MEDIUM, FEW = "many", "medium", "few"


class DatasetError(ValueError):
    pass


class CSVParseError(DatasetError):
    def __init__(self, path, row, column, cell):
        super().__init__(f"{path}: row {row}, column {column}: cannot parse {cell!r}")
        self.row, self.column = row, column


class RaggedRowError(DatasetError):
    pass


class LabelRangeError(DatasetError):
    pass


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        if x.ndim != 2 or y.shape != (x.shape[0],):
            raise DatasetError("features must be (N, D) with one label per row")
        if y.size and (y.min() < 0 or y.max() >= self.n_classes):
            raise LabelRangeError(f"labels must lie in [0, {self.n_classes})")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)

    def __len__(self):
        return self.labels.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]

    @property
    def profile(self):
        return LongTailProfile.from_labels(self.labels, self.n_classes)

    def class_counts(self):
        return np.bincount(self.labels, minlength=self.n_classes)


@dataclass
class SiameseBatch:
    view1: np.ndarray
    view2: np.ndarray
    labels: np.ndarray


def class_means(n_classes, dim, class_separation, seed):
    """Class centres with every pairwise distance at least ``class_separation``.

    With ``dim >= n_classes`` the centres are scaled axes of a random
    orthonormal frame (all distances exactly equal); otherwise random
    directions rescaled so the closest pair sits at the separation.
    """
    rng = _rng.stream(seed, "data")
    if dim >= n_classes:
        frame, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
        return class_separation / np.sqrt(2.0) * frame[:, :n_classes].T
    pts = rng.standard_normal((n_classes, dim))
    d = np.linalg.norm(pts[:, None] - pts[None, :], axis=-1)
    d[np.diag_indices(n_classes)] = np.inf
    return pts * (class_separation / d.min())


def _sample_mixture(means, counts, rng):
    labels = np.repeat(np.arange(len(counts)), counts)
    x = means[labels] + rng.standard_normal((labels.shape[0], means.shape[1]))
    return x, labels


def make_longtailed_synthetic(n_classes, dim, imbalance_factor, n_max, class_separation=3.0, seed=0):
    """Unit-variance Gaussian mixture with exponentially decaying class sizes."""
    if n_classes < 2:
        raise ValueError("need at least two classes")
    profile = LongTailProfile.exponential(n_classes, imbalance_factor, n_max)
    return make_synthetic_from_profile(profile, dim, class_separation, seed)


def make_synthetic_from_profile(profile, dim, class_separation=3.0, seed=0):
    """Gaussian mixture with arbitrary per-class counts (e.g. Pareto-like lists)."""
    if not isinstance(profile, LongTailProfile):
        profile = LongTailProfile(tuple(int(c) for c in profile))
    if profile.n_classes < 2:
        raise ValueError("need at least two classes")
    means = class_means(profile.n_classes, dim, class_separation, seed)
    x, y = _sample_mixture(means, profile.counts, _rng.stream(seed, "shuffle"))
    return Dataset(x, y, profile.n_classes)


def subsample_longtailed(dataset, imbalance_factor, n_max=None, seed=0):
    """Long-tailed subset of a (roughly) balanced dataset.

    Class ``k`` keeps ``n_max * IF**(-k / (K - 1))`` randomly chosen samples
    (rounded, at least 1); ``n_max`` defaults to the smallest class size so
    every class can supply its quota. Row order of kept samples is preserved.
    """
    have = dataset.class_counts()
    if np.any(have == 0):
        raise DatasetError("every class needs at least one sample")
    n_max = int(have.min()) if n_max is None else int(n_max)
    target = LongTailProfile.exponential(dataset.n_classes, imbalance_factor, n_max).counts
    short = [k for k in range(dataset.n_classes) if target[k] > have[k]]
    if short:
        k = short[0]
        raise DatasetError(f"class {k} has {have[k]} samples, {target[k]} requested")
    rng = _rng.stream(seed, "shuffle")
    keep = np.zeros(len(dataset), dtype=bool)
    for k in range(dataset.n_classes):
        idx = np.flatnonzero(dataset.labels == k)
        keep[rng.choice(idx, size=target[k], replace=False)] = True
    return Dataset(dataset.features[keep], dataset.labels[keep], dataset.n_classes)


def make_balanced_test(n_classes, dim, n_per_class, class_separation=3.0, seed=0):
    """Balanced draw from the same mixture as :func:`make_longtailed_synthetic` with ``seed``."""
    means = class_means(n_classes, dim, class_separation, seed)
    x, y = _sample_mixture(means, [n_per_class] * n_classes, _rng.stream(seed, "test"))
    return Dataset(x, y, n_classes)


def load_csv_dataset(path, n_classes=None):
    """Read ``label,f0,f1,...`` rows. ``n_classes`` defaults to ``max(label) + 1``."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DatasetError(f"{path}: empty file (a header row is required)")
    header, body = rows[0], rows[1:]
    width = len(header)
    if width < 2:
        raise DatasetError(f"{path}: header needs a label column and at least one feature")
    labels, feats = [], []
    for r, row in enumerate(body, start=2):
        if len(row) != width:
            raise RaggedRowError(f"{path}: row {r} has {len(row)} cells, expected {width}")
        try:
            labels.append(int(row[0]))
        except ValueError:
            raise CSVParseError(path, r, 1, row[0]) from None
        vals = []
        for c, cell in enumerate(row[1:], start=2):
            try:
                vals.append(float(cell))
            except ValueError:
                raise CSVParseError(path, r, c, cell) from None
        feats.append(vals)
    y = np.asarray(labels, dtype=np.int64)
    if y.size and y.min() < 0:
        raise LabelRangeError(f"{path}: negative label")
    k = int(y.max()) + 1 if n_classes is None else int(n_classes)
    if y.size and y.max() >= k:
        raise LabelRangeError(f"{path}: label {int(y.max())} out of range for {k} classes")
    x = np.asarray(feats, dtype=np.float64).reshape(len(labels), width - 1)
    return Dataset(x, y, k)


def dataset_to_csv(dataset):
    """Canonical text: ``label,f0,...`` header, integer labels, shortest round-trip floats."""
    buf = io.StringIO()
    buf.write("label," + ",".join(f"f{j}" for j in range(dataset.dim)) + "\n")
    for y, row in zip(dataset.labels, dataset.features):
        buf.write(str(int(y)) + "," + ",".join(repr(float(v)) for v in row) + "\n")
    return buf.getvalue()


def write_csv_dataset(dataset, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(dataset_to_csv(dataset))


def two_view_augment(samples, labels, noise_sigma=0.3, dropout_p=0.1, rng=None):
    """Two independent noisy, coordinate-dropped copies of each sample."""
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be >= 0")
    if not 0.0 <= dropout_p < 1.0:
        raise ValueError("dropout_p must lie in [0, 1)")
    if rng is None or isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    x = np.asarray(samples, dtype=np.float64)

    def view():
        v = x + noise_sigma * rng.standard_normal(x.shape) if noise_sigma > 0 else x.copy()
        if dropout_p > 0:
            v[rng.random(x.shape) < dropout_p] = 0.0
        return v

    v1 = view()
    v2 = view()
    return SiameseBatch(v1, v2, np.asarray(labels, dtype=np.int64).copy())


def default_group_thresholds(n_max):
    """(hi, lo) = (100, 20), scaled down proportionally when ``n_max < 500``."""
    scale = min(1.0, n_max / 500.0)
    return 100.0 * scale, 20.0 * scale


def split_many_medium_few(profile, thresholds=(100, 20)):
    """Group of each class: many if ``N > hi``, few if ``N < lo``, else medium."""
    hi, lo = thresholds
    if not hi > lo > 0:
        raise ValueError("thresholds must satisfy hi > lo > 0")
    counts = profile.counts if hasattr(profile, "counts") else profile
    return [MANY if n > hi else FEW if n < lo else MEDIUM for n in counts]
