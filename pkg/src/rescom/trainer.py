"""Training loops (ResCom and ablation baselines) and evaluation."""

from __future__ import annotations

import io
import logging
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import _rng
from .classifier import balanced_softmax_batch, siambs_batch
from .contrastive import ContrastiveConfig, spm_loss_batch, supcon_loss_batch
from .data import FEW, MANY, MEDIUM, default_group_thresholds, split_many_medium_few, two_view_augment
from .model import SGD, SiameseNetwork, backward_and_step, lr_schedule
from .numerics import softmax
from .queue import ClassQueueBank

logger = logging.getLogger(__name__)

VARIANTS = ("rescom", "siambs", "supcon_balsfx", "original_queue", "reversed_queue")
BASELINES = ("supcon_balsfx", "original_queue", "reversed_queue", "siambs")
METRIC_COLUMNS = ("epoch", "lr", "cls_loss", "cont_loss", "total_loss",
                  "top1_all", "top1_many", "top1_medium", "top1_few", "ece")


class WarmupError(RuntimeError):
    """The queue cannot be filled within the allowed number of augmentation passes."""


@dataclass
class TrainConfig:
    variant: str = "rescom"
    lam: float = 0.5
    epochs: int = 30
    batch_size: int = 128
    lr: float = 0.1
    schedule: str = "cosine"
    milestones: tuple = ()
    decay: float = 0.1
    momentum: float = 0.9
    temperature: float = 0.2
    beta: float = 0.99
    qp: int | None = None
    qn: int | None = None
    queue_size: int = 32
    hidden: tuple = (64, 64)
    proj_hidden: int = 64
    proj_dim: int = 32
    noise_sigma: float = 0.3
    dropout_p: float = 0.1
    thresholds: tuple | None = None
    eval_every: int = 1
    max_warmup_passes: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        self.milestones = tuple(int(m) for m in self.milestones)
        self.hidden = tuple(int(h) for h in self.hidden)
        self.contrastive  # validates temperature / beta / qp / qn

    @property
    def contrastive(self):
        return ContrastiveConfig(self.temperature, self.beta, self.qp, self.qn)

    def as_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class EvalReport:
    top1_all: float
    top1_many: float | None
    top1_medium: float | None
    top1_few: float | None
    ece: float
    per_class: np.ndarray
    group_counts: dict = field(default_factory=dict)

    def to_text(self):
        def fmt(v):
            return "absent" if v is None else f"{v:.6f}"
        lines = [
            f"top1_all: {fmt(self.top1_all)}",
            f"top1_many: {fmt(self.top1_many)}",
            f"top1_medium: {fmt(self.top1_medium)}",
            f"top1_few: {fmt(self.top1_few)}",
            f"ece: {fmt(self.ece)}",
            "per_class: " + ",".join("nan" if np.isnan(a) else f"{a:.6f}" for a in self.per_class),
        ]
        for g in (MANY, MEDIUM, FEW):
            lines.append(f"n_{g}: {self.group_counts.get(g, 0)}")
        return "\n".join(lines) + "\n"


@dataclass
class TrainResult:
    network: SiameseNetwork
    log: list
    profile: object
    bank: ClassQueueBank | None
    config: TrainConfig

    def metrics_csv(self):
        return metrics_to_csv(self.log)


def expected_calibration_error(confidences, correct, n_bins=15):
    """Bin-size weighted mean |accuracy - confidence| over equal-width bins ``(lo, hi]``."""
    conf = np.asarray(confidences, dtype=np.float64)
    correct = np.asarray(correct, dtype=np.float64)
    if conf.size == 0:
        raise ValueError("ECE of an empty prediction set")
    idx = np.clip(np.ceil(conf * n_bins).astype(np.int64) - 1, 0, n_bins - 1)
    ece = 0.0
    for b in range(n_bins):
        in_bin = idx == b
        if in_bin.any():
            ece += in_bin.mean() * abs(correct[in_bin].mean() - conf[in_bin].mean())
    return float(ece)


def report_from_logits(logits, labels, train_profile, thresholds=None, n_bins=15):
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    k = len(train_profile.counts)
    if labels.size and labels.max() >= k:
        raise ValueError("test labels exceed the number of training classes")
    if thresholds is None:
        thresholds = default_group_thresholds(max(train_profile.counts))
    probs = softmax(logits, axis=1)
    pred = np.argmax(logits, axis=1)
    correct = pred == labels
    per_class = np.full(k, np.nan)
    for c in range(k):
        m = labels == c
        if m.any():
            per_class[c] = correct[m].mean()
    groups = np.asarray(split_many_medium_few(train_profile, thresholds))
    sample_group = groups[labels]
    acc, counts = {}, {}
    for g in (MANY, MEDIUM, FEW):
        m = sample_group == g
        counts[g] = int(m.sum())
        acc[g] = float(correct[m].mean()) if m.any() else None
    return EvalReport(
        top1_all=float(correct.mean()),
        top1_many=acc[MANY],
        top1_medium=acc[MEDIUM],
        top1_few=acc[FEW],
        ece=expected_calibration_error(probs.max(axis=1), correct, n_bins),
        per_class=per_class,
        group_counts=counts,
    )


def evaluate(network, test, train_profile, thresholds=None, n_bins=15):
    """Top-1 (overall and by many/medium/few group of the training counts) and ECE.

    Predictions are the argmax of the raw classifier logits; the projection
    head is not used.
    """
    return report_from_logits(network.logits(test.features), test.labels, train_profile,
                              thresholds, n_bins)


def _make_bank(cfg, profile, dim):
    v = cfg.variant
    if cfg.lam == 0 or v == "siambs":
        return None
    policy = {"rescom": "balanced", "supcon_balsfx": "original",
              "original_queue": "original", "reversed_queue": "reversed"}[v]
    return ClassQueueBank(profile.n_classes, dim, cfg.queue_size, policy, profile.counts)


def warmup_bank(network, bank, data, cfg, rng):
    """Fill every per-class buffer before training starts.

    The first pass enqueues one augmented view of every sample; later passes
    re-augment only samples of classes whose buffer is still short.
    """
    if bank.capacities is None:
        return 0
    counts = data.class_counts()
    short = bank.capacities > counts * cfg.max_warmup_passes
    if np.any(short):
        k = int(np.flatnonzero(short)[0])
        raise WarmupError(
            f"class {k} has {counts[k]} samples but needs {bank.capacities[k]} queue entries "
            f"(more than {cfg.max_warmup_passes} augmentation passes)")
    passes = 0
    while not bank.is_warm():
        need = np.array([not bank.is_warm(k) for k in range(bank.n_classes)])
        idx = np.flatnonzero(need[data.labels])
        idx = idx[rng.permutation(idx.shape[0])]
        for start in range(0, idx.shape[0], cfg.batch_size):
            sel = idx[start:start + cfg.batch_size]
            views = two_view_augment(data.features[sel], data.labels[sel],
                                     cfg.noise_sigma, cfg.dropout_p, rng)
            bank.enqueue(network.embed(views.view2), views.labels)
        passes += 1
    logger.debug("queue warm after %d passes", passes)
    return passes


def _contrastive_term(cfg, bank, z1, labels, counts):
    ccfg = cfg.contrastive
    if cfg.variant == "rescom":
        return spm_loss_batch(z1, labels, bank.balanced_keys(), counts, ccfg)
    keys, key_labels = bank.snapshot()
    if cfg.variant == "supcon_balsfx":
        return supcon_loss_batch(z1, labels, keys, key_labels, replace(ccfg, beta=0.0))
    return supcon_loss_batch(z1, labels, keys, key_labels, ccfg, class_counts=counts)


def train(cfg, data, test=None, callback=None):
    """Run one training configuration; see :data:`VARIANTS`.

    Each step: augment two views, Siamese forward, classification loss
    (two-view balanced softmax, or single-view for ``supcon_balsfx``) plus
    ``lam`` times the contrastive loss on view-1 queries against the memory,
    backward, SGD step, then enqueue the view-2 embeddings.
    """
    profile = data.profile
    counts = np.asarray(profile.counts)
    net = SiameseNetwork(data.dim, data.n_classes, cfg.hidden, cfg.proj_hidden, cfg.proj_dim,
                         rng=_rng.stream(cfg.seed, "init"))
    opt = SGD(net.params, cfg.momentum, cfg.lr)
    aug_rng = _rng.stream(cfg.seed, "augment")
    shuffle_rng = _rng.stream(cfg.seed, "shuffle")
    bank = _make_bank(cfg, profile, cfg.proj_dim)
    if bank is not None:
        warmup_bank(net, bank, data, cfg, _rng.stream(cfg.seed, "warmup"))
    use_contrastive = bank is not None
    single_view = cfg.variant == "supcon_balsfx"

    log = []
    n = len(data)
    for epoch in range(cfg.epochs):
        opt.lr = lr_schedule(cfg.schedule, cfg.lr, epoch, cfg.epochs, cfg.milestones, cfg.decay)
        order = shuffle_rng.permutation(n)
        sums = np.zeros(3)
        steps = 0
        for start in range(0, n, cfg.batch_size):
            sel = order[start:start + cfg.batch_size]
            views = two_view_augment(data.features[sel], data.labels[sel],
                                     cfg.noise_sigma, cfg.dropout_p, aug_rng)
            y = views.labels
            out, cache = net.forward_siamese(views.view1, views.view2)
            if single_view:
                cls_value, g1, _ = balanced_softmax_batch(out.s1, y, profile)
                g2 = np.zeros_like(out.s2)
            else:
                cls_value, g1, g2 = siambs_batch(out.s1, out.s2, y, profile)
            cont_value, gz = 0.0, None
            if use_contrastive:
                cont = _contrastive_term(cfg, bank, out.z1, y, counts)
                cont_value, gz = cont.value, cfg.lam * cont.grad
            total = cls_value + cfg.lam * cont_value
            if not np.isfinite(total):
                raise FloatingPointError(f"non-finite loss at epoch {epoch}")
            backward_and_step(net, cache, gz, g1, g2, opt)
            if use_contrastive:
                bank.enqueue(out.z2, y)
            sums += (cls_value, cont_value, total)
            steps += 1
        row = {"epoch": epoch, "lr": opt.lr}
        row.update(zip(("cls_loss", "cont_loss", "total_loss"), sums / steps))
        if test is not None and (epoch + 1) % cfg.eval_every == 0:
            rep = evaluate(net, test, profile, cfg.thresholds)
            row.update(top1_all=rep.top1_all, top1_many=rep.top1_many,
                       top1_medium=rep.top1_medium, top1_few=rep.top1_few, ece=rep.ece)
        log.append(row)
        if callback is not None:
            callback(row)
    return TrainResult(net, log, profile, bank, cfg)


def train_rescom(cfg, data, test=None):
    return train(replace(cfg, variant="rescom"), data, test)


def train_baseline(variant, cfg, data, test=None):
    if variant not in BASELINES:
        raise ValueError(f"unknown baseline {variant!r}; expected one of {BASELINES}")
    return train(replace(cfg, variant=variant), data, test)


def metrics_to_csv(log):
    buf = io.StringIO()
    buf.write(",".join(METRIC_COLUMNS) + "\n")
    for row in log:
        cells = []
        for col in METRIC_COLUMNS:
            v = row.get(col)
            cells.append("" if v is None else str(v) if col == "epoch" else repr(float(v)))
        buf.write(",".join(cells) + "\n")
    return buf.getvalue()
