"""Randomized analytical-vs-finite-difference gradient checks."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .classifier import siambs_batch, siambs_loss
from .contrastive import ContrastiveConfig, bq_loss, class_weight, loss_on_sets, mine_pairs, spm_loss, spm_loss_batch
from .imbalance import LongTailProfile
from .model import SiameseNetwork
from .numerics import finite_difference_gradient, l2_normalize, relative_error
from .queue import ClassQueueBank

TEMPERATURES = (0.07, 0.2, 1.0)
LOSS_TOLERANCE = 1e-4
NETWORK_TOLERANCE = 1e-3


def _instance_rng(seed, index, tag):
    return np.random.default_rng([int(seed), int(index), tag])


def random_balanced_bank(rng, n_classes, queue_size, dim):
    bank = ClassQueueBank(n_classes, dim, queue_size, "balanced")
    labels = np.repeat(np.arange(n_classes), queue_size)
    bank.enqueue(l2_normalize(rng.standard_normal((labels.shape[0], dim))), labels)
    return bank


def random_loss_instance(rng, max_classes=8, max_queue=16, max_dim=32):
    k = int(rng.integers(2, max_classes + 1))
    q = int(rng.integers(1, max_queue + 1))
    dim = int(rng.integers(2, max_dim + 1))
    tau = float(rng.choice(TEMPERATURES))
    beta = float(rng.choice([0.0, 0.9, 0.99, 0.999]))
    profile = LongTailProfile(tuple(int(c) for c in rng.integers(1, 1000, size=k)))
    bank = random_balanced_bank(rng, k, q, dim)
    z = l2_normalize(rng.standard_normal(dim))
    label = int(rng.integers(k))
    qp = int(rng.integers(1, q + 1))
    qn = int(rng.integers(1, (k - 1) * q + 1))
    cfg = ContrastiveConfig(tau, beta, qp, qn)
    return z, label, bank, profile, cfg


def check_bq_instance(rng):
    z, label, bank, profile, cfg = random_loss_instance(rng)
    analytic = bq_loss(z, label, bank, profile, cfg).grad_query
    numeric = finite_difference_gradient(lambda v: bq_loss(v, label, bank, profile, cfg).value, z)
    return relative_error(analytic, numeric)


def check_spm_instance(rng):
    z, label, bank, profile, cfg = random_loss_instance(rng)
    res = spm_loss(z, label, bank, profile, cfg)
    # mined sets held fixed, as in the analytical gradient
    pos, neg = mine_pairs(z, label, bank, cfg)
    w = class_weight(cfg.beta, profile.counts[label])
    numeric = finite_difference_gradient(
        lambda v: loss_on_sets(v, pos, neg, w, cfg.temperature).value, z)
    return relative_error(res.grad_query, numeric)


def check_siambs_instance(rng):
    k = int(rng.integers(2, 11))
    profile = LongTailProfile(tuple(int(c) for c in rng.integers(1, 500, size=k)))
    s1, s2 = rng.normal(scale=2.0, size=(2, k))
    label = int(rng.integers(k))
    res = siambs_loss(s1, s2, label, profile)
    n1 = finite_difference_gradient(lambda v: siambs_loss(v, s2, label, profile).value, s1)
    n2 = finite_difference_gradient(lambda v: siambs_loss(s1, v, label, profile).value, s2)
    return max(relative_error(res.grad_view1, n1), relative_error(res.grad_view2, n2))


def network_loss_setup(rng, input_dim=8, hidden=(16,), proj_dim=8, n_classes=4,
                       queue_size=3, batch=6, lam=0.5):
    """A float64 network, a fixed batch, a warm bank and the total-loss closure."""
    net = SiameseNetwork(input_dim, n_classes, hidden, proj_hidden=16, proj_dim=proj_dim,
                         rng=rng, dtype=np.float64)
    x1 = rng.standard_normal((batch, input_dim))
    x2 = x1 + 0.3 * rng.standard_normal((batch, input_dim))
    y = rng.integers(n_classes, size=batch)
    profile = LongTailProfile(tuple(int(c) for c in rng.integers(5, 300, size=n_classes)))
    bank = random_balanced_bank(rng, n_classes, queue_size, proj_dim)
    keys = bank.balanced_keys()
    cfg = ContrastiveConfig(0.2, 0.9, qp=2, qn=5)
    counts = np.asarray(profile.counts)

    out, cache = net.forward_siamese(x1, x2)
    mined = spm_loss_batch(out.z1, y, keys, counts, cfg).mined

    def total(with_grad=False):
        o, c = net.forward_siamese(x1, x2)
        cls, g1, g2 = siambs_batch(o.s1, o.s2, y, profile)
        cont = spm_loss_batch(o.z1, y, keys, counts, cfg, mined=mined)
        value = cls + lam * cont.value
        if not with_grad:
            return value
        return value, net.backward(c, lam * cont.grad, g1, g2)

    return net, total


def check_network_instance(rng, n_params=10):
    net, total = network_loss_setup(rng)
    _, grads = total(with_grad=True)
    flat = [(n, i) for n in sorted(net.params) for i in range(net.params[n].size)]
    picks = [flat[j] for j in rng.choice(len(flat), size=n_params, replace=False)]
    analytic = np.array([grads[n].reshape(-1)[i] for n, i in picks])
    x0 = np.array([net.params[n].reshape(-1)[i] for n, i in picks])

    def f(v):
        for (n, i), val in zip(picks, v):
            net.params[n].reshape(-1)[i] = val
        return total()

    numeric = finite_difference_gradient(f, x0)
    f(x0)
    return relative_error(analytic, numeric)


CHECKS = {
    "bq_loss": (check_bq_instance, LOSS_TOLERANCE, 1),
    "spm_loss": (check_spm_instance, LOSS_TOLERANCE, 2),
    "siambs_loss": (check_siambs_instance, LOSS_TOLERANCE, 3),
    "network": (check_network_instance, NETWORK_TOLERANCE, 4),
}


@dataclass
class CheckSummary:
    name: str
    tolerance: float
    errors: list = field(default_factory=list)

    @property
    def max_error(self):
        return max(self.errors) if self.errors else 0.0

    @property
    def worst_instance(self):
        return int(np.argmax(self.errors)) if self.errors else None

    @property
    def passed(self):
        return self.max_error < self.tolerance


def run_suite(instances=200, network_instances=20, seed=0, tolerance=None):
    """Run every check; instance ``i`` of a check is reproducible from ``(seed, i)``."""
    out = []
    for name, (fn, tol, tag) in CHECKS.items():
        n = network_instances if name == "network" else instances
        s = CheckSummary(name, tol if tolerance is None else tolerance)
        for i in range(n):
            s.errors.append(fn(_instance_rng(seed, i, tag)))
        out.append(s)
    return out
