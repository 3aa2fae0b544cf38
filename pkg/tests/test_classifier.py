import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rescom.classifier import balanced_softmax_batch, balanced_softmax_loss, siambs_batch, siambs_loss
from rescom.imbalance import LongTailProfile
from rescom.numerics import finite_difference_gradient, relative_error

logit_vec = arrays(np.float64, 4, elements=st.floats(-8, 8))


def plain_ce(s, y):
    s = np.asarray(s, float)
    m = s.max()
    return float(m + math.log(np.exp(s - m).sum()) - s[y])


def test_zero_logits_prior_only():
    res = balanced_softmax_loss(np.zeros(3), 2, LongTailProfile((100, 10, 1)))
    assert res.value == pytest.approx(math.log(111), abs=1e-12)


def test_balanced_counts_reduce_to_cross_entropy():
    s = np.array([0.4, -1.0, 2.0])
    res = balanced_softmax_loss(s, 1, LongTailProfile((7, 7, 7)))
    assert res.value == pytest.approx(plain_ce(s, 1), abs=1e-12)


def test_gradient_finite_difference():
    rng = np.random.default_rng(0)
    prof = LongTailProfile((300, 50, 9, 2))
    for _ in range(20):
        s = rng.normal(scale=3, size=4)
        y = int(rng.integers(4))
        res = balanced_softmax_loss(s, y, prof)
        num = finite_difference_gradient(lambda v: balanced_softmax_loss(v, y, prof).value, s)
        assert relative_error(res.grad, num) < 1e-6


@given(logit_vec, st.integers(0, 3))
def test_gradient_sums_to_zero(s, y):
    g = balanced_softmax_loss(s, y, LongTailProfile((40, 20, 5, 1))).grad
    assert abs(g.sum()) < 1e-12


@given(logit_vec, st.floats(-50, 50))
def test_logit_shift_invariance(s, c):
    prof = LongTailProfile((40, 20, 5, 1))
    assert balanced_softmax_loss(s + c, 0, prof).value == pytest.approx(
        balanced_softmax_loss(s, 0, prof).value, abs=1e-9)


@given(logit_vec, logit_vec, st.integers(0, 3))
def test_siambs_symmetric(s1, s2, y):
    prof = LongTailProfile((40, 20, 5, 1))
    a = siambs_loss(s1, s2, y, prof)
    b = siambs_loss(s2, s1, y, prof)
    assert a.value == pytest.approx(b.value, abs=1e-12)
    np.testing.assert_allclose(a.grad_view1, b.grad_view2)


def test_siambs_identical_views_equal_single():
    s = np.array([1.0, -0.5, 0.2])
    prof = LongTailProfile((30, 6, 2))
    assert siambs_loss(s, s, 2, prof).value == pytest.approx(balanced_softmax_loss(s, 2, prof).value)


@given(st.integers(1, 1000))
@settings(max_examples=20)
def test_prior_scaling_keeps_prediction(c):
    s = np.array([0.3, 1.1, -0.4, 0.9])
    counts = np.array([80, 40, 10, 2])
    adj = lambda n: s + np.log(n)  # noqa: E731
    assert np.argmax(adj(counts)) == np.argmax(adj(counts * c))


def test_rejects_bad_inputs():
    with pytest.raises(ValueError):
        balanced_softmax_loss([0.0, 1.0], 0, LongTailProfile((5, 4, 3)))
    with pytest.raises(ValueError):
        siambs_loss([0.0, 1.0], [0.0, 1.0, 2.0], 0, LongTailProfile((5, 4)))


def test_batch_matches_single():
    rng = np.random.default_rng(1)
    prof = LongTailProfile((50, 20, 4))
    s1, s2 = rng.normal(size=(2, 6, 3))
    y = rng.integers(0, 3, 6)
    mean, grad, values = balanced_softmax_batch(s1, y, prof)
    for i in range(6):
        ref = balanced_softmax_loss(s1[i], int(y[i]), prof)
        assert values[i] == pytest.approx(ref.value, abs=1e-12)
        np.testing.assert_allclose(grad[i] * 6, ref.grad, atol=1e-12)
    v, g1, g2 = siambs_batch(s1, s2, y, prof)
    assert v == pytest.approx(np.mean([siambs_loss(a, b, int(t), prof).value for a, b, t in zip(s1, s2, y)]))
