import numpy as np
import pytest
from scipy.stats import spearmanr

from rescom.data import Dataset, make_balanced_test, make_longtailed_synthetic
from rescom.gradcheck import network_loss_setup
from rescom.imbalance import LongTailProfile
from rescom.trainer import (
    METRIC_COLUMNS,
    TrainConfig,
    WarmupError,
    evaluate,
    expected_calibration_error,
    metrics_to_csv,
    report_from_logits,
    train,
    train_baseline,
)

SMALL = dict(epochs=3, batch_size=32, hidden=(16,), proj_hidden=16, proj_dim=8, queue_size=4)


@pytest.fixture(scope="module")
def lt_data():
    return (make_longtailed_synthetic(5, 8, 10, 60, seed=1),
            make_balanced_test(5, 8, 20, seed=1))


def ece_oracle(conf, correct, n_bins=15):
    total = 0.0
    for b in range(n_bins):
        lo, hi = b / n_bins, (b + 1) / n_bins
        members = [i for i, c in enumerate(conf) if (lo < c <= hi) or (b == 0 and c == 0)]
        if members:
            acc = sum(correct[i] for i in members) / len(members)
            cbar = sum(conf[i] for i in members) / len(members)
            total += len(members) / len(conf) * abs(acc - cbar)
    return total


class TestECE:
    def test_hand_case(self):
        conf = [0.9, 0.75, 0.62, 0.31]
        assert expected_calibration_error(conf, [1, 0, 1, 1]) == pytest.approx(0.48, abs=1e-12)

    def test_shared_bin(self):
        assert expected_calibration_error([0.9, 0.91], [1, 0]) == pytest.approx(0.405, abs=1e-12)

    def test_against_loop_oracle(self):
        rng = np.random.default_rng(0)
        conf = rng.uniform(0.1, 1.0, 500)
        correct = (rng.random(500) < conf).astype(int)
        assert expected_calibration_error(conf, correct) == pytest.approx(
            ece_oracle(list(conf), list(correct)), abs=1e-12)

    def test_perfect_classifier(self):
        rng = np.random.default_rng(1)
        labels = rng.integers(0, 4, 300)
        logits = rng.normal(size=(300, 4))
        logits[np.arange(300), labels] += 6.0
        rep = report_from_logits(logits, labels, LongTailProfile((500, 200, 50, 5)))
        assert rep.top1_all == 1.0
        probs = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
        assert rep.ece == pytest.approx(1 - probs.max(axis=1).mean(), abs=1e-12)


def test_random_logits_near_chance():
    rng = np.random.default_rng(2)
    n = 100_000
    rep = report_from_logits(rng.normal(size=(n, 10)), rng.integers(0, 10, n),
                             LongTailProfile.exponential(10, 100, 500))
    assert abs(rep.top1_all - 0.1) < 0.01


def test_group_accuracy_identity():
    rng = np.random.default_rng(3)
    labels = np.repeat(np.arange(6), 30)
    logits = rng.normal(size=(180, 6))
    prof = LongTailProfile((500, 300, 80, 30, 10, 3))
    rep = report_from_logits(logits, labels, prof)
    pieces = [(rep.group_counts[g], a) for g, a in
              (("many", rep.top1_many), ("medium", rep.top1_medium), ("few", rep.top1_few))]
    total = sum(n * a for n, a in pieces if n)
    assert total == pytest.approx(180 * rep.top1_all)


def test_absent_group_reported_as_none():
    rep = report_from_logits(np.eye(3), [0, 1, 2], LongTailProfile((500, 400, 300)))
    assert rep.top1_few is None and rep.top1_medium is None
    assert "top1_few: absent" in rep.to_text()


def test_total_loss_affine_in_lambda():
    values = [network_loss_setup(np.random.default_rng(4), lam=lam)[1]() for lam in (0.0, 0.5, 1.0)]
    assert values[1] == pytest.approx(0.5 * (values[0] + values[2]), abs=1e-12)


def test_toy_smoke():
    x = np.random.default_rng(5).standard_normal((10, 3))
    y = np.array([0] * 7 + [1] * 3)
    data = Dataset(x, y, 2)
    res = train(TrainConfig(epochs=1, batch_size=4, hidden=(8,), proj_hidden=8, proj_dim=4,
                            queue_size=4), data)
    assert all(np.isfinite(res.log[0][c]) for c in ("cls_loss", "cont_loss", "total_loss"))
    z = res.network.embed(x)
    np.testing.assert_allclose(np.linalg.norm(z, axis=1), 1.0, atol=1e-6)
    assert list(res.bank.occupancy()) == [4, 4]


def test_fixed_seed_is_deterministic(lt_data):
    data, test = lt_data
    cfg = TrainConfig(**SMALL, qp=2, qn=6)
    a = train(cfg, data, test).metrics_csv()
    b = train(cfg, data, test).metrics_csv()
    assert a == b
    assert a.splitlines()[0] == ",".join(METRIC_COLUMNS)
    c = train(TrainConfig(**SMALL, qp=2, qn=6, seed=1), data, test).metrics_csv()
    assert a != c


def test_lambda_zero_equals_siambs(lt_data):
    data, test = lt_data
    a = train(TrainConfig(**SMALL, lam=0.0), data, test)
    b = train_baseline("siambs", TrainConfig(**SMALL), data, test)
    assert a.metrics_csv() == b.metrics_csv()
    for k in a.network.params:
        np.testing.assert_array_equal(a.network.params[k], b.network.params[k])


@pytest.mark.parametrize("variant", ["supcon_balsfx", "original_queue", "reversed_queue"])
def test_baselines_run(lt_data, variant):
    data, test = lt_data
    res = train_baseline(variant, TrainConfig(**SMALL), data, test)
    assert len(res.log) == 3
    assert all(np.isfinite(r["total_loss"]) for r in res.log)
    assert res.bank.policy != "balanced"


def test_original_queue_tracks_label_frequencies():
    data = make_longtailed_synthetic(6, 8, 10, 300, seed=2)
    res = train_baseline("original_queue", TrainConfig(**{**SMALL, "queue_size": 40, "epochs": 2}), data)
    occ = res.bank.occupancy()
    m = occ.sum()
    freqs = data.profile.frequencies
    assert m == 240
    bound = 4 * np.sqrt(m * freqs * (1 - freqs)) + 1
    assert np.all(np.abs(occ - m * freqs) <= bound)


def test_reversed_queue_inverts_occupancy():
    data = make_longtailed_synthetic(8, 8, 20, 200, seed=3)
    res = train_baseline("reversed_queue", TrainConfig(**{**SMALL, "queue_size": 10, "epochs": 1}), data)
    rho = spearmanr(res.bank.occupancy(), data.class_counts()).statistic
    assert rho < 0


def test_warmup_infeasible():
    x = np.random.default_rng(6).standard_normal((6, 2))
    data = Dataset(x, [0, 0, 0, 0, 0, 1], 2)
    with pytest.raises(WarmupError):
        train(TrainConfig(epochs=1, hidden=(4,), proj_hidden=4, proj_dim=2, queue_size=8,
                          max_warmup_passes=3), data)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(variant="moco")
    with pytest.raises(ValueError):
        TrainConfig(lam=-1)
    with pytest.raises(ValueError):
        TrainConfig(beta=1.0)


def test_evaluate_uses_classifier_logits(lt_data):
    data, test = lt_data
    res = train(TrainConfig(**SMALL, lam=0.0), data)
    rep = evaluate(res.network, test, data.profile)
    pred = np.argmax(res.network.logits(test.features), axis=1)
    assert rep.top1_all == pytest.approx(np.mean(pred == test.labels))


def test_metrics_csv_blank_when_not_evaluated():
    csv = metrics_to_csv([{"epoch": 0, "lr": 0.1, "cls_loss": 1.0, "cont_loss": 0.0, "total_loss": 1.0}])
    assert csv.splitlines()[1] == "0,0.1,1.0,0.0,1.0,,,,,"
