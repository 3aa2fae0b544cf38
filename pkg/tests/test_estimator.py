import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.model_selection import cross_val_score
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import StandardScaler

from rescom import ResComClassifier
from rescom.data import make_balanced_test, make_longtailed_synthetic

FAST = dict(epochs=3, batch_size=32, hidden=(16,), proj_hidden=16, proj_dim=8, queue_size=4)


@pytest.fixture(scope="module")
def data():
    tr = make_longtailed_synthetic(4, 6, 5, 60, class_separation=4.0, seed=2)
    te = make_balanced_test(4, 6, 25, class_separation=4.0, seed=2)
    return tr, te


def test_get_params_and_clone():
    est = ResComClassifier(lam=0.7, qp=2, qn=5)
    params = est.get_params()
    assert params["lam"] == 0.7 and params["qn"] == 5
    twin = clone(est)
    assert twin.get_params() == params and twin is not est


def test_not_fitted():
    with pytest.raises(NotFittedError):
        ResComClassifier().predict(np.zeros((1, 3)))


def test_fit_predict_with_string_labels(data):
    tr, te = data
    names = np.array(["ant", "bee", "cat", "dog"])
    est = ResComClassifier(**FAST).fit(tr.features, names[tr.labels])
    assert list(est.classes_) == list(names)
    pred = est.predict(te.features)
    assert set(pred) <= set(names)
    proba = est.predict_proba(te.features)
    np.testing.assert_allclose(proba.sum(axis=1), 1.0)
    assert est.transform(te.features).shape == (100, 16)
    np.testing.assert_allclose(np.linalg.norm(est.embed(te.features), axis=1), 1.0, atol=1e-5)
    assert est.score(te.features, names[te.labels]) > 0.5
    rep = est.evaluate(te.features, names[te.labels])
    assert rep.top1_all == pytest.approx(est.score(te.features, names[te.labels]))
    with pytest.raises(ValueError):
        est.evaluate(te.features[:2], ["ant", "emu"])


def test_feature_count_checked(data):
    tr, _ = data
    est = ResComClassifier(**FAST).fit(tr.features, tr.labels)
    with pytest.raises(ValueError):
        est.predict(np.zeros((2, 5)))


def test_same_seed_same_model(data):
    tr, te = data
    a = ResComClassifier(**FAST, random_state=3).fit(tr.features, tr.labels)
    b = ResComClassifier(**FAST, random_state=3).fit(tr.features, tr.labels)
    np.testing.assert_array_equal(a.decision_function(te.features), b.decision_function(te.features))


def test_pipeline_and_cross_validation(data):
    tr, _ = data
    pipe = make_pipeline(StandardScaler(), ResComClassifier(**FAST, variant="siambs"))
    scores = cross_val_score(pipe, tr.features, tr.labels, cv=2)
    assert scores.shape == (2,) and np.all(scores > 0.25)


def test_single_class_rejected():
    with pytest.raises(ValueError):
        ResComClassifier(**FAST).fit(np.zeros((5, 2)), np.zeros(5))
