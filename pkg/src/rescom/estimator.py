"""scikit-learn compatible front end for the training loop."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .data import Dataset
from .numerics import softmax
from .trainer import TrainConfig, evaluate, train


class ResComClassifier(ClassifierMixin, TransformerMixin, BaseEstimator):
    """Long-tailed classifier trained with two-view balanced softmax plus a
    class-balanced, hard-pair-mined contrastive regularizer.

    ``variant`` selects the ablation baselines (``"supcon_balsfx"``,
    ``"original_queue"``, ``"reversed_queue"``, ``"siambs"``). ``transform``
    returns encoder features; prediction uses the classifier branch only.

    Parameters
    ----------
    lam : float
        Weight of the contrastive term.
    temperature, beta : float
        Contrastive temperature and effective-number parameter.
    qp, qn : int or None
        Hard positives / negatives kept per query; ``None`` keeps all.
    queue_size : int
        Keys per class in the memory.
    random_state : int
        Seed for every random stream of the run.
    """

    def __init__(self, variant="rescom", lam=0.5, epochs=30, batch_size=128, lr=0.1,
                 schedule="cosine", momentum=0.9, temperature=0.2, beta=0.99, qp=None, qn=None,
                 queue_size=32, hidden=(64, 64), proj_hidden=64, proj_dim=32, noise_sigma=0.3,
                 dropout_p=0.1, random_state=0):
        self.variant = variant
        self.lam = lam
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.schedule = schedule
        self.momentum = momentum
        self.temperature = temperature
        self.beta = beta
        self.qp = qp
        self.qn = qn
        self.queue_size = queue_size
        self.hidden = hidden
        self.proj_hidden = proj_hidden
        self.proj_dim = proj_dim
        self.noise_sigma = noise_sigma
        self.dropout_p = dropout_p
        self.random_state = random_state

    def _config(self):
        return TrainConfig(
            variant=self.variant, lam=self.lam, epochs=self.epochs, batch_size=self.batch_size,
            lr=self.lr, schedule=self.schedule, momentum=self.momentum,
            temperature=self.temperature, beta=self.beta, qp=self.qp, qn=self.qn,
            queue_size=self.queue_size, hidden=tuple(self.hidden), proj_hidden=self.proj_hidden,
            proj_dim=self.proj_dim, noise_sigma=self.noise_sigma, dropout_p=self.dropout_p,
            seed=0 if self.random_state is None else int(self.random_state),
        )

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        check_classification_targets(y)
        self.classes_, y_enc = np.unique(y, return_inverse=True)
        if self.classes_.shape[0] < 2:
            raise ValueError("need samples of at least two classes")
        self.n_features_in_ = X.shape[1]
        data = Dataset(X, y_enc, self.classes_.shape[0])
        result = train(self._config(), data)
        self.network_ = result.network
        self.profile_ = result.profile
        self.history_ = result.log
        return self

    def _validate(self, X):
        check_is_fitted(self, "network_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return X

    def decision_function(self, X):
        X = self._validate(X)
        return self.network_.logits(X)

    def predict_proba(self, X):
        return softmax(self.decision_function(X), axis=1)

    def predict(self, X):
        scores = self.decision_function(X)
        return self.classes_[np.argmax(scores, axis=1)]

    def transform(self, X):
        X = self._validate(X)
        return self.network_.features(X)

    def embed(self, X):
        """Unit-norm contrastive embeddings (projection head output)."""
        X = self._validate(X)
        return self.network_.embed(X)

    def evaluate(self, X, y, thresholds=None):
        """Group accuracies and ECE; groups come from the training class counts."""
        X = self._validate(X)
        y_enc = np.searchsorted(self.classes_, y)
        if np.any(self.classes_[np.clip(y_enc, 0, len(self.classes_) - 1)] != np.asarray(y)):
            raise ValueError("y contains labels not seen during fit")
        test = Dataset(X, y_enc, self.classes_.shape[0])
        return evaluate(self.network_, test, self.profile_, thresholds)
