"""Small self-contained learners used for score models and nuisance fits.

Defaults are a standardized k-nearest-neighbor regressor (k = ceil(sqrt(n)))
and an L2-regularized logistic regression.  A gradient-boosted-stumps
alternative is available for the score-model regressions.  All learners are
deterministic given their training data.
"""

from __future__ import annotations

import numpy as np
from sklearn.ensemble import GradientBoostingRegressor
from sklearn.linear_model import LogisticRegression
from sklearn.neighbors import NearestNeighbors

from .errors import UnfittedModel


def _as_matrix(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    return X


class _Standardizer:
    def fit(self, X: np.ndarray):
        self.mean_ = X.mean(axis=0)
        sd = X.std(axis=0)
        sd[sd == 0] = 1.0
        self.sd_ = sd
        return self

    def transform(self, X: np.ndarray) -> np.ndarray:
        return (X - self.mean_) / self.sd_


class KnnIndex:
    """Shared neighbor lookup on standardized features."""

    def __init__(self, n_neighbors: int | None = None):
        self.n_neighbors = n_neighbors
        self._nn = None

    def fit(self, X):
        X = _as_matrix(X)
        self._scaler = _Standardizer().fit(X)
        k = self.n_neighbors or int(np.ceil(np.sqrt(X.shape[0])))
        self.k_ = min(max(k, 1), X.shape[0])
        self._nn = NearestNeighbors(n_neighbors=self.k_).fit(self._scaler.transform(X))
        return self

    def neighbors(self, X) -> np.ndarray:
        if self._nn is None:
            raise UnfittedModel("neighbor index not fitted")
        X = _as_matrix(X)
        return self._nn.kneighbors(self._scaler.transform(X), return_distance=False)


class KnnRegressor:
    """Neighbor-average regressor; targets may be vectors or matrices."""

    def __init__(self, n_neighbors: int | None = None):
        self._index = KnnIndex(n_neighbors)
        self._targets = None

    def fit(self, X, targets):
        self._index.fit(X)
        self._targets = np.asarray(targets, dtype=float)
        return self

    def predict(self, X) -> np.ndarray:
        if self._targets is None:
            raise UnfittedModel("regressor not fitted")
        idx = self._index.neighbors(X)
        return self._targets[idx].mean(axis=1)


class KnnQuantileRegressor:
    """Empirical quantile of the neighbor targets."""

    def __init__(self, quantile: float, n_neighbors: int | None = None):
        self.quantile = float(quantile)
        self._index = KnnIndex(n_neighbors)
        self._targets = None

    def fit(self, X, y):
        self._index.fit(X)
        self._targets = np.asarray(y, dtype=float)
        return self

    def predict(self, X) -> np.ndarray:
        if self._targets is None:
            raise UnfittedModel("regressor not fitted")
        idx = self._index.neighbors(X)
        return np.quantile(self._targets[idx], self.quantile, axis=1)


class KnnClassProbModel:
    """Neighbor-frequency class probabilities over a declared finite support."""

    def __init__(self, support, n_neighbors: int | None = None):
        self.support = np.asarray(support, dtype=float)
        self._index = KnnIndex(n_neighbors)
        self._labels = None

    def fit(self, X, y):
        self._index.fit(X)
        y = np.asarray(y, dtype=float)
        codes = np.searchsorted(self.support, y)
        if not np.allclose(self.support[np.clip(codes, 0, len(self.support) - 1)], y):
            raise ValueError("training outcomes outside the declared support")
        self._labels = codes
        return self

    def predict_proba(self, X) -> np.ndarray:
        if self._labels is None:
            raise UnfittedModel("class model not fitted")
        idx = self._index.neighbors(X)
        n_classes = len(self.support)
        counts = np.zeros((idx.shape[0], n_classes))
        for c in range(n_classes):
            counts[:, c] = (self._labels[idx] == c).sum(axis=1)
        return counts / idx.shape[1]


class BoostedStumpRegressor:
    """Gradient-boosted stumps; deterministic alternative to kNN."""

    def __init__(self, n_estimators: int = 100, learning_rate: float = 0.1):
        self._model = GradientBoostingRegressor(
            max_depth=1, n_estimators=n_estimators, learning_rate=learning_rate, random_state=0
        )
        self._fitted = False

    def fit(self, X, y):
        self._model.fit(_as_matrix(X), np.asarray(y, dtype=float))
        self._fitted = True
        return self

    def predict(self, X) -> np.ndarray:
        if not self._fitted:
            raise UnfittedModel("regressor not fitted")
        return self._model.predict(_as_matrix(X))


class LogisticModel:
    """Regularized logistic regression with a constant fallback.

    When the training labels contain a single class the model degenerates to
    that class's probability (so e.g. a stage with no dropout predicts
    survival probability one before clipping).
    """

    def __init__(self, C: float = 1.0):
        self.C = float(C)
        self._model = None
        self._constant = None

    def fit(self, X, y):
        X = _as_matrix(X)
        y = np.asarray(y, dtype=int)
        classes = np.unique(y)
        if classes.size == 1:
            self._constant = float(classes[0])
        else:
            self._model = LogisticRegression(C=self.C, max_iter=1000).fit(X, y)
        return self

    def predict_proba_one(self, X) -> np.ndarray:
        """P(label = 1 | x)."""
        if self._constant is not None:
            return np.full(_as_matrix(X).shape[0], self._constant)
        if self._model is None:
            raise UnfittedModel("logistic model not fitted")
        return self._model.predict_proba(_as_matrix(X))[:, 1]

    @property
    def coef_(self):
        if self._model is None:
            raise UnfittedModel("no coefficients for a constant model")
        return self._model.coef_
