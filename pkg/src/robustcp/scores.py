"""Nonconformity scores and the prediction sets obtained by inverting them.

Four score kinds are supported: the raw outcome, the absolute residual
around a fitted mean, the conformalized-quantile-regression score, and a
generalized inverse-quantile score for finite outcome supports.  Inverting a
score at a threshold gives the prediction set {y : score(x, y) <= t}.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import OutOfSupport, UnfittedModel
from .learners import (
    BoostedStumpRegressor,
    KnnClassProbModel,
    KnnQuantileRegressor,
    KnnRegressor,
)


@dataclass(frozen=True)
class PredictionSet:
    """Either a real interval, an explicit label set, or the whole space."""

    kind: str  # "interval" | "labels" | "all"
    lo: float = math.nan
    hi: float = math.nan
    labels: tuple = ()

    @classmethod
    def interval(cls, lo: float, hi: float) -> "PredictionSet":
        return cls(kind="interval", lo=float(lo), hi=float(hi))

    @classmethod
    def label_set(cls, labels) -> "PredictionSet":
        return cls(kind="labels", labels=tuple(float(v) for v in labels))

    @classmethod
    def everything(cls) -> "PredictionSet":
        return cls(kind="all")

    def contains(self, y: float) -> bool:
        if self.kind == "all":
            return True
        if self.kind == "labels":
            return any(np.isclose(y, v) for v in self.labels)
        return self.lo <= y <= self.hi

    def width(self) -> float:
        if self.kind == "all":
            return math.inf
        if self.kind == "labels":
            return float(len(self.labels))
        return max(self.hi - self.lo, 0.0)


class ScoreModel:
    """Base interface: a fitted map (x, y) -> score, invertible in y."""

    kind = "base"

    def score_many(self, X, y) -> np.ndarray:
        raise NotImplementedError

    def invert(self, x, threshold: float) -> PredictionSet:
        raise NotImplementedError


class RawScore(ScoreModel):
    kind = "raw"

    def score_many(self, X, y):
        return np.asarray(y, dtype=float).copy()

    def invert(self, x, threshold):
        if math.isinf(threshold) and threshold > 0:
            return PredictionSet.everything()
        return PredictionSet.interval(-math.inf, threshold)


class AbsoluteResidualScore(ScoreModel):
    kind = "absolute_residual"

    def __init__(self, mu_model):
        self.mu = mu_model

    def score_many(self, X, y):
        return np.abs(np.asarray(y, dtype=float) - self.mu.predict(X))

    def invert(self, x, threshold):
        if math.isinf(threshold) and threshold > 0:
            return PredictionSet.everything()
        center = float(self.mu.predict(np.atleast_2d(np.asarray(x, dtype=float)))[0])
        return PredictionSet.interval(center - threshold, center + threshold)


class CqrScore(ScoreModel):
    """max(q_lo - y, y - q_hi) with pointwise crossing repair."""

    kind = "cqr"

    def __init__(self, q_lo_model, q_hi_model, alpha: float):
        self.q_lo = q_lo_model
        self.q_hi = q_hi_model
        self.alpha = float(alpha)

    def _bounds(self, X):
        lo = self.q_lo.predict(X)
        hi = self.q_hi.predict(X)
        crossed = lo > hi
        lo2 = np.where(crossed, hi, lo)
        hi2 = np.where(crossed, lo, hi)
        return lo2, hi2

    def score_many(self, X, y):
        y = np.asarray(y, dtype=float)
        lo, hi = self._bounds(X)
        return np.maximum(lo - y, y - hi)

    def invert(self, x, threshold):
        if math.isinf(threshold) and threshold > 0:
            return PredictionSet.everything()
        lo, hi = self._bounds(np.atleast_2d(np.asarray(x, dtype=float)))
        return PredictionSet.interval(float(lo[0]) - threshold, float(hi[0]) + threshold)


class InverseQuantileScore(ScoreModel):
    """Deterministic generalized inverse-quantile score on a finite support.

    The score of (x, y) is the total estimated probability mass of the
    labels ranked at least as likely as y (ties broken by support order),
    so smaller scores mark more typical labels.
    """

    kind = "inverse_quantile"

    def __init__(self, prob_model, support):
        self.prob_model = prob_model
        self.support = np.asarray(support, dtype=float)

    def _scores_all_labels(self, X) -> np.ndarray:
        probs = self.prob_model.predict_proba(X)  # (n, L)
        order = np.argsort(-probs, axis=1, kind="stable")
        sorted_probs = np.take_along_axis(probs, order, axis=1)
        cum = np.cumsum(sorted_probs, axis=1)
        scores = np.empty_like(probs)
        np.put_along_axis(scores, order, cum, axis=1)
        return scores

    def _label_index(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        idx = np.searchsorted(self.support, y)
        idx = np.clip(idx, 0, len(self.support) - 1)
        if not np.allclose(self.support[idx], y):
            raise OutOfSupport("outcome not in the declared support")
        return idx

    def score_many(self, X, y):
        scores = self._scores_all_labels(X)
        idx = self._label_index(y)
        return scores[np.arange(len(idx)), idx]

    def invert(self, x, threshold):
        if math.isinf(threshold) and threshold > 0:
            return PredictionSet.everything()
        scores = self._scores_all_labels(np.atleast_2d(np.asarray(x, dtype=float)))[0]
        return PredictionSet.label_set(self.support[scores <= threshold])


def score(model: ScoreModel, x, y: float) -> float:
    """Score a single point."""
    if model is None:
        raise UnfittedModel("no score model")
    return float(model.score_many(np.atleast_2d(np.asarray(x, dtype=float)), [y])[0])


def invert_score(model: ScoreModel, x, threshold: float) -> PredictionSet:
    if model is None:
        raise UnfittedModel("no score model")
    return model.invert(x, threshold)


def fit_score_model(
    kind: str,
    X,
    y,
    alpha: float = 0.1,
    learner: str = "knn",
    support=None,
    n_neighbors: int | None = None,
) -> ScoreModel:
    """Fit a score model of the requested kind on complete cases.

    ``learner`` selects kNN (default) or gradient-boosted stumps for the
    point/quantile regressions; the inverse-quantile kind always uses the
    neighbor-frequency class model and requires ``support``.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if kind == "raw":
        return RawScore()
    if kind == "absolute_residual":
        if learner == "boosted":
            mu = BoostedStumpRegressor().fit(X, y)
        else:
            mu = KnnRegressor(n_neighbors).fit(X, y)
        return AbsoluteResidualScore(mu)
    if kind == "cqr":
        q_lo = KnnQuantileRegressor(alpha / 2.0, n_neighbors).fit(X, y)
        q_hi = KnnQuantileRegressor(1.0 - alpha / 2.0, n_neighbors).fit(X, y)
        return CqrScore(q_lo, q_hi, alpha)
    if kind == "inverse_quantile":
        if support is None:
            raise ValueError("inverse_quantile requires a declared outcome support")
        prob = KnnClassProbModel(support, n_neighbors).fit(X, y)
        return InverseQuantileScore(prob, support)
    raise ValueError(f"unknown score kind: {kind}")
