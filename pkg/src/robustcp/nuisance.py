"""Propensity and outcome-regression nuisance fits for each coarsening regime.

A fitted ``NuisanceSet`` bundles, per regime, the stagewise propensity models
(a stage-1 odds model plus conditional survival models) and the stagewise
conditional-CDF models of the outcome/score, all evaluated on a shared theta
knot grid.  The monotone regimes are fitted backwards: the terminal CDF on
complete cases first, then pseudo-outcome regressions stage by stage.
Analytic oracle variants exist for the simulation settings that admit
closed-form truths.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.isotonic import isotonic_regression

from .core import CoarsenedRecord, MonotoneGridFunction, PatternTable
from .errors import InsufficientData, MissingNuisance, NoClosedForm
from .learners import KnnIndex, LogisticModel

TRIM_FLOOR = 0.01


# regime tags

@dataclass(frozen=True)
class Regime:
    kind: str  # "covariate_shift" | "monotone" | "nonmonotone"
    D: int = 0
    table: PatternTable | None = None

    @classmethod
    def covariate_shift(cls) -> "Regime":
        return cls(kind="covariate_shift", D=0)

    @classmethod
    def monotone(cls, D: int) -> "Regime":
        return cls(kind="monotone", D=int(D))

    @classmethod
    def nonmonotone(cls, table: PatternTable) -> "Regime":
        return cls(kind="nonmonotone", D=table.D, table=table)


def _reach(record: CoarsenedRecord, D: int) -> int:
    """Highest stage index the record survives: full counts as D+1."""
    return D + 1 if record.level.is_full else record.level.k


def feature_matrix(records, upto: int) -> np.ndarray:
    """Stack observed_prefix(upto) rows; upto=0 gives the baseline covariates."""
    return np.vstack([r.observed_prefix(upto) for r in records])


def _isotonic_rows(M: np.ndarray) -> np.ndarray:
    out = np.empty_like(M)
    for i in range(M.shape[0]):
        out[i] = isotonic_regression(M[i])
    return out


class PropensityModel:
    """Stage-j propensity: stage 1 emits odds, later stages survival probs.

    Stage 1 models P(C=0 | x) and returns the odds p/(1-p) clipped to
    [0, 1/trim_floor].  Stage j+1 models P(C > j | x, z_1..z_j, C >= j) and
    returns probabilities clipped to [trim_floor, 1].  ``trimmed_total``
    counts predictions the clip actually changed.
    """

    def __init__(self, stage: int, predictor=None, trim_floor: float = TRIM_FLOOR):
        self.stage = int(stage)
        self.trim_floor = float(trim_floor)
        self._predictor = predictor  # LogisticModel or callable F -> raw values
        self.trimmed_total = 0

    def _raw(self, F: np.ndarray) -> np.ndarray:
        if isinstance(self._predictor, LogisticModel):
            p = self._predictor.predict_proba_one(F)
            if self.stage == 1:
                p = np.clip(p, None, 1.0 - 1e-12)
                return p / (1.0 - p)
            return p
        return np.asarray(self._predictor(F), dtype=float)

    def predict(self, F) -> np.ndarray:
        F = np.atleast_2d(np.asarray(F, dtype=float))
        raw = self._raw(F)
        if self.stage == 1:
            out = np.clip(raw, 0.0, 1.0 / self.trim_floor)
        else:
            out = np.clip(raw, self.trim_floor, 1.0)
        self.trimmed_total += int(np.sum(out != raw))
        return out


class OutcomeCdfModel:
    """Stage-j conditional CDF of the outcome/score on a shared theta grid.

    ``values(F, thetas)`` returns an (n, len(thetas)) matrix of CDF values at
    arbitrary thresholds; grid-fitted models extend as right-continuous step
    functions (0 below the first knot, last value above the grid).
    """

    def __init__(self, stage: int, grid):
        self.stage = int(stage)
        self.grid = np.asarray(grid, dtype=float)

    def cdf_matrix(self, F) -> np.ndarray:
        raise NotImplementedError

    def values(self, F, thetas) -> np.ndarray:
        base = self.cdf_matrix(F)
        thetas = np.asarray(thetas, dtype=float)
        idx = np.searchsorted(self.grid, thetas, side="right") - 1
        padded = np.concatenate([np.zeros((base.shape[0], 1)), base], axis=1)
        return padded[:, idx + 1]

    def grid_function(self, f) -> MonotoneGridFunction:
        row = self.cdf_matrix(np.atleast_2d(np.asarray(f, dtype=float)))[0]
        return MonotoneGridFunction(self.grid, row, left_limit=0.0)


class KnnCdfModel(OutcomeCdfModel):
    """Per-knot neighbor-average CDF with isotonic rearrangement and clipping."""

    def __init__(self, stage, grid, index: KnnIndex, targets: np.ndarray):
        super().__init__(stage, grid)
        self._index = index
        self._targets = targets  # (n_train, n_knots)

    def cdf_matrix(self, F):
        F = np.atleast_2d(np.asarray(F, dtype=float))
        idx = self._index.neighbors(F)
        pred = self._targets[idx].mean(axis=1)
        pred = _isotonic_rows(pred)
        return np.clip(pred, 0.0, 1.0)


class OracleCdfModel(OutcomeCdfModel):
    """Exact closed-form CDF; evaluates off-grid thresholds analytically."""

    def __init__(self, stage, grid, fn):
        super().__init__(stage, grid)
        self._fn = fn  # (F, thetas) -> (n, len(thetas))

    def cdf_matrix(self, F):
        return self.values(F, self.grid)

    def values(self, F, thetas):
        F = np.atleast_2d(np.asarray(F, dtype=float))
        thetas = np.asarray(thetas, dtype=float)
        return np.clip(np.asarray(self._fn(F, thetas), dtype=float), 0.0, 1.0)


@dataclass
class NuisanceSet:
    """All fitted nuisances for one regime.

    ``propensities[j-1]`` is the stage-j propensity model and
    ``outcomes[j-1]`` the stage-j CDF model m_j; both lists have length D+1
    (length 1 for covariate shift).  ``car_weights`` is only present in the
    non-monotone regime.
    """

    regime: Regime
    propensities: list
    outcomes: list
    grid: np.ndarray
    car_weights: object | None = None
    diagnostics: dict = field(default_factory=dict)

    def propensity(self, stage: int) -> PropensityModel:
        try:
            model = self.propensities[stage - 1]
        except IndexError:
            model = None
        if model is None or model.stage != stage:
            raise MissingNuisance(f"no propensity model for stage {stage}")
        return model

    def outcome(self, stage: int) -> OutcomeCdfModel:
        try:
            model = self.outcomes[stage - 1]
        except IndexError:
            model = None
        if model is None or model.stage != stage:
            raise MissingNuisance(f"no outcome model for stage {stage}")
        return model


MIN_SUBSAMPLE = 10


def fit_propensity_stage(train, stage: int, trim_floor: float = TRIM_FLOOR) -> PropensityModel:
    """Fit the stage-j propensity by regularized logistic regression.

    Stage 1 regresses 1{C=0} on x over all records.  Stage j+1 regresses
    survival 1{C > j} on (x, z_1..z_j) over the subsample {C >= j}; if that
    subsample never drops out the model degenerates to the constant 1.
    """
    stage = int(stage)
    if stage == 1:
        if len(train) < MIN_SUBSAMPLE:
            raise InsufficientData("fewer than 10 records for the stage-1 propensity")
        F = feature_matrix(train, 0)
        labels = np.array([1 if (not r.level.is_full and r.level.k == 0) else 0 for r in train])
        if labels.min() == labels.max():
            raise InsufficientData("stage-1 propensity needs both baseline-only and richer records")
        return PropensityModel(1, LogisticModel().fit(F, labels), trim_floor)
    j = stage - 1
    sub = [r for r in train if r.level.at_least(j)]
    if len(sub) < MIN_SUBSAMPLE:
        raise InsufficientData(f"fewer than 10 records reach stage {j}")
    F = feature_matrix(sub, j)
    labels = np.array([1 if r.level.at_least(j + 1) else 0 for r in sub])
    return PropensityModel(stage, LogisticModel().fit(F, labels), trim_floor)


def fit_terminal_cdf(train, grid, D: int | None = None, n_neighbors: int | None = None) -> OutcomeCdfModel:
    """Regress 1{Y <= theta_g} on the full covariate vector over complete cases."""
    complete = [r for r in train if r.level.is_full]
    if len(complete) < MIN_SUBSAMPLE:
        raise InsufficientData("fewer than 10 complete cases for the terminal CDF")
    if D is None:
        D = len(complete[0].z_blocks)
    grid = np.asarray(grid, dtype=float)
    F = feature_matrix(complete, D)
    y = np.array([r.y for r in complete], dtype=float)
    targets = (y[:, None] <= grid[None, :]).astype(float)
    index = KnnIndex(n_neighbors).fit(F)
    return KnnCdfModel(D + 1, grid, index, targets)


def pseudo_outcome_matrix(records, stage: int, nu: NuisanceSet, thetas) -> np.ndarray:
    """Stagewise IPW pseudo-outcomes H_j for records in {C >= stage}.

    H_{D+1} = 1{Y <= theta}; going down,
    H_j = m_{j+1} + 1{C >= j+1} / pi_{j+1} * (H_{j+1} - m_{j+1}),
    so the conditional mean of H_j given (x, z_1..z_{j-1}, C >= j) recovers
    m_j when the nuisances above stage j are correct.
    """
    D = nu.regime.D
    thetas = np.asarray(thetas, dtype=float)
    records = list(records)
    if any(not r.level.at_least(stage) for r in records):
        raise ValueError("pseudo-outcomes require records with C >= stage")
    n = len(records)
    reach = np.array([_reach(r, D) for r in records])
    H = np.zeros((n, thetas.size))
    top = reach >= D + 1
    if np.any(top):
        y = np.array([r.y for r in records if r.level.is_full], dtype=float)
        H[top] = (y[:, None] <= thetas[None, :]).astype(float)
    for j in range(D, stage - 1, -1):
        at_j = reach >= j  # records whose H_j must exist
        sub = [r for r, keep in zip(records, at_j) if keep]
        F = feature_matrix(sub, j)
        m_next = nu.outcome(j + 1).values(F, thetas)
        pi_next = nu.propensity(j + 1).predict(F)
        deeper = (reach[at_j] >= j + 1).astype(float)
        correction = deeper[:, None] / pi_next[:, None] * (H[at_j] - m_next)
        H[at_j] = m_next + correction
    return H


def build_pseudo_outcomes(records, stage: int, nuisances_above: NuisanceSet, theta: float) -> list:
    """Single-threshold wrapper around the vectorized pseudo-outcome recursion."""
    return list(pseudo_outcome_matrix(records, stage, nuisances_above, [theta])[:, 0])


def fit_sequential_regressions(
    train,
    grid,
    D: int,
    trim_floor: float = TRIM_FLOOR,
    n_neighbors: int | None = None,
) -> NuisanceSet:
    """Fit the full monotone nuisance set by backward pseudo-outcome regression.

    Fits the terminal CDF and every propensity stage, then for j = D..1
    regresses the stage-j pseudo-outcomes on (x, z_1..z_{j-1}) over {C >= j},
    one knot at a time with isotonic rearrangement.  D=0 reduces to the
    covariate-shift pair.
    """
    grid = np.asarray(grid, dtype=float)
    regime = Regime.covariate_shift() if D == 0 else Regime.monotone(D)
    propensities = [fit_propensity_stage(train, s, trim_floor) for s in range(1, D + 2)]
    outcomes: list = [None] * (D + 1)
    outcomes[D] = fit_terminal_cdf(train, grid, D, n_neighbors)
    nu = NuisanceSet(regime=regime, propensities=propensities, outcomes=outcomes, grid=grid)
    for j in range(D, 0, -1):
        sub = [r for r in train if r.level.at_least(j)]
        if len(sub) < MIN_SUBSAMPLE:
            raise InsufficientData(f"fewer than 10 records reach stage {j}")
        H = pseudo_outcome_matrix(sub, j, nu, grid)
        F = feature_matrix(sub, j - 1)
        index = KnnIndex(n_neighbors).fit(F)
        outcomes[j - 1] = KnnCdfModel(j, grid, index, H)
    nu.diagnostics["trimmed"] = {p.stage: p.trimmed_total for p in propensities}
    return nu


def fit_covshift_nuisances(
    train,
    grid,
    trim_floor: float = TRIM_FLOOR,
    n_neighbors: int | None = None,
) -> NuisanceSet:
    """Covariate-shift pair (stage-1 odds, score-CDF given x).

    Records must already carry the score in the outcome slot; levels other
    than baseline-only are treated as complete for the CDF fit.
    """
    grid = np.asarray(grid, dtype=float)
    pi1 = fit_propensity_stage(train, 1, trim_floor)
    complete = [r for r in train if r.level.is_full]
    if len(complete) < MIN_SUBSAMPLE:
        raise InsufficientData("fewer than 10 complete cases for the score CDF")
    F = feature_matrix(complete, 0)
    y = np.array([r.y for r in complete], dtype=float)
    targets = (y[:, None] <= grid[None, :]).astype(float)
    index = KnnIndex(n_neighbors).fit(F)
    m1 = KnnCdfModel(1, grid, index, targets)
    nu = NuisanceSet(
        regime=Regime.covariate_shift(), propensities=[pi1], outcomes=[m1], grid=grid
    )
    nu.diagnostics["trimmed"] = {1: pi1.trimmed_total}
    return nu


def default_grid(scores, n_knots: int = 201) -> np.ndarray:
    """Shared theta grid: [min - 3 IQR, max + 3 IQR] of the training scores."""
    scores = np.asarray(scores, dtype=float)
    if scores.size == 0:
        raise InsufficientData("no scores available to build the theta grid")
    q1, q3 = np.quantile(scores, [0.25, 0.75])
    iqr = max(q3 - q1, 1e-9)
    lo = scores.min() - 3.0 * iqr
    hi = scores.max() + 3.0 * iqr
    return np.linspace(lo, hi, n_knots)


# analytic oracles for the simulation settings

def oracle_nuisances(setting: str, regime: Regime, grid) -> NuisanceSet:
    """Exact nuisance functions for settings with closed-form truth.

    Supports the Gaussian two-stage setting ("setting1", raw score only) and
    the enumerable discrete toy ("discrete_toy").  The transformed-covariate
    setting has no closed form in its observed coordinates.
    """
    grid = np.asarray(grid, dtype=float)
    if setting == "setting1":
        return _oracle_setting1(regime, grid)
    if setting == "discrete_toy":
        from .dgp import discrete_toy_oracle

        return discrete_toy_oracle(regime, grid)
    if setting == "setting2":
        raise NoClosedForm("no closed-form truth in the transformed coordinates")
    raise NoClosedForm(f"no oracle for setting {setting!r}")


def _oracle_setting1(regime: Regime, grid) -> NuisanceSet:
    from scipy.stats import norm
    from .dgp import S1

    if regime.kind not in ("monotone",) or regime.D != 1:
        raise NoClosedForm("the Gaussian setting's oracle is two-stage monotone")

    def pi1(F):
        p = 1.0 / (1.0 + np.exp(-S1.T_COEF * F[:, 0]))
        return p / (1.0 - p)

    def pi2(F):
        lin = S1.S_X * F[:, 0] + S1.S_Z1 * F[:, 1] + S1.S_Z2 * F[:, 2]
        return 1.0 / (1.0 + np.exp(-lin))

    def m2(F, thetas):
        mean = S1.Y_X * F[:, 0] + S1.Y_Z1 * F[:, 1] + S1.Y_Z2 * F[:, 2]
        return norm.cdf((thetas[None, :] - mean[:, None]) / S1.Y_SD)

    def m1(F, thetas):
        mean = S1.M1_SLOPE * F[:, 0]
        return norm.cdf((thetas[None, :] - mean[:, None]) / S1.M1_SD)

    props = [PropensityModel(1, pi1), PropensityModel(2, pi2)]
    outs = [OracleCdfModel(1, grid, m1), OracleCdfModel(2, grid, m2)]
    return NuisanceSet(regime=regime, propensities=props, outcomes=outs, grid=grid)
