"""Influence-function evaluators for every coarsening regime.

Each regime's evaluator returns the per-observation influence value at a
threshold theta, shifted so that the calibration inequality reads
"mean influence + add-on >= 0".  The non-monotone regime additionally needs
the linear pattern-mixture operator M and its inverse, which this module
implements exactly on declared discrete supports.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import CoarsenedRecord, PatternTable
from .errors import (
    InvalidPmf,
    MissingPrecomputation,
    RegimeMismatch,
    SingularOperator,
    SingularWeights,
)


def _point_of_record(record: CoarsenedRecord):
    """Canonical full-data tuple (x, z_blocks, y) for support lookups."""
    x = tuple(float(v) for v in record.x)
    zs = tuple(
        None if b is None else tuple(float(v) for v in b) for b in record.z_blocks
    )
    return (x, zs, None if record.y is None else float(record.y))


@dataclass(frozen=True)
class DiscreteSupport:
    """Finite list of full-data points with an optional pmf (enumeration mode)."""

    points: tuple  # of (x: tuple, z_blocks: tuple of tuples, y: float)
    pmf: tuple | None = None

    def __post_init__(self):
        if len(set(self.points)) != len(self.points):
            raise ValueError("support points must be distinct")
        if self.pmf is not None:
            p = np.asarray(self.pmf, dtype=float)
            if p.size != len(self.points) or np.any(p < 0) or not np.isclose(p.sum(), 1.0):
                raise InvalidPmf("pmf must be nonnegative and sum to 1 over the support")

    def probabilities(self) -> np.ndarray:
        if self.pmf is not None:
            return np.asarray(self.pmf, dtype=float)
        n = len(self.points)
        return np.full(n, 1.0 / n)

    def index_of(self, point) -> int:
        try:
            return self.points.index(point)
        except ValueError:
            raise MissingPrecomputation(f"point {point!r} not in the declared support")


class CarWeightModel:
    """Pattern probabilities omega(k | full data) for k in {0..K} plus "inf".

    Coarsening-at-random requires omega(k, .) to depend only on the blocks
    observed under pattern k; callers supply a function honoring that.
    omega_star renormalizes away the baseline-only pattern.
    """

    def __init__(self, fn, K: int):
        self._fn = fn
        self.K = int(K)

    def omega(self, k, point) -> float:
        return float(self._fn(k, point))

    def omega_star(self, k, point) -> float:
        w0 = self.omega(0, point)
        return self.omega(k, point) / (1.0 - w0)


def _pattern_key(point, mask):
    """Observed-block key of a full point under a presence mask over (z.., y)."""
    x, zs, y = point
    obs_z = tuple(zs[j] for j in range(len(mask) - 1) if mask[j])
    return (x, obs_z, y if mask[-1] else None)


def _pattern_classes(support: DiscreteSupport, table: PatternTable):
    """For each finite pattern k >= 1: point index -> class key, class masses."""
    probs = support.probabilities()
    out = {}
    for k in sorted(table.patterns):
        if k == 0:
            continue
        mask = table.patterns[k]
        keys = [_pattern_key(p, mask) for p in support.points]
        mass: dict = {}
        for key, pr in zip(keys, probs):
            mass[key] = mass.get(key, 0.0) + pr
        if any(m <= 0 for m in mass.values()):
            raise SingularWeights(f"pattern {k} has a zero-mass conditioning class")
        out[k] = (keys, mass)
    return out


def apply_m_operator(h_values, weights: CarWeightModel, table: PatternTable, support: DiscreteSupport) -> np.ndarray:
    """M{h}: mixture of pattern-conditional expectations of h plus the full term."""
    h = np.asarray(h_values, dtype=float)
    probs = support.probabilities()
    classes = _pattern_classes(support, table)
    out = np.zeros_like(h)
    for k, (keys, mass) in classes.items():
        num: dict = {}
        for key, pr, hv in zip(keys, probs, h):
            num[key] = num.get(key, 0.0) + pr * hv
        cond = np.array([num[key] / mass[key] for key in keys])
        wk = np.array([weights.omega_star(k, p) for p in support.points])
        out += wk * cond
    w_inf = np.array([weights.omega_star("inf", p) for p in support.points])
    return out + w_inf * h


def _m_matrix(weights, table, support) -> np.ndarray:
    probs = support.probabilities()
    n = len(support.points)
    A = np.zeros((n, n))
    classes = _pattern_classes(support, table)
    for k, (keys, mass) in classes.items():
        wk = np.array([weights.omega_star(k, p) for p in support.points])
        for i in range(n):
            for j in range(n):
                if keys[j] == keys[i]:
                    A[i, j] += wk[i] * probs[j] / mass[keys[i]]
    w_inf = np.array([weights.omega_star("inf", p) for p in support.points])
    A[np.arange(n), np.arange(n)] += w_inf
    return A


def minv_solve(target, weights: CarWeightModel, table: PatternTable, support: DiscreteSupport) -> np.ndarray:
    """d = M^{-1}{target}, solved blockwise per baseline-covariate stratum."""
    t = np.asarray(target, dtype=float)
    n = len(support.points)
    d = np.empty(n)
    xs = [p[0] for p in support.points]
    for x in sorted(set(xs)):
        idx = [i for i in range(n) if xs[i] == x]
        probs = support.probabilities()[idx]
        block_mass = probs.sum()
        sub = DiscreteSupport(
            points=tuple(support.points[i] for i in idx),
            pmf=tuple(probs / block_mass),
        )
        A = _m_matrix(weights, table, sub)
        cond = float(np.linalg.cond(A))
        if not np.isfinite(cond) or cond > 1e12:
            raise SingularOperator(
                f"pattern-mixture operator singular on stratum x={x}", condition_number=cond
            )
        d[idx] = np.linalg.solve(A, t[idx])
    return d


class NonMonotonePrecomp:
    """Per-threshold cache of d = M^{-1}{1{Y<=theta} - (1-alpha)} and its
    pattern-conditional expectations on the declared support."""

    def __init__(self, support: DiscreteSupport, weights: CarWeightModel, table: PatternTable, alpha: float):
        self.support = support
        self.weights = weights
        self.table = table
        self.alpha = float(alpha)
        self._classes = _pattern_classes(support, table)
        self._cache: dict = {}

    def for_theta(self, theta: float):
        """Returns (d values on support, {k: {class key: E[d | class]}})."""
        key = float(theta)
        if key in self._cache:
            return self._cache[key]
        ys = np.array([p[2] for p in self.support.points], dtype=float)
        target = (ys <= key).astype(float) - (1.0 - self.alpha)
        d = minv_solve(target, self.weights, self.table, self.support)
        probs = self.support.probabilities()
        cond_exp = {}
        for k, (keys, mass) in self._classes.items():
            num: dict = {}
            for ck, pr, dv in zip(keys, probs, d):
                num[ck] = num.get(ck, 0.0) + pr * dv
            cond_exp[k] = {ck: num[ck] / mass[ck] for ck in mass}
        self._cache[key] = (d, cond_exp)
        return self._cache[key]


# regime evaluators (vectorized over records x thresholds)


def _check_regime(nu, kind):
    if nu.regime.kind != kind:
        raise RegimeMismatch(f"nuisance set is {nu.regime.kind!r}, expected {kind!r}")


def covshift_if_matrix(records, nu, thetas, alpha: float):
    """Per-record influence values for the covariate-shift regime.

    Returns (matrix n x T, indicator weights n) where the weight is the
    coefficient of the record's score indicator (zero for baseline records).
    """
    _check_regime(nu, "covariate_shift")
    thetas = np.asarray(thetas, dtype=float)
    records = list(records)
    n = len(records)
    M = np.zeros((n, thetas.size))
    w = np.zeros(n)
    full = np.array([r.level.is_full for r in records])
    base = ~full
    if np.any(np.array([not (r.level.is_full or r.level.k == 0) for r in records])):
        raise RegimeMismatch("covariate shift admits only baseline-only and complete records")
    one_minus_a = 1.0 - alpha
    if np.any(full):
        sub = [r for r in records if r.level.is_full]
        F = np.vstack([r.x for r in sub])
        pi = nu.propensity(1).predict(F)
        m = nu.outcome(1).values(F, thetas)
        R = np.array([r.y for r in sub], dtype=float)
        ind = (R[:, None] <= thetas[None, :]).astype(float)
        M[full] = pi[:, None] * (ind - m)
        w[full] = pi
    if np.any(base):
        sub = [r for r in records if not r.level.is_full]
        F = np.vstack([r.x for r in sub])
        m = nu.outcome(1).values(F, thetas)
        M[base] = m - one_minus_a
    return M, w


def two_stage_if_matrix(records, nu, thetas, alpha: float):
    """Two-stage monotone influence values (explicit three-term form)."""
    _check_regime(nu, "monotone")
    if nu.regime.D != 1:
        raise RegimeMismatch("two-stage evaluator requires a D=1 nuisance set")
    thetas = np.asarray(thetas, dtype=float)
    records = list(records)
    n = len(records)
    one_minus_a = 1.0 - alpha
    reach = np.array([2 if r.level.is_full else r.level.k for r in records])
    if np.any(reach > 2):
        raise RegimeMismatch("record level outside the two-stage regime")
    M = np.zeros((n, thetas.size))
    w = np.zeros(n)
    X = np.vstack([r.x for r in records])
    m1 = nu.outcome(1).values(X, thetas)
    c0 = reach == 0
    M[c0] += m1[c0] - one_minus_a
    ge1 = reach >= 1
    if np.any(ge1):
        pi1 = nu.propensity(1).predict(X[ge1])
        M[ge1] += -pi1[:, None] * (m1[ge1] - one_minus_a)
        sub = [r for r in records if r.level.at_least(1)]
        F1 = np.vstack([r.observed_prefix(1) for r in sub])
        pi2 = nu.propensity(2).predict(F1)
        m2 = nu.outcome(2).values(F1, thetas)
        deeper = (reach[ge1] >= 2).astype(float)
        coef = -pi1 * (deeper / pi2 - 1.0)
        M[ge1] += coef[:, None] * (m2 - one_minus_a)
        full_in_sub = reach[ge1] >= 2
        if np.any(full_in_sub):
            y = np.array([r.y for r in sub if r.level.is_full], dtype=float)
            ind = (y[:, None] <= thetas[None, :]).astype(float)
            lead_w = pi1[full_in_sub] / pi2[full_in_sub]
            rows = np.where(ge1)[0][full_in_sub]
            M[rows] += lead_w[:, None] * (ind - one_minus_a)
            w[rows] = lead_w
    return M, w


def multistage_if_matrix(records, nu, thetas, alpha: float):
    """General monotone influence values with the telescoping stage terms."""
    _check_regime(nu, "monotone")
    D = nu.regime.D
    thetas = np.asarray(thetas, dtype=float)
    records = list(records)
    n = len(records)
    one_minus_a = 1.0 - alpha
    reach = np.array([D + 1 if r.level.is_full else r.level.k for r in records])
    if np.any(reach > D + 1):
        raise RegimeMismatch(f"record level outside the D={D} monotone regime")
    M = np.zeros((n, thetas.size))
    w = np.zeros(n)
    X = np.vstack([r.x for r in records])
    m1 = nu.outcome(1).values(X, thetas)
    c0 = reach == 0
    M[c0] += m1[c0] - one_minus_a
    ge1 = reach >= 1
    if not np.any(ge1):
        return M, w
    pi1_all = np.zeros(n)
    pi1_all[ge1] = nu.propensity(1).predict(X[ge1])
    M[ge1] += -pi1_all[ge1][:, None] * (m1[ge1] - one_minus_a)
    prod = np.ones(n)  # running pi_2 .. pi_j over records that reach stage j
    for j in range(1, D + 1):
        mask = reach >= j
        if not np.any(mask):
            break
        sub = [r for r, keep in zip(records, mask) if keep]
        Fj = np.vstack([r.observed_prefix(j) for r in sub])
        pi_next = nu.propensity(j + 1).predict(Fj)
        m_next = nu.outcome(j + 1).values(Fj, thetas)
        deeper = (reach[mask] >= j + 1).astype(float)
        coef = -(pi1_all[mask] / prod[mask]) * (deeper / pi_next - 1.0)
        M[mask] += coef[:, None] * (m_next - one_minus_a)
        prod[mask] = prod[mask] * pi_next
    full = reach >= D + 1
    if np.any(full):
        y = np.array([r.y for r, keep in zip(records, full) if keep], dtype=float)
        ind = (y[:, None] <= thetas[None, :]).astype(float)
        lead_w = pi1_all[full] / prod[full]
        M[full] += lead_w[:, None] * (ind - one_minus_a)
        w[full] = lead_w
    return M, w


def nonmonotone_if_matrix(records, nu, thetas, alpha: float, support: DiscreteSupport, precomp: NonMonotonePrecomp | None = None):
    """Non-monotone influence values on a declared discrete support."""
    _check_regime(nu, "nonmonotone")
    table = nu.regime.table
    weights = nu.car_weights
    if weights is None:
        raise RegimeMismatch("non-monotone regime requires fitted pattern weights")
    if precomp is None:
        precomp = NonMonotonePrecomp(support, weights, table, alpha)
    thetas = np.asarray(thetas, dtype=float)
    records = list(records)
    n = len(records)
    one_minus_a = 1.0 - alpha
    M = np.zeros((n, thetas.size))
    w = np.zeros(n)
    X = np.vstack([r.x for r in records])
    m1 = nu.outcome(1).values(X, thetas)
    pi1 = nu.propensity(1).predict(X)
    K = weights.K
    per_theta = [precomp.for_theta(t) for t in thetas]
    for i, r in enumerate(records):
        if (not r.level.is_full) and r.level.k == 0:
            M[i] = m1[i] - one_minus_a
            continue
        anchor = -(m1[i] - one_minus_a)
        if r.level.is_full:
            point = _point_of_record(r)
            p_idx = support.index_of(point)
            w_inf = weights.omega_star("inf", point)
            ind = (point[2] <= thetas).astype(float)
            row = (ind - one_minus_a) / w_inf
            for t_idx, (_, cond_exp) in enumerate(per_theta):
                acc = 0.0
                for k in cond_exp:
                    ck = _pattern_key(point, table.patterns[k])
                    acc += weights.omega_star(k, point) * cond_exp[k][ck]
                row[t_idx] -= acc / w_inf
            M[i] = pi1[i] * (row + anchor)
            w[i] = pi1[i] / w_inf
        else:
            k = r.level.k
            if k < 1 or k > K:
                raise RegimeMismatch(f"pattern level {k} outside the registered table")
            rec_key = _pattern_key(_point_of_record(r), table.patterns[k])
            vals = np.empty(thetas.size)
            for t_idx, (_, cond_exp) in enumerate(per_theta):
                try:
                    vals[t_idx] = cond_exp[k][rec_key]
                except KeyError:
                    raise MissingPrecomputation(
                        f"no conditioning class for observed blocks {rec_key!r}"
                    )
            M[i] = pi1[i] * (vals + anchor)
    return M, w


# scalar wrappers


def _one_record(fn, theta, record, nu, alpha, *extra):
    M, _ = fn([record], nu, np.array([float(theta)]), alpha, *extra)
    return float(M[0, 0])


def eval_if_covshift(theta, record, nu, alpha):
    return _one_record(covshift_if_matrix, theta, record, nu, alpha)


def eval_if_two_stage(theta, record, nu, alpha):
    return _one_record(two_stage_if_matrix, theta, record, nu, alpha)


def eval_if_multistage(theta, record, nu, alpha):
    return _one_record(multistage_if_matrix, theta, record, nu, alpha)


def eval_if_nonmonotone(theta, record, nu, alpha, support, precomp=None):
    return _one_record(nonmonotone_if_matrix, theta, record, nu, alpha, support, precomp)
