"""Propensity and outcome-regression nuisance estimation."""

import numpy as np
import pytest
from scipy.special import expit
from scipy.stats import norm

from robustcp import dgp
from robustcp.core import CoarsenedRecord, CoarseningLevel
from robustcp.errors import InsufficientData, MissingNuisance, NoClosedForm
from robustcp.nuisance import (
    NuisanceSet,
    PropensityModel,
    Regime,
    default_grid,
    fit_covshift_nuisances,
    fit_propensity_stage,
    fit_sequential_regressions,
    fit_terminal_cdf,
    oracle_nuisances,
    pseudo_outcome_matrix,
)


def _covshift_records(n, seed, p0=0.5, slope=0.0):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=n)
    base = rng.random(n) < expit(np.log(p0 / (1 - p0)) + slope * x)
    y = x + 0.3 * rng.normal(size=n)
    out = []
    for i in range(n):
        if base[i]:
            out.append(CoarsenedRecord(CoarseningLevel.finite(0), [x[i]], (), None))
        else:
            out.append(CoarsenedRecord(CoarseningLevel.full(), [x[i]], (), float(y[i])))
    return out


def test_constant_propensity_recovers_unit_odds():
    recs = _covshift_records(4000, seed=0, p0=0.5)
    model = fit_propensity_stage(recs, 1)
    odds = model.predict(np.linspace(-1, 1, 9)[:, None])
    assert np.all(np.abs(odds - 1.0) < 0.05)


def test_logistic_propensity_recovers_slope():
    recs = _covshift_records(5000, seed=1, p0=0.5, slope=0.2)
    model = fit_propensity_stage(recs, 1)
    # slope read off the fitted log-odds between x=0 and x=1
    lo0, lo1 = np.log(model.predict(np.array([[0.0], [1.0]])))
    assert abs((lo1 - lo0) - 0.2) < 0.1


def test_single_class_stage1_raises():
    recs = [
        CoarsenedRecord(CoarseningLevel.full(), [float(i)], (), 0.0) for i in range(30)
    ]
    with pytest.raises(InsufficientData):
        fit_propensity_stage(recs, 1)
    with pytest.raises(InsufficientData):
        fit_propensity_stage(recs[:5], 1)


def test_no_dropout_stage2_degenerates_to_one():
    # every record that reaches stage 1 goes on to be complete
    rng = np.random.default_rng(2)
    recs = []
    for i in range(40):
        x = float(rng.normal())
        if i % 2:
            recs.append(CoarsenedRecord(CoarseningLevel.full(), [x], ([x + 1.0],), x))
        else:
            recs.append(CoarsenedRecord(CoarseningLevel.finite(0), [x], (None,), None))
    model = fit_propensity_stage(recs, 2)
    surv = model.predict(np.array([[0.0, 1.0], [2.0, -1.0]]))
    assert np.allclose(surv, 1.0)


def test_trim_counter():
    model = PropensityModel(2, lambda F: np.full(len(F), 0.001))
    out = model.predict(np.zeros((7, 1)))
    assert np.allclose(out, 0.01)
    assert model.trimmed_total == 7
    untrimmed = PropensityModel(2, lambda F: np.full(len(F), 0.5))
    untrimmed.predict(np.zeros((7, 1)))
    assert untrimmed.trimmed_total == 0


def test_terminal_cdf_point_mass():
    recs = [
        CoarsenedRecord(CoarseningLevel.full(), [float(i % 3)], (), 5.0) for i in range(12)
    ]
    model = fit_terminal_cdf(recs, [4.0, 5.0, 6.0])
    row = model.cdf_matrix(np.array([[0.0]]))[0]
    assert np.allclose(row, [0.0, 1.0, 1.0])
    # step extension beyond the grid
    vals = model.values(np.array([[0.0]]), np.array([3.0, 4.5, 7.0]))[0]
    assert np.allclose(vals, [0.0, 0.0, 1.0])


def test_terminal_cdf_gaussian_accuracy_and_monotonicity():
    rng = np.random.default_rng(3)
    x = rng.normal(size=5000)
    y = x + 0.5 * rng.normal(size=5000)
    recs = [
        CoarsenedRecord(CoarseningLevel.full(), [xi], (), float(yi)) for xi, yi in zip(x, y)
    ]
    grid = np.linspace(-4, 4, 81)
    model = fit_terminal_cdf(recs, grid, n_neighbors=200)
    probe = np.array([[-1.0], [0.0], [1.0]])
    fitted = model.cdf_matrix(probe)
    truth = norm.cdf((grid[None, :] - probe) / 0.5)
    assert np.max(np.abs(fitted - truth)) < 0.1
    assert np.all(np.diff(fitted, axis=1) >= 0)
    assert np.all((fitted >= 0) & (fitted <= 1))


def test_terminal_cdf_insufficient_complete_cases():
    recs = [CoarsenedRecord(CoarseningLevel.finite(0), [0.0], (), None)] * 30
    with pytest.raises(InsufficientData):
        fit_terminal_cdf(recs, [0.0, 1.0])


def _two_stage_record(x, z, y, level):
    if level == "full":
        return CoarsenedRecord(CoarseningLevel.full(), [x], ([z],), y)
    if level == 1:
        return CoarsenedRecord(CoarseningLevel.finite(1), [x], ([z],), None)
    return CoarsenedRecord(CoarseningLevel.finite(0), [x], (None,), None)


def test_pseudo_outcomes_unit_survival_reduce_to_indicator():
    spec = dgp.default_toy_spec()
    grid = np.asarray(spec.ys)
    regime = Regime.monotone(1)
    nu = oracle_nuisances("discrete_toy", regime, grid)
    unit = NuisanceSet(
        regime=regime,
        propensities=[nu.propensities[0], PropensityModel(2, lambda F: np.ones(len(F)))],
        outcomes=nu.outcomes,
        grid=grid,
    )
    recs = [_two_stage_record(-1.0, 1.0, 3.0, "full"), _two_stage_record(1.0, 0.0, 5.0, "full")]
    H = pseudo_outcome_matrix(recs, 1, unit, grid)
    expect = np.array([[0, 0, 1, 1, 1], [0, 0, 0, 0, 1]], dtype=float)
    assert np.allclose(H, expect)


def test_pseudo_outcomes_censored_record_gets_m2():
    spec = dgp.default_toy_spec()
    grid = np.asarray(spec.ys)
    nu = oracle_nuisances("discrete_toy", Regime.monotone(1), grid)
    rec = _two_stage_record(1.0, 1.0, None, 1)
    H = pseudo_outcome_matrix([rec], 1, nu, grid)[0]
    m2 = nu.outcome(2).values(np.array([[1.0, 1.0]]), grid)[0]
    assert np.allclose(H, m2)
    with pytest.raises(ValueError):
        pseudo_outcome_matrix([_two_stage_record(0.0, 0.0, None, 0)], 1, nu, grid)


def test_pseudo_outcome_enumeration_recovers_m1():
    # E[H_1 | x, C >= 1] under oracle stage-2 nuisances equals m_1 exactly
    spec = dgp.default_toy_spec()
    grid = np.asarray(spec.ys)
    nu = oracle_nuisances("discrete_toy", Regime.monotone(1), grid)
    for x in spec.xs:
        acc = np.zeros(len(grid))
        for z, pz in zip(spec.zs, spec.p_z_given_x(x)):
            pi2 = spec.pi2(x, z)
            rec1 = _two_stage_record(x, z, None, 1)
            acc += pz * (1 - pi2) * pseudo_outcome_matrix([rec1], 1, nu, grid)[0]
            for y, py in zip(spec.ys, spec.y_pmf(x, z)):
                rec = _two_stage_record(x, z, float(y), "full")
                acc += pz * pi2 * py * pseudo_outcome_matrix([rec], 1, nu, grid)[0]
        m1 = nu.outcome(1).values(np.array([[x]]), grid)[0]
        assert np.max(np.abs(acc - m1)) < 1e-10


def test_missing_nuisance_accessors():
    grid = np.array([0.0, 1.0])
    nu = NuisanceSet(
        regime=Regime.covariate_shift(),
        propensities=[PropensityModel(1, lambda F: np.ones(len(F)))],
        outcomes=[],
        grid=grid,
    )
    assert nu.propensity(1).stage == 1
    with pytest.raises(MissingNuisance):
        nu.propensity(2)
    with pytest.raises(MissingNuisance):
        nu.outcome(1)


def test_sequential_d0_matches_covshift_fit():
    recs = _covshift_records(400, seed=4, slope=0.3)
    grid = np.linspace(-3, 3, 41)
    seq = fit_sequential_regressions(recs, grid, D=0)
    cov = fit_covshift_nuisances(recs, grid)
    probe = np.linspace(-2, 2, 7)[:, None]
    assert seq.regime.kind == "covariate_shift"
    assert np.array_equal(seq.propensity(1).predict(probe), cov.propensity(1).predict(probe))
    assert np.array_equal(seq.outcome(1).cdf_matrix(probe), cov.outcome(1).cdf_matrix(probe))


def test_two_stage_fit_recovers_marginal_cdf():
    recs = dgp.gen_setting1(6000, seed=6)
    grid = np.linspace(-12, 12, 121)
    nu = fit_sequential_regressions(recs, grid, D=1, n_neighbors=300)
    oracle = oracle_nuisances("setting1", Regime.monotone(1), grid)
    probe = np.array([[-0.5], [0.0], [0.5]])
    fitted = nu.outcome(1).cdf_matrix(probe)
    truth = oracle.outcome(1).values(probe, grid)
    assert np.max(np.abs(fitted - truth)) < 0.1


def test_setting1_oracle_midpoint():
    grid = np.linspace(-12, 12, 5)
    nu = oracle_nuisances("setting1", Regime.monotone(1), grid)
    F = np.array([[0.4, -0.2, 1.1]])
    mean = dgp.S1.Y_X * 0.4 + dgp.S1.Y_Z1 * -0.2 + dgp.S1.Y_Z2 * 1.1
    assert nu.outcome(2).values(F, np.array([mean]))[0, 0] == pytest.approx(0.5)
    assert nu.outcome(1).values(np.array([[0.4]]), np.array([dgp.S1.M1_SLOPE * 0.4]))[
        0, 0
    ] == pytest.approx(0.5)


def test_setting2_oracle_unavailable():
    with pytest.raises(NoClosedForm):
        oracle_nuisances("setting2", Regime.monotone(1), [0.0, 1.0])
    with pytest.raises(NoClosedForm):
        oracle_nuisances("unknown", Regime.monotone(1), [0.0, 1.0])


def test_default_grid_span():
    scores = np.array([0.0, 1.0, 2.0, 3.0, 4.0])
    grid = default_grid(scores, n_knots=11)
    q1, q3 = np.quantile(scores, [0.25, 0.75])
    assert grid[0] == pytest.approx(scores.min() - 3 * (q3 - q1))
    assert grid[-1] == pytest.approx(scores.max() + 3 * (q3 - q1))
    assert len(grid) == 11
    with pytest.raises(InsufficientData):
        default_grid(np.array([]))
