"""Influence-function evaluators and the pattern-mixture operator."""

import numpy as np
import pytest

from robustcp import dgp
from robustcp.core import CoarsenedRecord, CoarseningLevel, PatternTable
from robustcp.errors import (
    InvalidPmf,
    MissingPrecomputation,
    RegimeMismatch,
    SingularWeights,
)
from robustcp.influence import (
    CarWeightModel,
    DiscreteSupport,
    NonMonotonePrecomp,
    apply_m_operator,
    covshift_if_matrix,
    eval_if_covshift,
    eval_if_multistage,
    eval_if_nonmonotone,
    eval_if_two_stage,
    minv_solve,
    multistage_if_matrix,
    nonmonotone_if_matrix,
    two_stage_if_matrix,
)
from robustcp.nuisance import (
    NuisanceSet,
    OracleCdfModel,
    PropensityModel,
    Regime,
    oracle_nuisances,
)

ALPHA = 0.1


def _const_nuisances(regime, pis, ms, grid=(0.0, 10.0)):
    grid = np.asarray(grid, dtype=float)

    def cdf(value):
        return lambda F, thetas: np.full((len(F), len(thetas)), value)

    props = [PropensityModel(j + 1, (lambda v: lambda F: np.full(len(F), v))(p)) for j, p in enumerate(pis)]
    outs = [OracleCdfModel(j + 1, grid, cdf(m)) for j, m in enumerate(ms)]
    return NuisanceSet(regime=regime, propensities=props, outcomes=outs, grid=grid)


def _rec(level, x, zs=(), y=None):
    return CoarsenedRecord(level, [x], zs, y)


def test_covshift_hand_values():
    nu = _const_nuisances(Regime.covariate_shift(), [2.0], [0.7])
    full_in = _rec(CoarseningLevel.full(), 0.0, (), 1.0)
    full_out = _rec(CoarseningLevel.full(), 0.0, (), 3.0)
    base = _rec(CoarseningLevel.finite(0), 0.0)
    theta = 2.0
    assert eval_if_covshift(theta, full_in, nu, ALPHA) == pytest.approx(0.6)
    assert eval_if_covshift(theta, full_out, nu, ALPHA) == pytest.approx(-1.4)
    assert eval_if_covshift(theta, base, nu, ALPHA) == pytest.approx(-0.2)
    # indicator weight is the propensity for complete records, zero otherwise
    _, w = covshift_if_matrix([full_in, base], nu, [theta], ALPHA)
    assert np.allclose(w, [2.0, 0.0])


def test_covshift_rejects_intermediate_levels():
    nu = _const_nuisances(Regime.covariate_shift(), [2.0], [0.7])
    rec = _rec(CoarseningLevel.finite(1), 0.0, ([1.0],))
    with pytest.raises(RegimeMismatch):
        covshift_if_matrix([rec], nu, [0.0], ALPHA)
    nu2 = _const_nuisances(Regime.monotone(1), [1.0, 1.0], [0.5, 0.5])
    with pytest.raises(RegimeMismatch):
        covshift_if_matrix([_rec(CoarseningLevel.finite(0), 0.0)], nu2, [0.0], ALPHA)


def test_two_stage_hand_values():
    nu = _const_nuisances(Regime.monotone(1), [0.5, 0.8], [0.8, 0.9])
    theta = 2.0
    full = _rec(CoarseningLevel.full(), 0.0, ([0.0],), 1.0)
    mid = _rec(CoarseningLevel.finite(1), 0.0, ([0.0],))
    base = _rec(CoarseningLevel.finite(0), 0.0, (None,))
    # full:  -pi1*(m1-0.9) - pi1*(1/pi2-1)*(m2-0.9) + pi1/pi2*(ind-0.9)
    assert eval_if_two_stage(theta, full, nu, ALPHA) == pytest.approx(0.1125)
    # c=1:   -pi1*(m1-0.9) + pi1*(m2-0.9)
    assert eval_if_two_stage(theta, mid, nu, ALPHA) == pytest.approx(0.05)
    # c=0:   m1 - 0.9
    assert eval_if_two_stage(theta, base, nu, ALPHA) == pytest.approx(-0.1)


def test_multistage_d1_bitwise_equals_two_stage():
    grid = np.linspace(-12, 12, 81)
    nu = oracle_nuisances("setting1", Regime.monotone(1), grid)
    records = dgp.gen_setting1(1000, seed=11)
    thetas = np.linspace(-10, 10, 23)
    A, wa = two_stage_if_matrix(records, nu, thetas, ALPHA)
    B, wb = multistage_if_matrix(records, nu, thetas, ALPHA)
    assert np.array_equal(A, B)
    assert np.array_equal(wa, wb)


def test_multistage_d2_hand_expansion():
    # constants pi1=0.6 (odds), pi2=0.7, pi3=0.8, m1=0.55, m2=0.65, m3=0.75
    nu = _const_nuisances(Regime.monotone(2), [0.6, 0.7, 0.8], [0.55, 0.65, 0.75])
    theta = 2.0
    t1, t2, t3 = 0.55 - 0.9, 0.65 - 0.9, 0.75 - 0.9
    c0 = _rec(CoarseningLevel.finite(0), 0.0, (None, None))
    c1 = _rec(CoarseningLevel.finite(1), 0.0, ([0.0], None))
    c2 = _rec(CoarseningLevel.finite(2), 0.0, ([0.0], [0.0]))
    full = _rec(CoarseningLevel.full(), 0.0, ([0.0], [0.0]), 1.0)
    assert eval_if_multistage(theta, c0, nu, ALPHA) == pytest.approx(t1)
    assert eval_if_multistage(theta, c1, nu, ALPHA) == pytest.approx(-0.6 * t1 + 0.6 * t2)
    expect_c2 = -0.6 * t1 - 0.6 * (1 / 0.7 - 1) * t2 + (0.6 / 0.7) * t3
    assert eval_if_multistage(theta, c2, nu, ALPHA) == pytest.approx(expect_c2)
    expect_full = (
        -0.6 * t1
        - 0.6 * (1 / 0.7 - 1) * t2
        - (0.6 / 0.7) * (1 / 0.8 - 1) * t3
        + 0.6 / (0.7 * 0.8) * (1.0 - 0.9)
    )
    assert eval_if_multistage(theta, full, nu, ALPHA) == pytest.approx(expect_full)
    with pytest.raises(RegimeMismatch):
        multistage_if_matrix([c0], _const_nuisances(Regime.covariate_shift(), [1.0], [0.5]), [0.0], ALPHA)


def test_monotone_mean_if_nondecreasing_in_theta():
    spec = dgp.default_toy_spec()
    grid = np.asarray(spec.ys, dtype=float)
    nu = oracle_nuisances("discrete_toy", Regime.monotone(1), grid)
    cells = dgp.toy_joint_enumeration(spec, "monotone")
    records = [dgp._toy_record("monotone", lvl, x, z if z is not None else 0.0, y) for lvl, x, z, y, _ in cells]
    probs = np.array([c[4] for c in cells])
    thetas = np.linspace(0.0, 6.0, 61)
    M, _ = multistage_if_matrix(records, nu, thetas, ALPHA)
    mean_if = probs @ M
    assert np.all(np.diff(mean_if) >= -1e-12)


# pattern-mixture operator


def _simple_support():
    points = tuple(
        ((0.0,), ((z,),), y) for z in (0.0, 1.0) for y in (1.0, 2.0)
    )
    return DiscreteSupport(points=points, pmf=(0.1, 0.2, 0.3, 0.4))


def _weights(w0, w1, K=1):
    def fn(k, point):
        if k == 0:
            return w0
        if k == "inf":
            return 1.0 - w0 - w1
        return w1 if k == 1 else 0.0

    return CarWeightModel(fn, K)


TABLE_Z = PatternTable(D=1, patterns={1: (True, False)})


def test_m_operator_definition():
    sup = _simple_support()
    w = _weights(0.2, 0.3)
    h = np.array([1.0, 2.0, 3.0, 5.0])
    got = apply_m_operator(h, w, TABLE_Z, sup)
    # omega*_1 = 0.375, omega*_inf = 0.625; classes are the z-strata
    ez0 = (0.1 * 1.0 + 0.2 * 2.0) / 0.3
    ez1 = (0.3 * 3.0 + 0.4 * 5.0) / 0.7
    expect = 0.375 * np.array([ez0, ez0, ez1, ez1]) + 0.625 * h
    assert np.allclose(got, expect, atol=1e-12)


def test_m_operator_constant_and_identity():
    sup = _simple_support()
    h = np.full(4, 0.7)
    assert np.allclose(apply_m_operator(h, _weights(0.2, 0.3), TABLE_Z, sup), h)
    # no finite patterns beyond level 0: M is the identity
    ident = _weights(0.2, 0.0)
    rnd = np.array([0.3, -1.0, 2.0, 0.0])
    assert np.allclose(apply_m_operator(rnd, ident, TABLE_Z, sup), rnd)


def test_minv_dense_solve_oracle_and_roundtrip():
    rng = np.random.default_rng(21)
    sup = _simple_support()
    w = _weights(0.2, 0.45)
    # dense matrix assembled column by column through the public operator
    cols = [apply_m_operator(np.eye(4)[j], w, TABLE_Z, sup) for j in range(4)]
    A = np.column_stack(cols)
    for _ in range(10):
        target = rng.normal(size=4)
        d = minv_solve(target, w, TABLE_Z, sup)
        assert np.allclose(d, np.linalg.solve(A, target), atol=1e-10)
        assert np.allclose(apply_m_operator(d, w, TABLE_Z, sup), target, atol=1e-9)


def test_minv_complete_case_only_is_scaling():
    sup = _simple_support()
    w = _weights(0.2, 0.0)
    target = np.array([1.0, -0.5, 0.25, 0.0])
    assert np.allclose(minv_solve(target, w, TABLE_Z, sup), target)


def test_support_validation():
    with pytest.raises(ValueError):
        DiscreteSupport(points=(((0.0,), (), 1.0), ((0.0,), (), 1.0)))
    with pytest.raises(InvalidPmf):
        DiscreteSupport(points=(((0.0,), (), 1.0),), pmf=(0.5,))
    sup = _simple_support()
    with pytest.raises(MissingPrecomputation):
        sup.index_of(((9.0,), ((0.0,),), 1.0))


def test_zero_mass_class_raises():
    points = (((0.0,), ((0.0,),), 1.0), ((0.0,), ((1.0,),), 2.0))
    sup = DiscreteSupport(points=points, pmf=(1.0, 0.0))
    with pytest.raises(SingularWeights):
        apply_m_operator(np.zeros(2), _weights(0.2, 0.3), TABLE_Z, sup)


# non-monotone evaluator


def _toy_nonmono():
    spec = dgp.default_toy_spec()
    grid = np.asarray(spec.ys, dtype=float)
    nu = dgp.discrete_toy_oracle(Regime.nonmonotone(spec.nonmono_table()), grid, spec)
    cells = spec.full_points()
    support = DiscreteSupport(
        points=tuple(((x,), ((z,),), y) for x, z, y, _ in cells),
        pmf=tuple(p for _, _, _, p in cells),
    )
    return spec, nu, support


def test_nonmonotone_baseline_record_value():
    spec, nu, support = _toy_nonmono()
    for x in spec.xs:
        rec = _rec(CoarseningLevel.finite(0), x, (None,))
        got = eval_if_nonmonotone(3.0, rec, nu, ALPHA, support)
        assert got == pytest.approx(spec.y_cdf_marginal(x, 3.0) - (1 - ALPHA), abs=1e-12)


def test_nonmonotone_without_weights_raises():
    spec, nu, support = _toy_nonmono()
    bare = NuisanceSet(
        regime=nu.regime, propensities=nu.propensities, outcomes=nu.outcomes, grid=nu.grid
    )
    with pytest.raises(RegimeMismatch):
        nonmonotone_if_matrix([_rec(CoarseningLevel.finite(0), 1.0, (None,))], bare, [3.0], ALPHA, support)


def test_nonmonotone_complete_case_only_reduces_to_covshift():
    # with all partial-pattern weights zero the evaluator collapses to the
    # covariate-shift influence values record by record
    spec, nu, support = _toy_nonmono()
    cs_weights = CarWeightModel(
        lambda k, point: spec.omega0(point[0][0])
        if k == 0
        else (1.0 - spec.omega0(point[0][0]) if k == "inf" else 0.0),
        K=2,
    )
    nm = NuisanceSet(
        regime=nu.regime,
        propensities=nu.propensities,
        outcomes=nu.outcomes,
        grid=nu.grid,
        car_weights=cs_weights,
    )
    cs = dgp.discrete_toy_oracle(Regime.covariate_shift(), nu.grid, spec)
    for x in spec.xs:
        for z in spec.zs:
            for y in spec.ys:
                rec_nm = _rec(CoarseningLevel.full(), x, ((z,),), y)
                rec_cs = _rec(CoarseningLevel.full(), x, (), y)
                for theta in (1.0, 3.0, 4.0):
                    a = eval_if_nonmonotone(theta, rec_nm, nm, ALPHA, support)
                    b = eval_if_covshift(theta, rec_cs, cs, ALPHA)
                    assert a == pytest.approx(b, abs=1e-12)


def test_nonmonotone_precomp_reuse_matches_fresh():
    spec, nu, support = _toy_nonmono()
    precomp = NonMonotonePrecomp(support, nu.car_weights, nu.regime.table, ALPHA)
    records = [
        _rec(CoarseningLevel.full(), 1.0, ((1.0,),), 3.0),
        _rec(CoarseningLevel.finite(1), -1.0, ((0.0,),)),
        _rec(CoarseningLevel.finite(2), 1.0, (None,), 2.0),
    ]
    thetas = np.array([1.0, 2.5, 4.0])
    with_pre, _ = nonmonotone_if_matrix(records, nu, thetas, ALPHA, support, precomp)
    fresh, _ = nonmonotone_if_matrix(records, nu, thetas, ALPHA, support)
    assert np.array_equal(with_pre, fresh)
