"""Threshold solvers, all realized as exact scans over a finite candidate set.

Every summand entering a calibration inequality is a right-continuous step
function whose breakpoints live on a known finite set (the shared theta grid
plus the calibration scores), so the infimum defining each threshold is
attained at a candidate and can be found by exhaustive scan, with no numeric
root finding and no tolerance.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from .core import CoarsenedRecord
from .errors import EmptyCalibration, ZeroWeights
from .influence import (
    NonMonotonePrecomp,
    covshift_if_matrix,
    multistage_if_matrix,
    nonmonotone_if_matrix,
    two_stage_if_matrix,
    _pattern_key,
)


@dataclass(frozen=True)
class ThresholdSolution:
    """Calibrated threshold plus the scan trace that certifies it."""

    r_hat: float
    candidates_examined: int
    defining_sum_at_r: float
    max_jump: float
    method: str
    index: int = -1  # candidate index of r_hat; -1 for the +inf sentinel
    candidates: np.ndarray | None = None
    sums: np.ndarray | None = None


def apply_score(records, score_model):
    """Replace the outcome of complete records by their nonconformity score."""
    complete = [r for r in records if r.level.is_full]
    if not complete:
        return list(records)
    X = np.vstack([r.x for r in complete])
    y = np.array([r.y for r in complete], dtype=float)
    scores = score_model.score_many(X, y)
    it = iter(scores)
    return [
        dataclasses.replace(r, y=float(next(it))) if r.level.is_full else r
        for r in records
    ]


def candidate_grid(grid, extra_points) -> np.ndarray:
    """Sorted distinct finite candidates: theta knots plus score breakpoints."""
    pts = np.concatenate([np.asarray(grid, dtype=float), np.asarray(extra_points, dtype=float)])
    pts = pts[np.isfinite(pts)]
    return np.unique(pts)


def _scan_rows(candidates, totals, method, keep_trace=False):
    """First candidate per row where the total is >= 0; +inf sentinel if none."""
    totals = np.atleast_2d(totals)
    jumps = np.abs(np.diff(totals, axis=1))
    out = []
    for row, jrow in zip(totals, jumps):
        ok = np.nonzero(row >= 0.0)[0]
        if ok.size:
            idx = int(ok[0])
            r_hat = float(candidates[idx])
            val = float(row[idx])
        else:
            idx = -1
            r_hat = math.inf
            val = float(row[-1]) if row.size else math.nan
        out.append(
            ThresholdSolution(
                r_hat=r_hat,
                candidates_examined=len(candidates),
                defining_sum_at_r=val,
                max_jump=float(jrow.max()) if jrow.size else 0.0,
                method=method,
                index=idx,
                candidates=np.asarray(candidates) if keep_trace else None,
                sums=row.copy() if keep_trace else None,
            )
        )
    return out


def solve_generic_rscp(f_terms, test_term, alpha: float, keep_trace=False) -> ThresholdSolution:
    """Scan for the smallest theta with (sum f_i + test term)/(n+1) >= 1 - alpha."""
    from .core import merge_step_functions

    terms = list(f_terms)
    if not terms:
        raise EmptyCalibration("no calibration terms")
    merged = merge_step_functions(list(terms) + [test_term])
    n = len(terms)
    cands = merged.breakpoints
    if cands.size == 0:
        cands = np.array([0.0])
    vals = np.asarray(merged(cands), dtype=float) / (n + 1)
    totals = vals - (1.0 - alpha)
    base_total = merged.base_value / (n + 1) - (1.0 - alpha)
    if base_total >= 0.0:
        # the inequality already holds below every breakpoint; the infimum is
        # unbounded, reported as the first candidate by convention
        return ThresholdSolution(
            r_hat=float(cands[0]),
            candidates_examined=len(cands),
            defining_sum_at_r=float(base_total),
            max_jump=float(np.abs(np.diff(totals)).max()) if totals.size > 1 else 0.0,
            method="generic",
            index=0,
            candidates=np.asarray(cands) if keep_trace else None,
            sums=totals.copy() if keep_trace else None,
        )
    return _scan_rows(cands, totals[None, :], "generic", keep_trace)[0]


def _finalize_batch(solutions, single):
    return solutions[0] if single else solutions


def _addon_m1(nu, X_test, candidates, alpha):
    return nu.outcome(1).values(X_test, candidates) - (1.0 - alpha)


def _as_test_matrix(x_test):
    X = np.asarray(x_test, dtype=float)
    single = X.ndim == 1
    return np.atleast_2d(X), single


def solve_rscp_covshift(cal, nu, x_test, alpha, score_model, keep_trace=False):
    """Covariate-shift calibration with the m1-based test add-on."""
    if not cal:
        raise EmptyCalibration("empty calibration set")
    scored = apply_score(cal, score_model)
    scores = [r.y for r in scored if r.level.is_full]
    cands = candidate_grid(nu.grid, scores)
    M, w = covshift_if_matrix(scored, nu, cands, alpha)
    S = M.sum(axis=0)
    X_test, single = _as_test_matrix(x_test)
    addons = _addon_m1(nu, X_test, cands, alpha)
    n = len(scored)
    totals = (S[None, :] + addons) / (n + 1)
    sols = _scan_rows(cands, totals, "rscp_covshift", keep_trace)
    return _finalize_batch(sols, single)


def solve_rscp_monotone(cal, nu, x_test, alpha, score_model, evaluator="multistage", keep_trace=False):
    """Monotone-regime calibration; evaluator picks the IF expression form."""
    if not cal:
        raise EmptyCalibration("empty calibration set")
    scored = apply_score(cal, score_model)
    scores = [r.y for r in scored if r.level.is_full]
    cands = candidate_grid(nu.grid, scores)
    matrix_fn = two_stage_if_matrix if evaluator == "two_stage" else multistage_if_matrix
    M, w = matrix_fn(scored, nu, cands, alpha)
    S = M.sum(axis=0)
    X_test, single = _as_test_matrix(x_test)
    addons = _addon_m1(nu, X_test, cands, alpha)
    n = len(scored)
    totals = (S[None, :] + addons) / (n + 1)
    sols = _scan_rows(cands, totals, f"rscp_monotone_{evaluator}", keep_trace)
    return _finalize_batch(sols, single)


def _consistent_observations(support, table, K, x_key):
    """All distinct coarsened observations sharing a pre-image with some
    support point at the given baseline covariates: (level, observed key)."""
    obs = []
    seen = set()
    pts = [p for p in support.points if p[0] == x_key]
    if pts:
        obs.append((0, (x_key, (), None)))
    for p in pts:
        for k in range(1, K + 1):
            key = _pattern_key(p, table.patterns[k])
            if (k, key) not in seen:
                seen.add((k, key))
                obs.append((k, key))
        if ("inf", p) not in seen:
            seen.add(("inf", p))
            obs.append(("inf", p))
    return obs


def _pseudo_record(level, key_or_point, table, D):
    from .core import CoarseningLevel

    if level == 0:
        x, _, _ = key_or_point
        blocks = tuple([None] * D)
        return CoarsenedRecord(CoarseningLevel.finite(0), list(x), blocks, None)
    if level == "inf":
        x, zs, y = key_or_point
        return CoarsenedRecord(CoarseningLevel.full(), list(x), tuple(list(z) for z in zs), y)
    x, obs_z, y = key_or_point
    mask = table.patterns[level]
    blocks = []
    it = iter(obs_z)
    for j in range(D):
        blocks.append(list(next(it)) if mask[j] else None)
    return CoarsenedRecord(CoarseningLevel.finite(level), list(x), tuple(blocks), y)


def solve_rscp_nonmonotone(cal, nu, x_test, alpha, support, inf_strategy="enumerate", keep_trace=False):
    """Non-monotone calibration; the add-on is the infimum of the estimated
    influence value over every observation consistent with the test point.

    inf_strategy "enumerate" minimizes over all consistent (level, observed
    blocks) pairs; "baseline" restricts to the baseline-only observation,
    reproducing the closed-form add-on of the nested-regime solvers.
    """
    if not cal:
        raise EmptyCalibration("empty calibration set")
    if inf_strategy not in ("enumerate", "baseline"):
        raise ValueError(f"unknown inf_strategy {inf_strategy!r}")
    table = nu.regime.table
    K = nu.car_weights.K
    support_ys = [p[2] for p in support.points]
    cal_ys = [r.y for r in cal if r.y is not None]
    cands = candidate_grid(nu.grid, support_ys + cal_ys)
    precomp = NonMonotonePrecomp(support, nu.car_weights, table, alpha)
    M, w = nonmonotone_if_matrix(cal, nu, cands, alpha, support, precomp)
    S = M.sum(axis=0)
    X_test, single = _as_test_matrix(x_test)
    n = len(cal)
    sols = []
    for x_row in X_test:
        x_key = tuple(float(v) for v in x_row)
        if inf_strategy == "baseline":
            obs = [(0, (x_key, (), None))]
        else:
            obs = _consistent_observations(support, table, K, x_key)
            if not obs:
                obs = [(0, (x_key, (), None))]
        rows = []
        for level, key in obs:
            rec = _pseudo_record(level, key, table, table.D)
            row, _ = nonmonotone_if_matrix([rec], nu, cands, alpha, support, precomp)
            rows.append(row[0])
        addon = np.min(np.vstack(rows), axis=0)
        totals = (S + addon) / (n + 1)
        sols.extend(_scan_rows(cands, totals[None, :], "rscp_nonmonotone", keep_trace))
    return _finalize_batch(sols, single)


def solve_tilde_dr(cal, nu, alpha, score_model, keep_trace=False):
    """Plug-in baseline: smallest theta with the plain mean influence >= 0."""
    if not cal:
        raise EmptyCalibration("empty calibration set")
    scored = apply_score(cal, score_model)
    scores = [r.y for r in scored if r.level.is_full]
    cands = candidate_grid(nu.grid, scores)
    if nu.regime.kind == "covariate_shift":
        M, _ = covshift_if_matrix(scored, nu, cands, alpha)
    else:
        M, _ = multistage_if_matrix(scored, nu, cands, alpha)
    totals = M.mean(axis=0)
    return _scan_rows(cands, totals[None, :], "tilde_dr", keep_trace)[0]


def solve_with_realized_test(cal, nu, test_record, alpha, score_model, keep_trace=False):
    """Internal variant: (n+1)-sum using the test record's realized term.

    Used to certify the ordering r_hat' <= r_hat(x_test): the realized term
    of a baseline-only test record can never undercut the infimum add-on.
    """
    if not cal:
        raise EmptyCalibration("empty calibration set")
    scored = apply_score(cal, score_model)
    scores = [r.y for r in scored if r.level.is_full]
    cands = candidate_grid(nu.grid, scores)
    if nu.regime.kind == "covariate_shift":
        matrix_fn = covshift_if_matrix
    else:
        matrix_fn = multistage_if_matrix
    M, _ = matrix_fn(list(scored) + [test_record], nu, cands, alpha)
    totals = M.sum(axis=0) / (len(scored) + 1)
    return _scan_rows(cands, totals[None, :], "realized_test", keep_trace)[0]


def solve_wcp(scores, weights, w_test, alpha, keep_trace=False):
    """Weighted conformal quantile with a point mass at +infinity."""
    scores = np.asarray(scores, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if scores.size == 0:
        raise EmptyCalibration("no calibration scores")
    if np.any(weights < 0) or w_test < 0:
        raise ZeroWeights("weights must be nonnegative")
    denom = weights.sum() + w_test
    if denom <= 0:
        raise ZeroWeights("all weights are zero")
    order = np.argsort(scores, kind="stable")
    cum = np.cumsum(weights[order]) / denom
    cands = scores[order]
    totals = cum - (1.0 - alpha)
    sols = _scan_rows(cands, totals[None, :], "wcp", keep_trace)
    return sols[0]


def solve_crc(cal_grid_functions, alpha, keep_trace=False):
    """Conformal risk control: smallest theta on the shared grid where the
    inflated empirical risk drops to alpha."""
    funcs = list(cal_grid_functions)
    if not funcs:
        raise EmptyCalibration("no calibration targets")
    grid = funcs[0].breakpoints
    N = len(funcs)
    mat = np.vstack([np.asarray(f(grid), dtype=float) for f in funcs])
    risk = (N / (N + 1)) * (1.0 - mat.mean(axis=0)) + 1.0 / (N + 1)
    totals = alpha - risk  # >= 0 iff the CRC inequality holds
    return _scan_rows(grid, totals[None, :], "crc", keep_trace)[0]
