"""Data-generating processes for the simulation harness.

Three families:

* a Gaussian two-stage monotone design with logistic coarsening ("setting1"),
* the same design observed through nonlinear covariate transforms ("setting2"),
* a small fully enumerable discrete toy with covariate-shift, monotone and
  non-monotone coarsening views, used for exact-identity checks,

plus a three-stage monotone chain with a discrete outcome for the
classification-score experiment.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit
from scipy.stats import norm

from .core import CoarsenedRecord, CoarseningLevel, PatternTable
from .errors import InvalidPmf


class S1:
    """Coefficients of the Gaussian two-stage design."""

    T_COEF = 0.2
    S_X = 0.1
    S_Z1 = 0.1
    S_Z2 = 0.05
    Z2_X = 2.0
    Z2_Z1 = 1.0
    Z2_SD = 0.2
    Y_X = 2.0
    Y_Z1 = 2.0
    Y_Z2 = 0.6
    Y_SD = 0.2
    # marginalizing z: y = 3.2 x + 2.6 z1 + 0.12 e1 + 0.2 e2
    M1_SLOPE = 3.2
    M1_SD = float(np.sqrt(2.6**2 + 0.12**2 + 0.2**2))


def _setting1_latent(n: int, seed: int):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n)
    z1 = rng.standard_normal(n)
    e1 = rng.standard_normal(n)
    e2 = rng.standard_normal(n)
    z2 = S1.Z2_X * x + S1.Z2_Z1 * z1 + S1.Z2_SD * e1
    y = S1.Y_X * x + S1.Y_Z1 * z1 + S1.Y_Z2 * z2 + S1.Y_SD * e2
    t = rng.random(n) < expit(S1.T_COEF * x)
    s_draw = rng.random(n) < expit(S1.S_X * x + S1.S_Z1 * z1 + S1.S_Z2 * z2)
    s = np.where(t, False, s_draw)
    return x, z1, z2, y, t, s


def _assemble_two_stage(x_obs, z_obs, y, t, s):
    records = []
    for i in range(len(y)):
        if t[i]:
            records.append(
                CoarsenedRecord(CoarseningLevel.finite(0), x_obs[i], (None,), None)
            )
        elif not s[i]:
            records.append(
                CoarsenedRecord(CoarseningLevel.finite(1), x_obs[i], (z_obs[i],), None)
            )
        else:
            records.append(
                CoarsenedRecord(CoarseningLevel.full(), x_obs[i], (z_obs[i],), float(y[i]))
            )
    return records


def gen_setting1(n: int, seed: int):
    """Two-stage monotone records from the Gaussian design."""
    x, z1, z2, y, t, s = _setting1_latent(n, seed)
    x_obs = x[:, None]
    z_obs = np.stack([z1, z2], axis=1)
    return _assemble_two_stage(x_obs, z_obs, y, t, s)


def gen_setting2(n: int, seed: int):
    """Same latent design, observed through nonlinear covariate transforms.

    Records expose only the transformed covariates; the latent coordinates
    never leave this function.
    """
    x, z1, z2, y, t, s = _setting1_latent(n, seed)
    x_obs = np.exp(x / 2.0)[:, None]
    z_obs = np.stack([(z1 * z2 + 0.6) ** 3, (z1 + z2) ** 2], axis=1)
    return _assemble_two_stage(x_obs, z_obs, y, t, s)


class GC:
    """Coefficients of the Gaussian covariate-shift design."""

    OMEGA0_INTERCEPT = -2.0
    OMEGA0_COEF = 0.2
    Y_SLOPE = 1.5
    Y_SD = 0.5


def gen_gaussian_covshift(n: int, seed: int):
    """Covariate-shift records: x standard normal, Gaussian outcome, logistic
    baseline-only probability."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n)
    y = GC.Y_SLOPE * x + GC.Y_SD * rng.standard_normal(n)
    base = rng.random(n) < expit(GC.OMEGA0_INTERCEPT + GC.OMEGA0_COEF * x)
    records = []
    for i in range(n):
        if base[i]:
            records.append(CoarsenedRecord(CoarseningLevel.finite(0), [x[i]], (), None))
        else:
            records.append(CoarsenedRecord(CoarseningLevel.full(), [x[i]], (), float(y[i])))
    return records


def gaussian_covshift_oracle(grid):
    """Exact covariate-shift nuisances for the Gaussian design (raw score)."""
    from .nuisance import NuisanceSet, OracleCdfModel, PropensityModel, Regime

    grid = np.asarray(grid, dtype=float)

    def pi1(F):
        return np.exp(GC.OMEGA0_INTERCEPT + GC.OMEGA0_COEF * F[:, 0])

    def m1(F, thetas):
        mean = GC.Y_SLOPE * F[:, 0]
        return norm.cdf((thetas[None, :] - mean[:, None]) / GC.Y_SD)

    return NuisanceSet(
        regime=Regime.covariate_shift(),
        propensities=[PropensityModel(1, pi1)],
        outcomes=[OracleCdfModel(1, grid, m1)],
        grid=grid,
    )


# discrete enumeration toy


def _discretized_normal_pmf(support: np.ndarray, mu: float, sd: float) -> np.ndarray:
    edges = np.concatenate([[-np.inf], (support[:-1] + support[1:]) / 2.0, [np.inf]])
    return np.diff(norm.cdf((edges - mu) / sd))


@dataclass
class ToySpec:
    """Fully enumerable discrete joint law with three coarsening views.

    Baseline covariate x in {-1, 1}, stage covariate z in {0, 1}, outcome y
    on a small integer support.  Coarsening probabilities are logistic in
    the observed blocks, so every view satisfies coarsening at random.
    """

    xs: tuple = (-1.0, 1.0)
    zs: tuple = (0.0, 1.0)
    ys: tuple = (1.0, 2.0, 3.0, 4.0, 5.0)
    p_x: tuple = (0.5, 0.5)
    z_coef: float = 0.4  # P(z=1|x) = expit(z_coef * x)
    y_mu: tuple = (2.6, 0.5, 0.4)  # intercept, x slope, z slope
    y_sd: float = 0.9
    omega0_coef: float = 0.2  # P(C=0|x) = expit(omega0_coef * x)
    pi2_coefs: tuple = (0.3, 0.2, 0.3)  # stage-2 survival, monotone view
    nonmono_w: tuple = (0.15, 0.15)  # constant omega for patterns 1, 2

    y_pmf_table: dict = field(init=False, repr=False)

    def __post_init__(self):
        if not np.isclose(sum(self.p_x), 1.0):
            raise InvalidPmf("p_x must sum to 1")
        table = {}
        ys = np.asarray(self.ys, dtype=float)
        b0, bx, bz = self.y_mu
        for x in self.xs:
            for z in self.zs:
                pmf = _discretized_normal_pmf(ys, b0 + bx * x + bz * z, self.y_sd)
                if np.any(pmf < 0) or not np.isclose(pmf.sum(), 1.0):
                    raise InvalidPmf("outcome pmf invalid")
                table[(x, z)] = pmf
        self.y_pmf_table = table

    # marginal and conditional building blocks

    def p_z_given_x(self, x: float) -> np.ndarray:
        p1 = expit(self.z_coef * x)
        return np.array([1.0 - p1, p1])

    def y_pmf(self, x: float, z: float) -> np.ndarray:
        return self.y_pmf_table[(x, z)]

    def y_pmf_marginal(self, x: float) -> np.ndarray:
        pz = self.p_z_given_x(x)
        return sum(pz[i] * self.y_pmf(x, z) for i, z in enumerate(self.zs))

    def y_cdf(self, x: float, z: float, theta: float) -> float:
        ys = np.asarray(self.ys)
        return float(self.y_pmf(x, z)[ys <= theta].sum())

    def y_cdf_marginal(self, x: float, theta: float) -> float:
        ys = np.asarray(self.ys)
        return float(self.y_pmf_marginal(x)[ys <= theta].sum())

    def omega0(self, x: float) -> float:
        return float(expit(self.omega0_coef * x))

    def pi1_odds(self, x: float) -> float:
        w = self.omega0(x)
        return w / (1.0 - w)

    def pi2(self, x: float, z: float) -> float:
        a, bx, bz = self.pi2_coefs
        return float(expit(a + bx * x + bz * z))

    def full_points(self):
        """All (x, z, y, prob) cells of the joint full-data law."""
        out = []
        for ix, x in enumerate(self.xs):
            pz = self.p_z_given_x(x)
            for iz, z in enumerate(self.zs):
                pmf = self.y_pmf(x, z)
                for iy, y in enumerate(self.ys):
                    out.append((x, z, y, self.p_x[ix] * pz[iz] * pmf[iy]))
        return out

    def nonmono_omega(self, k, x: float) -> float:
        """Pattern probabilities for the non-monotone view.

        k: 0 baseline-only, 1 observes z, 2 observes y, "inf" complete.
        Every probability depends on x alone, which keeps the view CAR.
        """
        w0 = self.omega0(x)
        w1, w2 = self.nonmono_w
        if k == 0:
            return w0
        if k == 1:
            return w1
        if k == 2:
            return w2
        if k == "inf":
            return 1.0 - w0 - w1 - w2
        raise ValueError(f"unknown pattern {k!r}")

    def nonmono_table(self) -> PatternTable:
        # masks over (z, y)
        return PatternTable(D=1, patterns={0: (False, False), 1: (True, False), 2: (False, True)})

    def level_probs(self, view: str, x: float, z: float) -> dict:
        """Conditional coarsening distribution given the full data point."""
        if view == "covshift":
            w0 = self.omega0(x)
            return {0: w0, "inf": 1.0 - w0}
        if view == "monotone":
            w0 = self.omega0(x)
            p2 = self.pi2(x, z)
            return {0: w0, 1: (1.0 - w0) * (1.0 - p2), "inf": (1.0 - w0) * p2}
        if view == "nonmonotone":
            return {k: self.nonmono_omega(k, x) for k in (0, 1, 2, "inf")}
        raise ValueError(f"unknown view {view!r}")


def default_toy_spec() -> ToySpec:
    return ToySpec()


def _toy_record(view: str, level, x: float, z: float, y: float) -> CoarsenedRecord:
    if view == "covshift":
        if level == 0:
            return CoarsenedRecord(CoarseningLevel.finite(0), [x], (), None)
        return CoarsenedRecord(CoarseningLevel.full(), [x], (), float(y))
    if level == "inf":
        return CoarsenedRecord(CoarseningLevel.full(), [x], ([z],), float(y))
    if level == 0:
        return CoarsenedRecord(CoarseningLevel.finite(0), [x], (None,), None)
    if level == 1:
        return CoarsenedRecord(CoarseningLevel.finite(1), [x], ([z],), None)
    if level == 2:  # non-monotone pattern: y without z
        return CoarsenedRecord(CoarseningLevel.finite(2), [x], (None,), float(y))
    raise ValueError(f"unknown level {level!r}")


def gen_discrete_toy(spec: ToySpec, view: str, n: int, seed: int):
    """Sample coarsened records from the toy under the requested view."""
    rng = np.random.default_rng(seed)
    cells = spec.full_points()
    probs = np.array([c[3] for c in cells])
    picks = rng.choice(len(cells), size=n, p=probs)
    records = []
    for i in picks:
        x, z, y, _ = cells[i]
        levels = spec.level_probs(view, x, z)
        keys = list(levels)
        level = keys[rng.choice(len(keys), p=np.array([levels[k] for k in keys]))]
        records.append(_toy_record(view, level, x, z, y))
    return records


def toy_joint_enumeration(spec: ToySpec, view: str):
    """Every (level, x, z, y, prob) cell of the observed-data law."""
    out = []
    if view == "covshift":
        for ix, x in enumerate(spec.xs):
            pmf = spec.y_pmf_marginal(x)
            for iy, y in enumerate(spec.ys):
                cell = spec.p_x[ix] * pmf[iy]
                for level, w in spec.level_probs(view, x, 0.0).items():
                    out.append((level, x, None, y, cell * w))
        return out
    for x, z, y, p in spec.full_points():
        for level, w in spec.level_probs(view, x, z).items():
            out.append((level, x, z, y, p * w))
    return out


def toy_coverage(spec: ToySpec, theta: float) -> float:
    """P(Y <= theta | C = 0); the baseline stratum depends on x only."""
    w = np.array([spec.omega0(x) for x in spec.xs])
    px = np.asarray(spec.p_x) * w
    px = px / px.sum()
    return float(sum(px[i] * spec.y_cdf_marginal(x, theta) for i, x in enumerate(spec.xs)))


def discrete_toy_oracle(regime, grid, spec: ToySpec | None = None):
    """Exact nuisance set for the toy in any of its three views."""
    from .influence import CarWeightModel
    from .nuisance import NuisanceSet, OracleCdfModel, PropensityModel

    spec = spec or default_toy_spec()
    grid = np.asarray(grid, dtype=float)
    ys = np.asarray(spec.ys)

    def pi1(F):
        return np.array([spec.pi1_odds(x) for x in F[:, 0]])

    def m1(F, thetas):
        out = np.empty((F.shape[0], thetas.size))
        for i, x in enumerate(F[:, 0]):
            pmf = spec.y_pmf_marginal(x)
            out[i] = [pmf[ys <= t].sum() for t in thetas]
        return out

    props = [PropensityModel(1, pi1)]
    outs = [OracleCdfModel(1, grid, m1)]
    if regime.kind == "covariate_shift":
        return NuisanceSet(regime=regime, propensities=props, outcomes=outs, grid=grid)
    if regime.kind == "monotone":
        if regime.D != 1:
            raise ValueError("the toy's monotone view is two-stage")

        def pi2(F):
            return np.array([spec.pi2(x, z) for x, z in F[:, :2]])

        def m2(F, thetas):
            out = np.empty((F.shape[0], thetas.size))
            for i, (x, z) in enumerate(F[:, :2]):
                pmf = spec.y_pmf(x, z)
                out[i] = [pmf[ys <= t].sum() for t in thetas]
            return out

        props.append(PropensityModel(2, pi2))
        outs.append(OracleCdfModel(2, grid, m2))
        return NuisanceSet(regime=regime, propensities=props, outcomes=outs, grid=grid)
    if regime.kind == "nonmonotone":
        def pi1_nm(F):
            w0 = np.array([spec.nonmono_omega(0, x) for x in F[:, 0]])
            return w0 / (1.0 - w0)

        weights = CarWeightModel(
            lambda k, point: spec.nonmono_omega(k, float(point[0][0])), K=2
        )
        props = [PropensityModel(1, pi1_nm)]
        return NuisanceSet(
            regime=regime, propensities=props, outcomes=outs, grid=grid, car_weights=weights
        )
    raise ValueError(f"unknown regime {regime.kind!r}")


# three-stage monotone chain with a discrete outcome

class Chain3:
    """Coefficients of the three-stage discrete-outcome chain."""

    YS = (1.0, 2.0, 3.0, 4.0, 5.0)
    Z1_COEF = 0.3
    Z2_COEFS = (0.0, 0.2, 0.3)
    Y_MU = (2.6, 0.6, 0.4, 0.4)
    Y_SD = 0.9
    OMEGA0_COEF = 0.2
    PI2_COEFS = (0.4, 0.2, 0.2)
    PI3_COEFS = (0.5, 0.1, 0.2)


def gen_discrete_chain(n: int, seed: int):
    """Monotone D=2 records: continuous x, binary stage covariates, y in 1..5."""
    rng = np.random.default_rng(seed)
    ys = np.asarray(Chain3.YS)
    x = rng.standard_normal(n)
    z1 = (rng.random(n) < expit(Chain3.Z1_COEF * x)).astype(float)
    a, bx, bz = Chain3.Z2_COEFS
    z2 = (rng.random(n) < expit(a + bx * x + bz * z1)).astype(float)
    b0, b1, b2, b3 = Chain3.Y_MU
    y = np.empty(n)
    for i in range(n):
        pmf = _discretized_normal_pmf(ys, b0 + b1 * x[i] + b2 * z1[i] + b3 * z2[i], Chain3.Y_SD)
        y[i] = ys[rng.choice(len(ys), p=pmf)]
    drop0 = rng.random(n) < expit(Chain3.OMEGA0_COEF * x)
    a2, bx2, bz2 = Chain3.PI2_COEFS
    surv2 = rng.random(n) < expit(a2 + bx2 * x + bz2 * z1)
    a3, bx3, bz3 = Chain3.PI3_COEFS
    surv3 = rng.random(n) < expit(a3 + bx3 * x + bz3 * z2)
    records = []
    for i in range(n):
        if drop0[i]:
            records.append(CoarsenedRecord(CoarseningLevel.finite(0), [x[i]], (None, None), None))
        elif not surv2[i]:
            records.append(CoarsenedRecord(CoarseningLevel.finite(1), [x[i]], ([z1[i]], None), None))
        elif not surv3[i]:
            records.append(
                CoarsenedRecord(CoarseningLevel.finite(2), [x[i]], ([z1[i]], [z2[i]]), None)
            )
        else:
            records.append(
                CoarsenedRecord(CoarseningLevel.full(), [x[i]], ([z1[i]], [z2[i]]), float(y[i]))
            )
    return records
