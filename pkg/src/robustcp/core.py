"""Data model for coarsened observations and step-function machinery.

A coarsened observation carries a coarsening level telling which blocks of
the full vector (x, z_1..z_D, y) were recorded.  Level 0 means baseline
covariates only; the full level means everything was observed.  All solver
arithmetic in this package runs on right-continuous step functions of the
threshold variable, so the exact-scan calibrators can find infima without
numeric root finding.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateSplit, EmptyInput, UnknownLevel

FULL = -1  # internal tag only; never exposed as a numeric level


@dataclass(frozen=True)
class CoarseningLevel:
    """Tagged coarsening level: either a finite stage count or fully observed."""

    _tag: int

    @classmethod
    def finite(cls, k: int) -> "CoarseningLevel":
        if k < 0:
            raise ValueError("finite coarsening level must be >= 0")
        return cls(int(k))

    @classmethod
    def full(cls) -> "CoarseningLevel":
        return cls(FULL)

    @property
    def is_full(self) -> bool:
        return self._tag == FULL

    @property
    def k(self) -> int:
        if self.is_full:
            raise ValueError("full level has no finite index")
        return self._tag

    def at_least(self, j: int) -> bool:
        """True iff the level is Finite(k) with k >= j, or full."""
        return self.is_full or self._tag >= j

    def __repr__(self) -> str:
        return "Full" if self.is_full else f"Finite({self._tag})"


@dataclass(frozen=True)
class CoarsenedRecord:
    """One observation: coarsening level plus whichever blocks were recorded.

    ``z_blocks`` has one slot per stage; a slot is ``None`` when that stage's
    covariates are unobserved.  ``y`` is ``None`` unless the outcome was seen.
    """

    level: CoarseningLevel
    x: np.ndarray
    z_blocks: tuple = ()
    y: float | None = None

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        if x.ndim != 1 or x.size < 1:
            raise ValueError("x must be a nonempty 1-d vector")
        object.__setattr__(self, "x", x)
        blocks = tuple(
            None if b is None else np.asarray(b, dtype=float) for b in self.z_blocks
        )
        object.__setattr__(self, "z_blocks", blocks)

    def observed_prefix(self, j: int) -> np.ndarray:
        """Concatenate x with z-blocks 1..j (all must be present)."""
        parts = [self.x]
        for b in self.z_blocks[:j]:
            if b is None:
                raise ValueError("requested z-block is unobserved")
            parts.append(b)
        return np.concatenate(parts)


@dataclass(frozen=True)
class PatternTable:
    """Presence masks per finite coarsening level.

    ``patterns[k]`` is a boolean mask over the slots (z_1, .., z_D, y); x is
    implicitly always observed.  Level 0 is the all-absent mask and the full
    level is implicitly all-present.
    """

    D: int
    patterns: dict = field(default_factory=dict)

    def __post_init__(self):
        pats = {int(k): tuple(bool(b) for b in mask) for k, mask in self.patterns.items()}
        if 0 not in pats:
            pats[0] = tuple([False] * (self.D + 1))
        for k, mask in pats.items():
            if len(mask) != self.D + 1:
                raise ValueError(f"mask for level {k} must have D+1={self.D + 1} slots")
        if any(pats[0]):
            raise ValueError("level 0 must be the all-absent mask")
        object.__setattr__(self, "patterns", pats)

    @classmethod
    def monotone(cls, D: int) -> "PatternTable":
        """Nested masks: level k observes z_1..z_k, y only at the full level."""
        pats = {}
        for k in range(D + 1):
            pats[k] = tuple([j < k for j in range(D)] + [False])
        return cls(D=D, patterns=pats)

    @property
    def K(self) -> int:
        return max(self.patterns)

    def covers(self, level: CoarseningLevel) -> bool:
        return level.is_full or level.k in self.patterns

    def mask(self, level: CoarseningLevel) -> tuple:
        if level.is_full:
            return tuple([True] * (self.D + 1))
        if level.k not in self.patterns:
            raise UnknownLevel(f"level {level!r} not in pattern table")
        return self.patterns[level.k]

    def is_monotone(self) -> bool:
        levels = sorted(self.patterns)
        for a, b in zip(levels, levels[1:]):
            ma, mb = self.patterns[a], self.patterns[b]
            if not all((not x) or y for x, y in zip(ma, mb)):
                return False
        return True


def validate_pattern(record: CoarsenedRecord, table: PatternTable) -> bool:
    """True iff the record's observed blocks match its level's mask exactly."""
    if not table.covers(record.level):
        raise UnknownLevel(f"level {record.level!r} not in pattern table")
    mask = table.mask(record.level)
    blocks = list(record.z_blocks) + [None] * (table.D - len(record.z_blocks))
    for present, block in zip(mask[:-1], blocks):
        if present != (block is not None):
            return False
    return mask[-1] == (record.y is not None)


@dataclass(frozen=True)
class SplitDataset:
    train: list
    calibration: list
    split_seed: int


def split_dataset(records, train_fraction: float, seed: int) -> SplitDataset:
    """Deterministic shuffle-and-split into train / calibration parts."""
    if not records:
        raise EmptyInput("no records to split")
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie in (0, 1)")
    n = len(records)
    n_train = int(np.floor(train_fraction * n))
    if n_train == 0 or n_train == n:
        raise DegenerateSplit(
            f"split of {n} records at fraction {train_fraction} leaves one side empty"
        )
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    train = [records[i] for i in perm[:n_train]]
    cal = [records[i] for i in perm[n_train:]]
    return SplitDataset(train=train, calibration=cal, split_seed=int(seed))


class MonotoneGridFunction:
    """Right-continuous nondecreasing step function on a finite knot grid."""

    def __init__(self, knots, values, left_limit: float = 0.0):
        self.knots = np.asarray(knots, dtype=float)
        self.values = np.asarray(values, dtype=float)
        if self.knots.ndim != 1 or self.knots.shape != self.values.shape:
            raise ValueError("knots and values must be 1-d and the same length")
        if np.any(np.diff(self.knots) <= 0):
            raise ValueError("knots must be strictly increasing")
        self.left_limit = float(left_limit)

    def __call__(self, theta):
        theta = np.asarray(theta, dtype=float)
        idx = np.searchsorted(self.knots, theta, side="right") - 1
        padded = np.concatenate([[self.left_limit], self.values])
        out = padded[idx + 1]
        return out if out.ndim else float(out)

    def is_monotone(self) -> bool:
        vals = np.concatenate([[self.left_limit], self.values])
        return bool(np.all(np.diff(vals) >= 0))

    @property
    def breakpoints(self) -> np.ndarray:
        return self.knots


class StepFunctionSum:
    """Right-continuous step function with queryable maximum jump."""

    def __init__(self, breakpoints, values, base_value: float = 0.0):
        self.breakpoints = np.asarray(breakpoints, dtype=float)
        self.values = np.asarray(values, dtype=float)
        if self.breakpoints.shape != self.values.shape:
            raise ValueError("breakpoints and values must have equal length")
        if self.breakpoints.size and np.any(np.diff(self.breakpoints) <= 0):
            raise ValueError("breakpoints must be sorted and deduplicated")
        self.base_value = float(base_value)

    def __call__(self, theta):
        theta = np.asarray(theta, dtype=float)
        idx = np.searchsorted(self.breakpoints, theta, side="right") - 1
        padded = np.concatenate([[self.base_value], self.values])
        out = padded[idx + 1]
        return out if out.ndim else float(out)

    @property
    def max_jump(self) -> float:
        if self.breakpoints.size == 0:
            return 0.0
        padded = np.concatenate([[self.base_value], self.values])
        return float(np.max(np.abs(np.diff(padded))))

    def scaled(self, factor: float) -> "StepFunctionSum":
        return StepFunctionSum(self.breakpoints, self.values * factor, self.base_value * factor)


def indicator_step(threshold: float, weight: float = 1.0, base: float = 0.0) -> StepFunctionSum:
    """weight * 1{theta >= threshold} + base."""
    return StepFunctionSum([threshold], [base + weight], base)


def merge_step_functions(terms) -> StepFunctionSum:
    """Exact pointwise sum of right-continuous step functions.

    Breakpoints of the result are the (deduplicated) union of the inputs'.
    The value at a shared breakpoint is the sum of right limits.
    """
    terms = list(terms)
    if not terms:
        return StepFunctionSum(np.array([]), np.array([]), 0.0)
    bps = np.unique(np.concatenate([np.asarray(t.breakpoints, dtype=float) for t in terms]))
    if bps.size == 0:
        base = float(sum(t(np.array(0.0)) for t in terms))
        return StepFunctionSum(np.array([]), np.array([]), base)
    values = np.zeros_like(bps)
    base = 0.0
    lo_probe = bps[0] - 1.0
    for t in terms:
        values = values + np.asarray(t(bps), dtype=float)
        base += float(t(lo_probe))
    return StepFunctionSum(bps, values, base)
