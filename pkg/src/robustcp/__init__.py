"""Robust split conformal prediction under coarsened training data."""

from .calibrate import (
    ThresholdSolution,
    apply_score,
    candidate_grid,
    solve_crc,
    solve_generic_rscp,
    solve_rscp_covshift,
    solve_rscp_monotone,
    solve_rscp_nonmonotone,
    solve_tilde_dr,
    solve_wcp,
    solve_with_realized_test,
)
from .core import (
    CoarsenedRecord,
    CoarseningLevel,
    MonotoneGridFunction,
    PatternTable,
    SplitDataset,
    StepFunctionSum,
    indicator_step,
    merge_step_functions,
    split_dataset,
    validate_pattern,
)
from .errors import (
    ConfigError,
    DegenerateSplit,
    EmptyCalibration,
    EmptyInput,
    InsufficientData,
    InvalidPmf,
    MissingBlock,
    MissingNuisance,
    MissingPrecomputation,
    NoClosedForm,
    OutOfSupport,
    RegimeMismatch,
    RobustCpError,
    SchemaError,
    SingularOperator,
    SingularWeights,
    UnfittedModel,
    UnknownLevel,
    ZeroWeights,
)
from .influence import (
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
from .nuisance import (
    NuisanceSet,
    OracleCdfModel,
    OutcomeCdfModel,
    PropensityModel,
    Regime,
    build_pseudo_outcomes,
    default_grid,
    fit_covshift_nuisances,
    fit_propensity_stage,
    fit_sequential_regressions,
    fit_terminal_cdf,
    oracle_nuisances,
    pseudo_outcome_matrix,
)
from .scores import (
    PredictionSet,
    ScoreModel,
    fit_score_model,
    invert_score,
    score,
)
from .simulate import (
    ExperimentReport,
    SimConfig,
    run_monte_carlo,
    run_theorem_checks,
)

__version__ = "0.1.0"
