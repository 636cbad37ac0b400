"""Partition-based distributed moving horizon estimation."""

from ._dmhe import (
    ComparisonRow,
    ConfigError,
    ConstraintSet,
    Coordinator,
    EvaluationError,
    ExperimentConfig,
    FusionResult,
    InfeasibleError,
    LinearModel,
    NormReduction,
    NumericalError,
    Partition,
    RunOutcome,
    StabilityReport,
    SubsystemError,
    Variant,
    check_stability,
    compute_rmse,
    fuse_quadratics,
    load_experiment_config,
    load_linear_model,
    parse_experiment_config,
    parse_linear_model,
    parse_variant,
    reduce_norm_through_matrix,
    run_comparison,
    run_experiment,
    simulate_linear,
    stability_report,
    woodbury_inverse,
)

__all__ = [name for name in dir() if not name.startswith("_")]
