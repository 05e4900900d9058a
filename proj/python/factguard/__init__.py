"""Python access to the factguard core: metrics, prompt rendering, parsing,
fold planning and report replay."""

from ._factguard import (
    ConfigError,
    ContractViolation,
    Error,
    IncompleteAnnotationError,
    ParseError,
    PromptSet,
    auprc,
    balanced_accuracy,
    confusion,
    density_bins,
    f1,
    ordinal_percentile,
    parse_generation,
    parse_yes_no,
    pearson,
    percentile_ranks,
    plan_folds,
    render_attributes,
    report,
    risk_difference,
    segment_points,
    threshold_predict,
    weighted_cost,
    wilcoxon_rank_sum,
)

__all__ = [
    "ConfigError",
    "ContractViolation",
    "Error",
    "IncompleteAnnotationError",
    "ParseError",
    "PromptSet",
    "auprc",
    "balanced_accuracy",
    "confusion",
    "density_bins",
    "f1",
    "ordinal_percentile",
    "parse_generation",
    "parse_yes_no",
    "pearson",
    "percentile_ranks",
    "plan_folds",
    "render_attributes",
    "report",
    "risk_difference",
    "segment_points",
    "threshold_predict",
    "weighted_cost",
    "wilcoxon_rank_sum",
]
