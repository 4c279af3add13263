"""MinMax and B-MinMax Poisson sampling for distributed vector aggregation."""

__version__ = "0.1.0"

from .aggregation import (
    AggregateEstimate,
    Mode,
    SiteSummary,
    adaptive_aggregate,
    aggregate_fixed,
    compute_site_summary,
    estimate_aggregate_mse,
)
from .estimators import MinMaxAggregator, MinMaxSampler
from .exceptions import AssumptionError, BMinMaxError, ConfigError, DataError, PayloadError
from .sampling import (
    SampleDraw,
    SamplingPlan,
    SiteVector,
    analytic_bminmax_moments,
    analytic_minmax_mse,
    assign_probabilities,
    minmax_point_estimate,
    mse_gap,
    plan_for,
    poisson_sample,
    solve_threshold,
)
from .wire import (
    SitePayload,
    build_payload,
    decode_payload,
    effective_compression,
    encode_payload,
    read_payload,
    write_payload,
)

__all__ = [
    "AggregateEstimate", "AssumptionError", "BMinMaxError", "ConfigError", "DataError",
    "MinMaxAggregator", "MinMaxSampler", "Mode", "PayloadError", "SampleDraw",
    "SamplingPlan", "SitePayload", "SiteSummary", "SiteVector", "adaptive_aggregate",
    "aggregate_fixed", "analytic_bminmax_moments", "analytic_minmax_mse",
    "assign_probabilities", "build_payload", "compute_site_summary", "decode_payload",
    "effective_compression", "encode_payload", "estimate_aggregate_mse",
    "minmax_point_estimate", "mse_gap", "plan_for", "poisson_sample", "read_payload",
    "solve_threshold", "write_payload",
]
