"""Paired-microbenchmark fan-out orchestrator with bootstrap regression gating.

Runs both versions of a software under test inside the same short-lived
instance, fans the repeats out over many instances in parallel, and
classifies each benchmark by whether the bootstrap confidence interval of
the median relative difference excludes zero.
"""

from .errors import (
    AdapterError,
    ComparisonError,
    ConfigError,
    DataIntegrityError,
    ElastibenchError,
    ExperimentAborted,
    InvalidId,
    InvocationError,
    PlanError,
    StatsError,
)
from .model import (
    BenchmarkFailure,
    BenchmarkId,
    BenchmarkStats,
    Classification,
    ExclusionReason,
    ExperimentConfig,
    ExperimentResult,
    FailureCause,
    Measurement,
    PairedSample,
    Version,
    VersionPair,
    canonical_id,
    pair_measurements,
)
from .orchestrator import ExecutionPlan, Pricing, build_plan, estimate_cost, execute
from .stats import (
    BootstrapConfig,
    ComparisonReport,
    ComparisonVerdict,
    analyze_experiment,
    bootstrap_median_ci,
    classify,
    compare_experiments,
    repeats_for_ci_size,
)

__version__ = "0.1.0"

__all__ = [
    "AdapterError",
    "BenchmarkFailure",
    "BenchmarkId",
    "BenchmarkStats",
    "BootstrapConfig",
    "Classification",
    "ComparisonError",
    "ComparisonReport",
    "ComparisonVerdict",
    "ConfigError",
    "DataIntegrityError",
    "ElastibenchError",
    "ExclusionReason",
    "ExecutionPlan",
    "ExperimentAborted",
    "ExperimentConfig",
    "ExperimentResult",
    "FailureCause",
    "InvalidId",
    "InvocationError",
    "Measurement",
    "PairedSample",
    "PlanError",
    "Pricing",
    "StatsError",
    "Version",
    "VersionPair",
    "analyze_experiment",
    "bootstrap_median_ci",
    "build_plan",
    "canonical_id",
    "classify",
    "compare_experiments",
    "estimate_cost",
    "execute",
    "pair_measurements",
    "repeats_for_ci_size",
]
