"""Core domain types: identifiers, configuration, measurements, and pairing.

The central record is a :class:`Measurement` (one timed benchmark run of one
software version). Two measurements of the same benchmark taken back-to-back
inside the same instance and invocation form a :class:`PairedSample`, whose
relative difference is what all downstream statistics operate on. Shared
instance speed and time-of-day bias multiply both sides of a pair and cancel
in the relative difference.

All types are immutable values and safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from datetime import datetime, timezone
from enum import Enum
from typing import Any, Iterable, Mapping

from .errors import ConfigError, DataIntegrityError, InvalidId


class Version(Enum):
    V1 = "v1"
    V2 = "v2"


class Classification(Enum):
    NO_CHANGE = "no_change"
    CHANGE_POSITIVE = "change_positive"
    CHANGE_NEGATIVE = "change_negative"
    EXCLUDED = "excluded"


class ExclusionReason(Enum):
    TOO_FEW_RESULTS = "too_few_results"
    ALL_RUNS_FAILED = "all_runs_failed"


class FailureCause(Enum):
    BUILD_OR_RUN_ERROR = "build_or_run_error"
    TIMEOUT = "timeout"
    PARSE_FAILURE = "parse_failure"
    WORKER_CRASH = "worker_crash"
    INVOCATION_ERROR = "invocation_error"
    ABANDONED = "abandoned"


@dataclass(frozen=True, order=True)
class BenchmarkId:
    """Identifier of one microbenchmark, optionally one configuration of it.

    Distinct configurations (e.g. input sizes) of the same benchmark function
    count as independent benchmarks. The canonical string form is
    ``suite_name`` or ``suite_name/config_label``.
    """

    suite_name: str
    config_label: str | None = None

    def __post_init__(self) -> None:
        if not self.suite_name:
            raise InvalidId("suite_name must be non-empty")
        if "/" in self.suite_name:
            raise InvalidId(f"suite_name may not contain '/': {self.suite_name!r}")
        if self.config_label == "":
            raise InvalidId("config_label must be None or non-empty")

    @property
    def canonical(self) -> str:
        if self.config_label is None:
            return self.suite_name
        return f"{self.suite_name}/{self.config_label}"

    @classmethod
    def parse(cls, text: str) -> "BenchmarkId":
        if not text:
            raise InvalidId("empty benchmark id")
        suite, sep, label = text.partition("/")
        return cls(suite, label if sep else None)

    def __str__(self) -> str:
        return self.canonical


def canonical_id(suite_name: str, config_label: str | None = None) -> BenchmarkId:
    """Build a benchmark id; raises :class:`InvalidId` on empty suite names."""
    return BenchmarkId(suite_name, config_label)


@dataclass(frozen=True)
class VersionPair:
    """The two software versions under comparison. Equal refs mean A/A mode."""

    v1_ref: str
    v2_ref: str

    def __post_init__(self) -> None:
        if not self.v1_ref or not self.v2_ref:
            raise ConfigError("version refs must be non-empty")


@dataclass(frozen=True)
class ExperimentConfig:
    """All knobs of one suite run.

    ``in_call_repeats`` (r) is how often each version is measured within one
    invocation; ``call_repeats`` (c) is how many invocations each benchmark
    gets; the target result count per benchmark is r*c. The defaults
    (r=3, c=15, 45 results, parallelism 150, 20 s timeout, fewer than 10
    results excluded, 99% CI, 2048 MB) are the baseline configuration.
    """

    in_call_repeats: int = 3
    call_repeats: int = 15
    max_parallelism: int = 150
    per_benchmark_timeout_s: float = 20.0
    min_results: int = 10
    ci_level: float = 0.99
    bootstrap_resamples: int = 10_000
    randomize_version_order: bool = True
    randomize_call_order: bool = True
    seed: int = 0
    backend: Mapping[str, Any] = field(default_factory=lambda: {"type": "sim"})
    memory_mb: int = 2048
    benchmarks_per_call: int = 1
    expected_invocation_s: float | None = None
    median_estimator: str = "pairwise"

    def __post_init__(self) -> None:
        for name in ("in_call_repeats", "call_repeats", "max_parallelism",
                     "bootstrap_resamples", "memory_mb", "benchmarks_per_call"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        if self.per_benchmark_timeout_s <= 0:
            raise ConfigError("per_benchmark_timeout_s must be positive")
        if self.min_results < 0:
            raise ConfigError("min_results must be non-negative")
        if not 0.0 < self.ci_level < 1.0:
            raise ConfigError("ci_level must lie in (0, 1)")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if self.expected_invocation_s is not None and self.expected_invocation_s <= 0:
            raise ConfigError("expected_invocation_s must be positive when set")
        if self.median_estimator not in ("pairwise", "difference_of_medians"):
            raise ConfigError(f"unknown median_estimator {self.median_estimator!r}")

    @property
    def target_results_per_benchmark(self) -> int:
        return self.in_call_repeats * self.call_repeats

    def to_dict(self) -> dict[str, Any]:
        return {
            "in_call_repeats": self.in_call_repeats,
            "call_repeats": self.call_repeats,
            "max_parallelism": self.max_parallelism,
            "per_benchmark_timeout_s": self.per_benchmark_timeout_s,
            "min_results": self.min_results,
            "ci_level": self.ci_level,
            "bootstrap_resamples": self.bootstrap_resamples,
            "randomize_version_order": self.randomize_version_order,
            "randomize_call_order": self.randomize_call_order,
            "seed": self.seed,
            "backend": dict(self.backend),
            "memory_mb": self.memory_mb,
            "benchmarks_per_call": self.benchmarks_per_call,
            "expected_invocation_s": self.expected_invocation_s,
            "median_estimator": self.median_estimator,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown experiment config keys: {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True)
class Measurement:
    """One raw benchmark timing reported by an instance.

    ``ns_per_op`` is the average nanoseconds per iteration over ``iterations``
    iterations, as benchmark harnesses report it; per-iteration raw timings
    are not kept.
    """

    benchmark: BenchmarkId
    version: Version
    ns_per_op: float
    iterations: int
    instance_id: str
    invocation_id: str
    cold_start: bool
    wall_time: datetime
    repeat_index: int

    def __post_init__(self) -> None:
        if self.ns_per_op <= 0:
            raise DataIntegrityError(f"ns_per_op must be > 0, got {self.ns_per_op}")
        if self.iterations < 1:
            raise DataIntegrityError(f"iterations must be >= 1, got {self.iterations}")
        if self.repeat_index < 0:
            raise DataIntegrityError("repeat_index must be non-negative")


@dataclass(frozen=True)
class PairedSample:
    """A same-instance, same-invocation v1/v2 timing pair.

    The sign convention: positive ``rel_diff_pct`` means v2 is slower than v1
    (a regression), negative means an improvement.
    """

    benchmark: BenchmarkId
    t_v1: float
    t_v2: float
    instance_id: str
    invocation_id: str
    repeat_index: int

    @property
    def rel_diff_pct(self) -> float:
        return (self.t_v2 - self.t_v1) / self.t_v1 * 100.0


@dataclass(frozen=True)
class BenchmarkFailure:
    """One failed repeat slot: the benchmark never produced a usable pair."""

    benchmark: BenchmarkId
    invocation_id: str
    cause: FailureCause
    repeat_index: int | None = None
    detail: str = ""


@dataclass(frozen=True)
class BenchmarkStats:
    """Per-benchmark verdict: median relative difference, its CI, and class.

    Excluded benchmarks (fewer than ``min_results`` samples) carry no numeric
    fields; for all others ``ci_low_pct <= median_diff_pct <= ci_high_pct``.
    """

    benchmark: BenchmarkId
    n: int
    median_diff_pct: float | None
    ci_low_pct: float | None
    ci_high_pct: float | None
    classification: Classification
    exclusion_reason: ExclusionReason | None = None

    def __post_init__(self) -> None:
        if self.classification is Classification.EXCLUDED:
            if self.exclusion_reason is None:
                raise DataIntegrityError("excluded stats need an exclusion_reason")
        else:
            if None in (self.median_diff_pct, self.ci_low_pct, self.ci_high_pct):
                raise DataIntegrityError("non-excluded stats need numeric fields")
            if not (self.ci_low_pct <= self.median_diff_pct <= self.ci_high_pct):
                raise DataIntegrityError(
                    f"median {self.median_diff_pct} outside CI "
                    f"[{self.ci_low_pct}, {self.ci_high_pct}]"
                )

    @property
    def is_change(self) -> bool:
        return self.classification in (
            Classification.CHANGE_POSITIVE,
            Classification.CHANGE_NEGATIVE,
        )

    @property
    def ci_size(self) -> float | None:
        if self.ci_low_pct is None or self.ci_high_pct is None:
            return None
        return self.ci_high_pct - self.ci_low_pct


@dataclass
class ExperimentResult:
    """Everything one suite run produced, in collection order."""

    config: ExperimentConfig
    versions: VersionPair
    measurements: list[Measurement]
    stats: list[BenchmarkStats]
    started_at: datetime
    finished_at: datetime
    failures: list[BenchmarkFailure] = field(default_factory=list)


def pair_measurements(
    measurements: Iterable[Measurement],
) -> tuple[list[PairedSample], list[Measurement]]:
    """Join v1/v2 measurements of the same (benchmark, invocation, repeat).

    Returns ``(pairs, unpaired)``: pairs in first-seen order, plus every
    measurement whose counterpart is missing (reported, never dropped
    silently). Duplicate slots and cross-instance joins raise
    :class:`DataIntegrityError`.
    """
    slots: dict[tuple[str, str, int], dict[Version, Measurement]] = {}
    order: list[tuple[str, str, int]] = []
    for m in measurements:
        key = (m.benchmark.canonical, m.invocation_id, m.repeat_index)
        slot = slots.get(key)
        if slot is None:
            slot = {}
            slots[key] = slot
            order.append(key)
        if m.version in slot:
            raise DataIntegrityError(
                f"duplicate measurement for {key} version {m.version.value}"
            )
        slot[m.version] = m

    pairs: list[PairedSample] = []
    unpaired: list[Measurement] = []
    for key in order:
        slot = slots[key]
        if len(slot) == 2:
            m1, m2 = slot[Version.V1], slot[Version.V2]
            if m1.instance_id != m2.instance_id:
                raise DataIntegrityError(
                    f"pair {key} spans instances "
                    f"{m1.instance_id!r} and {m2.instance_id!r}"
                )
            pairs.append(
                PairedSample(
                    benchmark=m1.benchmark,
                    t_v1=m1.ns_per_op,
                    t_v2=m2.ns_per_op,
                    instance_id=m1.instance_id,
                    invocation_id=m1.invocation_id,
                    repeat_index=m1.repeat_index,
                )
            )
        else:
            unpaired.extend(slot.values())
    return pairs, unpaired


# --- JSON codecs -----------------------------------------------------------
#
# Results persist as JSON Lines: a leading {"type": "header"} object carrying
# config and versions, one object per measurement (fixed field names below),
# {"type": "failure"} objects for failed repeat slots, and a trailing
# {"type": "footer"} object with the run timestamps.

def format_rfc3339(dt: datetime) -> str:
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc).isoformat()


def parse_rfc3339(text: str) -> datetime:
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt


def measurement_to_dict(m: Measurement) -> dict[str, Any]:
    return {
        "benchmark": m.benchmark.canonical,
        "version": m.version.value,
        "ns_per_op": m.ns_per_op,
        "iterations": m.iterations,
        "instance_id": m.instance_id,
        "invocation_id": m.invocation_id,
        "cold_start": m.cold_start,
        "repeat_index": m.repeat_index,
        "wall_time": format_rfc3339(m.wall_time),
    }


_MEASUREMENT_KEYS = {
    "benchmark", "version", "ns_per_op", "iterations", "instance_id",
    "invocation_id", "cold_start", "repeat_index", "wall_time",
}


def measurement_from_dict(data: Mapping[str, Any]) -> Measurement:
    missing = _MEASUREMENT_KEYS - set(data)
    if missing:
        raise DataIntegrityError(f"measurement record missing keys: {sorted(missing)}")
    extra = set(data) - _MEASUREMENT_KEYS
    if extra:
        raise DataIntegrityError(f"measurement record has unknown keys: {sorted(extra)}")
    return Measurement(
        benchmark=BenchmarkId.parse(data["benchmark"]),
        version=Version(data["version"]),
        ns_per_op=float(data["ns_per_op"]),
        iterations=int(data["iterations"]),
        instance_id=str(data["instance_id"]),
        invocation_id=str(data["invocation_id"]),
        cold_start=bool(data["cold_start"]),
        wall_time=parse_rfc3339(data["wall_time"]),
        repeat_index=int(data["repeat_index"]),
    )


def failure_to_dict(f: BenchmarkFailure) -> dict[str, Any]:
    return {
        "benchmark": f.benchmark.canonical,
        "invocation_id": f.invocation_id,
        "cause": f.cause.value,
        "repeat_index": f.repeat_index,
        "detail": f.detail,
    }


def failure_from_dict(data: Mapping[str, Any]) -> BenchmarkFailure:
    return BenchmarkFailure(
        benchmark=BenchmarkId.parse(data["benchmark"]),
        invocation_id=str(data["invocation_id"]),
        cause=FailureCause(data["cause"]),
        repeat_index=None if data.get("repeat_index") is None else int(data["repeat_index"]),
        detail=str(data.get("detail", "")),
    )
