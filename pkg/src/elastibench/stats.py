"""Statistical analysis of paired benchmark results.

The detection rule: a benchmark shows a performance change when the
bootstrap confidence interval of the median relative difference between the
two versions does not overlap zero. The median is used instead of the mean
because benchmark timings are skewed and outlier-prone; the CI comes from a
percentile bootstrap (resample with replacement, take the median of each
resample, cut the interval from the resample-median distribution).

Benchmarks with fewer samples than ``min_results`` are excluded rather than
classified. A CI endpoint exactly at zero counts as overlapping zero.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ComparisonError, StatsError
from .model import (
    BenchmarkFailure,
    BenchmarkId,
    BenchmarkStats,
    Classification,
    ExclusionReason,
    ExperimentConfig,
    Measurement,
    PairedSample,
    pair_measurements,
)
from .seeding import derive_seed

logger = logging.getLogger(__name__)

MIN_RECOMMENDED_RESAMPLES = 1000


@dataclass(frozen=True)
class BootstrapConfig:
    """Resampling parameters for the percentile CI of the median."""

    resamples: int = 10_000
    ci_level: float = 0.99
    method: str = "percentile"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.resamples < 1:
            raise StatsError("resamples must be >= 1")
        if not 0.0 < self.ci_level < 1.0:
            raise StatsError("ci_level must lie in (0, 1)")
        if self.method != "percentile":
            raise StatsError(f"unsupported bootstrap method {self.method!r}")
        if self.resamples < MIN_RECOMMENDED_RESAMPLES:
            logger.warning(
                "bootstrap resamples %d below recommended minimum %d",
                self.resamples, MIN_RECOMMENDED_RESAMPLES,
            )


def _quantile_index(q: float, count: int) -> int:
    # Inverted-CDF order statistic: smallest value whose empirical CDF >= q.
    return min(count - 1, max(0, math.ceil(q * count) - 1))


def bootstrap_median_ci(
    samples: Sequence[float], cfg: BootstrapConfig
) -> tuple[float, float, float]:
    """Return ``(median, ci_low, ci_high)`` for ``samples``.

    The input is sorted before resampling, so the result depends only on the
    multiset of samples and the seed, never on input order. For even n the
    median is the mean of the two middle values.
    """
    if len(samples) == 0:
        raise StatsError("bootstrap_median_ci needs at least one sample")
    data = np.sort(np.asarray(samples, dtype=float))
    n = data.shape[0]
    median = float(np.median(data))
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    idx = rng.integers(0, n, size=(cfg.resamples, n))
    medians = np.sort(np.median(data[idx], axis=1))
    alpha = (1.0 - cfg.ci_level) / 2.0
    low = float(medians[_quantile_index(alpha, cfg.resamples)])
    high = float(medians[_quantile_index(1.0 - alpha, cfg.resamples)])
    return median, low, high


def _bootstrap_pair_ratio_ci(
    t_v1: Sequence[float], t_v2: Sequence[float], cfg: BootstrapConfig
) -> tuple[float, float, float]:
    """Difference-of-medians estimator: (median(t2) - median(t1)) / median(t1).

    Pairs are resampled jointly so shared per-pair bias still cancels.
    Kept for replication against datasets whose aggregation is unknown; the
    default estimator is the median of pairwise differences.
    """
    if len(t_v1) == 0 or len(t_v1) != len(t_v2):
        raise StatsError("paired ratio CI needs equal, non-empty timing vectors")
    order = np.lexsort((np.asarray(t_v2, dtype=float), np.asarray(t_v1, dtype=float)))
    a1 = np.asarray(t_v1, dtype=float)[order]
    a2 = np.asarray(t_v2, dtype=float)[order]
    n = a1.shape[0]

    def stat(v1: np.ndarray, v2: np.ndarray, axis: int = -1) -> np.ndarray:
        m1 = np.median(v1, axis=axis)
        return (np.median(v2, axis=axis) - m1) / m1 * 100.0

    point = float(stat(a1, a2))
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    idx = rng.integers(0, n, size=(cfg.resamples, n))
    stats = np.sort(stat(a1[idx], a2[idx]))
    alpha = (1.0 - cfg.ci_level) / 2.0
    low = float(stats[_quantile_index(alpha, cfg.resamples)])
    high = float(stats[_quantile_index(1.0 - alpha, cfg.resamples)])
    # The point estimate of this estimator is not guaranteed to sit inside
    # the percentile interval for tiny n; widen to keep the stats invariant.
    return point, min(low, point), max(high, point)


def classify(
    median: float, ci_low: float, ci_high: float, n: int, min_results: int
) -> Classification:
    """Map a CI to a verdict; endpoints exactly at zero mean no change."""
    if ci_low > ci_high:
        raise StatsError(f"malformed CI [{ci_low}, {ci_high}]")
    if n < min_results:
        return Classification.EXCLUDED
    if ci_low <= 0.0 <= ci_high:
        return Classification.NO_CHANGE
    if ci_low > 0.0:
        return Classification.CHANGE_POSITIVE
    return Classification.CHANGE_NEGATIVE


def benchmark_stats_from_pairs(
    benchmark: BenchmarkId,
    pairs: Sequence[PairedSample],
    cfg: BootstrapConfig,
    min_results: int,
    had_failures: bool = False,
    estimator: str = "pairwise",
) -> BenchmarkStats:
    """Reduce one benchmark's pairs to a classified summary row."""
    n = len(pairs)
    if n < min_results:
        reason = (
            ExclusionReason.ALL_RUNS_FAILED
            if n == 0 and had_failures
            else ExclusionReason.TOO_FEW_RESULTS
        )
        return BenchmarkStats(
            benchmark=benchmark, n=n, median_diff_pct=None, ci_low_pct=None,
            ci_high_pct=None, classification=Classification.EXCLUDED,
            exclusion_reason=reason,
        )
    if estimator == "pairwise":
        diffs = [p.rel_diff_pct for p in pairs]
        median, low, high = bootstrap_median_ci(diffs, cfg)
    elif estimator == "difference_of_medians":
        median, low, high = _bootstrap_pair_ratio_ci(
            [p.t_v1 for p in pairs], [p.t_v2 for p in pairs], cfg
        )
    else:
        raise StatsError(f"unknown estimator {estimator!r}")
    return BenchmarkStats(
        benchmark=benchmark, n=n, median_diff_pct=median,
        ci_low_pct=low, ci_high_pct=high,
        classification=classify(median, low, high, n, min_results),
    )


def analyze_experiment(
    measurements: Iterable[Measurement],
    failures: Iterable[BenchmarkFailure],
    config: ExperimentConfig,
) -> tuple[list[BenchmarkStats], list[Measurement]]:
    """Pair the raw measurements and compute per-benchmark stats.

    Returns ``(stats, unpaired)``. Bootstrap seeds derive from the experiment
    seed and the benchmark id, so per-benchmark analysis is reproducible and
    order-independent. Benchmarks that only ever failed still get a row
    (excluded, all runs failed).
    """
    pairs, unpaired = pair_measurements(measurements)
    by_benchmark: dict[str, list[PairedSample]] = {}
    for p in pairs:
        by_benchmark.setdefault(p.benchmark.canonical, []).append(p)
    failed: set[str] = set()
    name_to_id: dict[str, BenchmarkId] = {}
    for f in failures:
        failed.add(f.benchmark.canonical)
        name_to_id.setdefault(f.benchmark.canonical, f.benchmark)
    for p in pairs:
        name_to_id.setdefault(p.benchmark.canonical, p.benchmark)

    stats: list[BenchmarkStats] = []
    for name in sorted(name_to_id):
        # Seeded per (benchmark, sample count): reproducible, order-independent,
        # and identical to a full-length prefix CI in the repeats study.
        cfg = BootstrapConfig(
            resamples=config.bootstrap_resamples,
            ci_level=config.ci_level,
            seed=derive_seed(config.seed, "bootstrap", name, len(by_benchmark.get(name, []))),
        )
        stats.append(
            benchmark_stats_from_pairs(
                name_to_id[name],
                by_benchmark.get(name, []),
                cfg,
                config.min_results,
                had_failures=name in failed,
                estimator=config.median_estimator,
            )
        )
    return stats, unpaired


# --- cross-experiment comparison -------------------------------------------

class ComparisonVerdict(Enum):
    AGREE_CHANGE = "agree_change"
    AGREE_NO_CHANGE = "agree_no_change"
    DISAGREE_DIRECTION = "disagree_direction"
    DISAGREE_DETECTION = "disagree_detection"


@dataclass(frozen=True)
class ComparisonReport:
    """Agreement and coverage between two analyzed experiments.

    Two experiments agree on a benchmark when both detect a change in the
    same direction or both detect no change. Coverage measures how close the
    magnitudes are: the fraction of change-detecting benchmarks whose median
    (one side, or both for two-sided) lies inside the other experiment's CI.
    A median exactly on a CI endpoint counts as inside. Coverage values are
    ``None`` when no benchmark qualifies for the denominator.
    """

    verdicts: Mapping[str, ComparisonVerdict]
    agreement_fraction: float
    one_sided_coverage_ab: float | None
    one_sided_coverage_ba: float | None
    two_sided_coverage: float | None
    possible_changes: tuple[tuple[str, float], ...]
    compared_n: int


def _inside(value: float, low: float, high: float) -> bool:
    return low <= value <= high


def compare_experiments(
    stats_a: Sequence[BenchmarkStats], stats_b: Sequence[BenchmarkStats]
) -> ComparisonReport:
    """Compare per-benchmark verdicts of two experiments.

    Only benchmarks present and non-excluded in both experiments are
    compared; raising :class:`ComparisonError` when none are shared.
    ``possible_changes`` lists benchmarks detected by exactly one experiment
    together with the detecting experiment's absolute median difference.
    """
    a_by = {s.benchmark.canonical: s for s in stats_a}
    b_by = {s.benchmark.canonical: s for s in stats_b}
    shared = [
        name
        for name in sorted(set(a_by) & set(b_by))
        if a_by[name].classification is not Classification.EXCLUDED
        and b_by[name].classification is not Classification.EXCLUDED
    ]
    if not shared:
        raise ComparisonError("experiments share no comparable benchmarks")

    verdicts: dict[str, ComparisonVerdict] = {}
    possible: list[tuple[str, float]] = []
    for name in shared:
        a, b = a_by[name], b_by[name]
        if a.is_change and b.is_change:
            verdicts[name] = (
                ComparisonVerdict.AGREE_CHANGE
                if a.classification is b.classification
                else ComparisonVerdict.DISAGREE_DIRECTION
            )
        elif not a.is_change and not b.is_change:
            verdicts[name] = ComparisonVerdict.AGREE_NO_CHANGE
        else:
            verdicts[name] = ComparisonVerdict.DISAGREE_DETECTION
            detector = a if a.is_change else b
            possible.append((name, abs(detector.median_diff_pct)))

    agree = sum(
        1
        for v in verdicts.values()
        if v in (ComparisonVerdict.AGREE_CHANGE, ComparisonVerdict.AGREE_NO_CHANGE)
    )

    def one_sided(src: dict[str, BenchmarkStats], dst: dict[str, BenchmarkStats]) -> float | None:
        # Fraction of benchmarks, among those where the CI-owning experiment
        # (dst) detects a change, whose src median falls inside dst's CI.
        eligible = [name for name in shared if dst[name].is_change]
        if not eligible:
            return None
        covered = sum(
            1
            for name in eligible
            if _inside(src[name].median_diff_pct, dst[name].ci_low_pct, dst[name].ci_high_pct)
        )
        return covered / len(eligible)

    both_change = [name for name in shared if a_by[name].is_change and b_by[name].is_change]
    two_sided: float | None = None
    if both_change:
        covered = sum(
            1
            for name in both_change
            if _inside(a_by[name].median_diff_pct, b_by[name].ci_low_pct, b_by[name].ci_high_pct)
            and _inside(b_by[name].median_diff_pct, a_by[name].ci_low_pct, a_by[name].ci_high_pct)
        )
        two_sided = covered / len(both_change)

    return ComparisonReport(
        verdicts=verdicts,
        agreement_fraction=agree / len(shared),
        one_sided_coverage_ab=one_sided(a_by, b_by),
        one_sided_coverage_ba=one_sided(b_by, a_by),
        two_sided_coverage=two_sided,
        possible_changes=tuple(possible),
        compared_n=len(shared),
    )


# --- repeats needed to reach a reference CI size ---------------------------

# Reference CIs usually arrive through report files that carry four decimal
# places, so sizes are compared at that precision.
SIZE_COMPARISON_EPS = 1e-4


def first_k_reaching(
    sizes_by_k: Iterable[tuple[int, float]], reference_size: float
) -> int | None:
    """First prefix step whose CI size is at most the reference size."""
    for k, size in sizes_by_k:
        if size <= reference_size:
            return k
    return None


@dataclass(frozen=True)
class RepeatsBenchmark:
    benchmark: str
    reference_ci_size: float
    minimal_k: int | None  # smallest evaluated prefix length reaching the size


@dataclass(frozen=True)
class RepeatsCurve:
    """For growing prefixes of results, how often the CI is already as tight
    as a reference experiment's CI.

    Only benchmarks whose full-data CI overlaps the reference CI take part;
    ``curve`` maps each evaluated prefix length k to the fraction of eligible
    benchmarks whose CI size dropped to at most the reference size by k. The
    fraction is non-decreasing in k by construction.
    """

    per_benchmark: tuple[RepeatsBenchmark, ...]
    curve: tuple[tuple[int, float], ...]
    eligible_n: int
    skipped: tuple[tuple[str, str], ...]  # (benchmark, why)


def repeats_for_ci_size(
    samples_by_benchmark: Mapping[str, Sequence[float]],
    reference: Mapping[str, BenchmarkStats],
    cfg: BootstrapConfig,
    base_seed: int,
    ks: Sequence[int] | None = None,
) -> RepeatsCurve:
    """Compute the repeats-versus-CI-size curve against a reference dataset.

    ``samples_by_benchmark`` holds each benchmark's relative differences in
    ingestion order (planned call order, not completion order, so the study
    is reproducible). Prefix CIs use seeds derived per (benchmark, k).
    """
    skipped: list[tuple[str, str]] = []
    per: list[RepeatsBenchmark] = []
    max_k = 0
    eligible_names: list[str] = []

    for name in sorted(samples_by_benchmark):
        samples = list(samples_by_benchmark[name])
        ref = reference.get(name)
        if ref is None or ref.classification is Classification.EXCLUDED:
            skipped.append((name, "missing from reference"))
            continue
        if len(samples) < ref.n:
            skipped.append((name, "fewer results than reference"))
            continue
        ref_size = ref.ci_size
        full_cfg = BootstrapConfig(
            resamples=cfg.resamples, ci_level=cfg.ci_level,
            seed=derive_seed(base_seed, "bootstrap", name, len(samples)),
        )
        _, full_low, full_high = bootstrap_median_ci(samples, full_cfg)
        if full_high < ref.ci_low_pct or full_low > ref.ci_high_pct:
            skipped.append((name, "final CI disjoint from reference CI"))
            continue
        eligible_names.append(name)
        max_k = max(max_k, len(samples))
        per.append(RepeatsBenchmark(name, ref_size, None))

    if ks is None:
        ks = list(range(1, max_k + 1)) if max_k else []
    ks = sorted(k for k in ks if k >= 1)

    resolved: list[RepeatsBenchmark] = []
    for entry in per:
        samples = list(samples_by_benchmark[entry.benchmark])

        def prefix_sizes(name: str = entry.benchmark) -> Iterable[tuple[int, float]]:
            for k in ks:
                if k > len(samples):
                    return
                prefix_cfg = BootstrapConfig(
                    resamples=cfg.resamples, ci_level=cfg.ci_level,
                    seed=derive_seed(base_seed, "bootstrap", name, k),
                )
                _, low, high = bootstrap_median_ci(samples[:k], prefix_cfg)
                yield k, high - low

        minimal = first_k_reaching(
            prefix_sizes(), entry.reference_ci_size + SIZE_COMPARISON_EPS
        )
        resolved.append(RepeatsBenchmark(entry.benchmark, entry.reference_ci_size, minimal))

    eligible_n = len(resolved)
    curve: list[tuple[int, float]] = []
    for k in ks:
        achieved = sum(1 for r in resolved if r.minimal_k is not None and r.minimal_k <= k)
        curve.append((k, achieved / eligible_n if eligible_n else 0.0))

    return RepeatsCurve(
        per_benchmark=tuple(resolved),
        curve=tuple(curve),
        eligible_n=eligible_n,
        skipped=tuple(skipped),
    )
