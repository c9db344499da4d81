"""Planning and execution of a benchmark suite run.

A plan expands (benchmarks x call repeats) into individual invocations, by
default one benchmark per call, so the platform's own scheduling spreads the
repeats of each benchmark over many instances. With call-order
randomization enabled the invocation sequence is a seeded permutation of all
units (randomized interleaved trials); otherwise the units are round-robin
interleaved.

Execution keeps at most ``max_parallelism`` invocations in flight and
collects results in plan order, so the result stream (and every derived
artifact) is reproducible whenever the backend itself is deterministic.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from concurrent.futures import TimeoutError as FutureTimeoutError
from dataclasses import dataclass
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from .backends import (
    Backend,
    InvocationRequest,
    InvocationResponse,
    invocation_id_for_seed,
    invoke_with_retry,
)
from .errors import ExperimentAborted, InvocationError, PlanError
from .model import (
    BenchmarkFailure,
    BenchmarkId,
    ExperimentConfig,
    ExperimentResult,
    FailureCause,
    VersionPair,
)
from .seeding import derive_seed
from .stats import analyze_experiment

logger = logging.getLogger(__name__)

ABANDON_FACTOR = 3.0
ABORT_PROBE_MIN = 10

ProgressCallback = Callable[[dict[str, Any]], None]


@dataclass(frozen=True)
class PlanEntry:
    index: int
    benchmarks: tuple[BenchmarkId, ...]
    call_index: int
    request_seed: int


@dataclass(frozen=True)
class ExecutionPlan:
    entries: tuple[PlanEntry, ...]
    target_results_per_benchmark: int

    @property
    def total_invocations(self) -> int:
        return len(self.entries)


def build_plan(config: ExperimentConfig, benchmarks: Sequence[BenchmarkId]) -> ExecutionPlan:
    """Expand a configuration into a deterministic invocation sequence."""
    if not benchmarks:
        raise PlanError("cannot plan an experiment without benchmarks")
    ordered = sorted(benchmarks, key=lambda b: b.canonical)
    if len({b.canonical for b in ordered}) != len(ordered):
        raise PlanError("duplicate benchmark ids in plan input")

    group_size = config.benchmarks_per_call
    groups = [
        tuple(ordered[i:i + group_size]) for i in range(0, len(ordered), group_size)
    ]
    units = [
        (group, call_index)
        for call_index in range(config.call_repeats)
        for group in groups
    ]
    if config.randomize_call_order:
        rng = np.random.default_rng(
            np.random.SeedSequence(derive_seed(config.seed, "call-order"))
        )
        units = [units[i] for i in rng.permutation(len(units))]

    entries = []
    for index, (group, call_index) in enumerate(units):
        label = "+".join(b.canonical for b in group)
        entries.append(
            PlanEntry(
                index=index,
                benchmarks=group,
                call_index=call_index,
                request_seed=derive_seed(config.seed, "request", label, call_index),
            )
        )
    return ExecutionPlan(
        entries=tuple(entries),
        target_results_per_benchmark=config.target_results_per_benchmark,
    )


def request_for_entry(config: ExperimentConfig, entry: PlanEntry) -> InvocationRequest:
    return InvocationRequest(
        benchmarks=entry.benchmarks,
        in_call_repeats=config.in_call_repeats,
        randomize_version_order=config.randomize_version_order,
        # In-call benchmark order only matters for multi-benchmark calls and
        # follows the same knob as call-order randomization.
        randomize_benchmark_order=config.randomize_call_order,
        per_benchmark_timeout_s=config.per_benchmark_timeout_s,
        request_seed=entry.request_seed,
    )


def _expected_invocation_s(config: ExperimentConfig, entry: PlanEntry) -> float:
    if config.expected_invocation_s is not None:
        return config.expected_invocation_s
    # Worst case: every run of the invocation uses its full timeout.
    runs = len(entry.benchmarks) * config.in_call_repeats * 2
    return runs * config.per_benchmark_timeout_s + 10.0


def _entry_failures(
    entry: PlanEntry, config: ExperimentConfig, cause: FailureCause, detail: str
) -> list[BenchmarkFailure]:
    invocation_id = invocation_id_for_seed(entry.request_seed)
    return [
        BenchmarkFailure(
            benchmark=bench, invocation_id=invocation_id,
            cause=cause, repeat_index=repeat, detail=detail,
        )
        for bench in entry.benchmarks
        for repeat in range(config.in_call_repeats)
    ]


def execute(
    plan: ExecutionPlan,
    backend: Backend,
    config: ExperimentConfig,
    versions: VersionPair,
    *,
    on_invocation: Callable[[PlanEntry, InvocationResponse | None, list[BenchmarkFailure]], None] | None = None,
    progress: ProgressCallback | None = None,
) -> ExperimentResult:
    """Run the plan against a backend and assemble the experiment result.

    Invocations are submitted through a sliding window sized to the lesser
    of the configured parallelism and the backend's preferred dispatch
    width; results are consumed in plan order. ``on_invocation`` fires once
    per collected invocation (for streaming persistence), ``progress`` gets
    one event dict per invocation.

    Raises :class:`ExperimentAborted` (with the partial result attached)
    when the backend never produces a single successful response within the
    initial probe window, or when every invocation errored.
    """
    started_at = backend.now()
    width = max(1, min(config.max_parallelism, backend.dispatch_width(config.max_parallelism)))
    total = plan.total_invocations

    measurements = []
    failures: list[BenchmarkFailure] = []
    successes = 0
    invocation_errors = 0

    def task(entry: PlanEntry) -> InvocationResponse:
        return invoke_with_retry(backend, request_for_entry(config, entry))

    def collect(entry: PlanEntry, response: InvocationResponse | None,
                extra_failures: list[BenchmarkFailure]) -> None:
        if response is not None:
            measurements.extend(response.measurements)
            failures.extend(response.failures)
        failures.extend(extra_failures)
        if on_invocation is not None:
            on_invocation(entry, response, extra_failures)
        if progress is not None:
            progress({
                "event": "invocation",
                "index": entry.index,
                "benchmarks": [b.canonical for b in entry.benchmarks],
                "call_index": entry.call_index,
                "ok": response is not None,
                "measurements": len(response.measurements) if response else 0,
                "failures": len(response.failures) if response else len(extra_failures),
                "completed": entry.index + 1,
                "total": total,
            })

    def finish() -> ExperimentResult:
        stats, unpaired = analyze_experiment(measurements, failures, config)
        if unpaired:
            logger.warning("%d measurements had no counterpart and were excluded "
                           "from statistics", len(unpaired))
        return ExperimentResult(
            config=config, versions=versions, measurements=list(measurements),
            stats=stats, started_at=started_at, finished_at=backend.now(),
            failures=list(failures),
        )

    abort_probe = max(ABORT_PROBE_MIN, width)
    with ThreadPoolExecutor(max_workers=width) as pool:
        pending = {}
        submitted = 0
        for submitted in range(min(width, total)):
            pending[submitted] = pool.submit(task, plan.entries[submitted])
        submitted = min(width, total)

        for index in range(total):
            entry = plan.entries[index]
            future = pending.pop(index)
            deadline = ABANDON_FACTOR * _expected_invocation_s(config, entry)
            response: InvocationResponse | None = None
            extra: list[BenchmarkFailure] = []
            try:
                response = future.result(timeout=deadline)
                successes += 1
            except FutureTimeoutError:
                future.cancel()
                extra = _entry_failures(
                    entry, config, FailureCause.ABANDONED,
                    f"invocation abandoned after {deadline:.1f}s "
                    f"({ABANDON_FACTOR:.0f}x expected duration)",
                )
                invocation_errors += 1
            except InvocationError as exc:
                extra = _entry_failures(
                    entry, config, FailureCause.INVOCATION_ERROR,
                    f"{exc.kind}: {exc}",
                )
                invocation_errors += 1
            collect(entry, response, extra)
            if submitted < total:
                pending[submitted] = pool.submit(task, plan.entries[submitted])
                submitted += 1
            if successes == 0 and invocation_errors >= min(total, abort_probe):
                for fut in pending.values():
                    fut.cancel()
                raise ExperimentAborted(
                    f"backend unavailable: first {invocation_errors} invocations failed",
                    partial=finish(),
                )

    if successes == 0 and invocation_errors > 0:
        raise ExperimentAborted(
            "backend unavailable: every invocation failed", partial=finish()
        )
    return finish()


@dataclass(frozen=True)
class Pricing:
    """Per-GB-second and per-request prices for the cost model."""

    price_per_gb_s: float = 1.66667e-5
    price_per_request: float = 2e-7


def estimate_cost(
    total_invocations: int,
    pricing: Pricing,
    expected_invocation_s: float,
    memory_mb: int,
) -> float:
    """Estimated run cost under standard GB-second billing.

    Higher parallelism shortens the run without changing this total, which
    is why fanning out is cheap: billing follows invocation-seconds, not
    wall-clock time.
    """
    gb_seconds = total_invocations * expected_invocation_s * (memory_mb / 1024.0)
    return gb_seconds * pricing.price_per_gb_s + total_invocations * pricing.price_per_request


# --- plan audit file --------------------------------------------------------

def plan_to_dict(plan: ExecutionPlan) -> dict[str, Any]:
    return {
        "total_invocations": plan.total_invocations,
        "target_results_per_benchmark": plan.target_results_per_benchmark,
        "entries": [
            {
                "index": e.index,
                "benchmarks": [b.canonical for b in e.benchmarks],
                "call_index": e.call_index,
                "request_seed": e.request_seed,
            }
            for e in plan.entries
        ],
    }


def write_plan(plan: ExecutionPlan, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(plan_to_dict(plan), fh, indent=2)
        fh.write("\n")


def plan_from_dict(data: Mapping[str, Any]) -> ExecutionPlan:
    entries = tuple(
        PlanEntry(
            index=int(e["index"]),
            benchmarks=tuple(BenchmarkId.parse(b) for b in e["benchmarks"]),
            call_index=int(e["call_index"]),
            request_seed=int(e["request_seed"]),
        )
        for e in data["entries"]
    )
    return ExecutionPlan(
        entries=entries,
        target_results_per_benchmark=int(data["target_results_per_benchmark"]),
    )
