"""Function-invocation backends.

A backend accepts an :class:`InvocationRequest` (which benchmarks to run,
how many in-call repeats, ordering flags, a per-benchmark timeout, and a
request seed that drives all request-local randomness) and answers with an
:class:`InvocationResponse` carrying the measurements taken on whichever
instance served the call.

Three implementations ship here: a deterministic platform simulator
(:mod:`.simulator`), a pool of local worker instances driving a benchmark
adapter (:mod:`.local`), and an HTTP client speaking the JSON wire protocol
(:mod:`.http`).
"""

from __future__ import annotations

import abc
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from typing import Any, Mapping

from ..errors import ConfigError, InvocationError
from ..model import (
    BenchmarkFailure,
    BenchmarkId,
    Measurement,
    failure_from_dict,
    failure_to_dict,
    measurement_from_dict,
    measurement_to_dict,
)
from ..seeding import derive_seed

MAX_INVOCATION_RETRIES = 2


@dataclass(frozen=True)
class InvocationRequest:
    """Parameters of one function call."""

    benchmarks: tuple[BenchmarkId, ...]
    in_call_repeats: int
    randomize_version_order: bool
    randomize_benchmark_order: bool
    per_benchmark_timeout_s: float
    request_seed: int

    def __post_init__(self) -> None:
        if not self.benchmarks:
            raise ConfigError("invocation request needs at least one benchmark")
        if self.in_call_repeats < 1:
            raise ConfigError("in_call_repeats must be >= 1")
        if self.per_benchmark_timeout_s <= 0:
            raise ConfigError("per_benchmark_timeout_s must be positive")
        if not 0 <= self.request_seed < 2**64:
            raise ConfigError("request_seed must be a 64-bit unsigned integer")


@dataclass(frozen=True)
class InvocationResponse:
    instance_id: str
    cold_start: bool
    measurements: tuple[Measurement, ...]
    failures: tuple[BenchmarkFailure, ...]
    duration_s: float


class Backend(abc.ABC):
    """One invocation target. Implementations must tolerate concurrent calls."""

    @abc.abstractmethod
    def invoke(self, request: InvocationRequest) -> InvocationResponse:
        ...

    def dispatch_width(self, max_parallelism: int) -> int:
        """How many concurrent invoke() calls the orchestrator should issue.

        Backends that model parallelism internally (the simulator) return 1
        so the call sequence stays reproducible.
        """
        return max_parallelism

    def discover_benchmarks(self) -> list[BenchmarkId] | None:
        """Benchmark ids this backend can enumerate, or None if it cannot."""
        return None

    def now(self) -> datetime:
        return datetime.now(timezone.utc)

    def close(self) -> None:
        pass


def invocation_id_for_seed(request_seed: int) -> str:
    return f"inv-{request_seed:016x}"


def invoke_with_retry(
    backend: Backend,
    request: InvocationRequest,
    max_retries: int = MAX_INVOCATION_RETRIES,
) -> InvocationResponse:
    """Invoke, retrying retryable failures with a freshly derived seed.

    Each retry gets a new request seed (and therefore a new invocation id),
    so a retried call can never collide with measurements of the failed
    attempt.
    """
    attempt = 0
    current = request
    while True:
        try:
            return backend.invoke(current)
        except InvocationError as exc:
            if not exc.retryable or attempt >= max_retries:
                raise
            attempt += 1
            current = replace(
                current,
                request_seed=derive_seed(request.request_seed, "retry", attempt),
            )


# --- wire protocol ----------------------------------------------------------
#
# POST /invoke
#   {"benchmarks": [...], "in_call_repeats": n, "randomize_version_order": b,
#    "randomize_benchmark_order": b, "timeout_s": x, "request_seed": u64}
# ->
#   {"instance_id": s, "cold_start": b, "duration_s": x,
#    "measurements": [{...measurement fields...}], "failures": [...]}

def request_to_wire(request: InvocationRequest) -> dict[str, Any]:
    return {
        "benchmarks": [b.canonical for b in request.benchmarks],
        "in_call_repeats": request.in_call_repeats,
        "randomize_version_order": request.randomize_version_order,
        "randomize_benchmark_order": request.randomize_benchmark_order,
        "timeout_s": request.per_benchmark_timeout_s,
        "request_seed": request.request_seed,
    }


def request_from_wire(data: Mapping[str, Any]) -> InvocationRequest:
    try:
        return InvocationRequest(
            benchmarks=tuple(BenchmarkId.parse(b) for b in data["benchmarks"]),
            in_call_repeats=int(data["in_call_repeats"]),
            randomize_version_order=bool(data["randomize_version_order"]),
            randomize_benchmark_order=bool(data["randomize_benchmark_order"]),
            per_benchmark_timeout_s=float(data["timeout_s"]),
            request_seed=int(data["request_seed"]),
        )
    except KeyError as exc:
        raise InvocationError(f"request body missing key {exc}", kind="protocol")


def response_to_wire(response: InvocationResponse) -> dict[str, Any]:
    return {
        "instance_id": response.instance_id,
        "cold_start": response.cold_start,
        "duration_s": response.duration_s,
        "measurements": [measurement_to_dict(m) for m in response.measurements],
        "failures": [failure_to_dict(f) for f in response.failures],
    }


def response_from_wire(data: Mapping[str, Any]) -> InvocationResponse:
    for key in ("instance_id", "cold_start", "duration_s", "measurements", "failures"):
        if key not in data:
            raise InvocationError(f"response body missing key {key!r}", kind="protocol")
    try:
        return InvocationResponse(
            instance_id=str(data["instance_id"]),
            cold_start=bool(data["cold_start"]),
            measurements=tuple(measurement_from_dict(m) for m in data["measurements"]),
            failures=tuple(failure_from_dict(f) for f in data["failures"]),
            duration_s=float(data["duration_s"]),
        )
    except InvocationError:
        raise
    except Exception as exc:
        raise InvocationError(f"malformed response body: {exc}", kind="protocol")


def create_backend(
    backend_config: Mapping[str, Any],
    *,
    run_seed: int,
    max_parallelism: int,
    memory_mb: int,
    per_benchmark_timeout_s: float,
    in_call_repeats: int,
) -> Backend:
    """Instantiate the backend described by an experiment's backend settings."""
    from . import http as http_backend
    from . import local as local_backend
    from . import simulator as sim_backend

    cfg = dict(backend_config)
    kind = cfg.pop("type", None)
    if kind == "sim":
        scenario_data = cfg.pop("scenario", None)
        scenario_path = cfg.pop("scenario_path", None)
        if cfg:
            raise ConfigError(f"unknown sim backend keys: {sorted(cfg)}")
        if (scenario_data is None) == (scenario_path is None):
            raise ConfigError("sim backend needs exactly one of scenario/scenario_path")
        if scenario_path is not None:
            scenario = sim_backend.load_scenario(scenario_path)
        else:
            scenario = sim_backend.scenario_from_dict(scenario_data)
        return sim_backend.SimBackend(
            scenario,
            run_seed=run_seed,
            virtual_parallelism=max_parallelism,
            memory_mb=memory_mb,
        )
    if kind == "local":
        adapter_cfg = cfg.pop("adapter", None)
        if cfg:
            raise ConfigError(f"unknown local backend keys: {sorted(cfg)}")
        if adapter_cfg is None:
            raise ConfigError("local backend needs an 'adapter' section")
        spec = local_backend.adapter_spec_from_dict(adapter_cfg)
        spec.validate()
        return local_backend.LocalBackend(spec, max_instances=max_parallelism)
    if kind == "http":
        endpoint = cfg.pop("endpoint", None)
        if cfg:
            raise ConfigError(f"unknown http backend keys: {sorted(cfg)}")
        return http_backend.HttpBackend(
            endpoint=endpoint,
            per_benchmark_timeout_s=per_benchmark_timeout_s,
            in_call_repeats=in_call_repeats,
        )
    raise ConfigError(f"unknown backend type {kind!r}")
