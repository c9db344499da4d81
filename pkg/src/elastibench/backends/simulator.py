"""Deterministic simulator of a function platform.

Models the noise sources that make short-lived cloud instances awkward for
benchmarking: a per-instance speed factor (hardware heterogeneity), a slow
sinusoidal time-of-day drift with a configurable peak-to-trough amplitude
(default 15%), per-run log-normal noise, optional cold-start effects, and
bounded instance lifetimes with warm reuse.

A timing sample is::

    ns_per_op = base_ns / memory_speed
                * version_mult            # 1 for v1, 1 + effect_pct/100 for v2
                * instance_factor         # log-normal, fixed at instance birth
                * diurnal(t)              # 1 + amplitude/2 * sin(2*pi*t/period)
                * cold_mult               # first run of a cold invocation only
                * exp(sigma * z)          # sigma^2 = sigma_noise^2 + cv^2

Both versions of a repeat share the same instance and the same virtual
sample time, so instance and diurnal bias cancel exactly in their relative
difference; only the per-run noise term survives.

Parallelism is modelled in virtual time: the platform owns one slot per unit
of configured call parallelism and each arriving invocation starts when the
earliest slot frees up. Because of that the backend asks the orchestrator
for serial dispatch (``dispatch_width() == 1``), which makes the full
measurement stream a pure function of scenario, experiment seed, and request
sequence.
"""

from __future__ import annotations

import heapq
import json
import math
import threading
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from typing import Any, Mapping

import numpy as np

from ..errors import ConfigError
from ..model import (
    BenchmarkFailure,
    BenchmarkId,
    FailureCause,
    Measurement,
    Version,
)
from ..seeding import derive_seed
from . import Backend, InvocationRequest, InvocationResponse, invocation_id_for_seed

VIRTUAL_EPOCH = datetime(2000, 1, 1, tzinfo=timezone.utc)


@dataclass(frozen=True)
class BenchmarkProfile:
    """Ground truth for one simulated benchmark."""

    base_ns: float
    true_effect_pct: float = 0.0
    cv: float = 0.0
    failure: str | None = None  # None | "timeout" | "build_error"

    def __post_init__(self) -> None:
        if self.base_ns <= 0:
            raise ConfigError("base_ns must be positive")
        if self.true_effect_pct <= -100.0:
            raise ConfigError("true_effect_pct must be > -100")
        if self.cv < 0:
            raise ConfigError("cv must be >= 0")
        if self.failure not in (None, "timeout", "build_error"):
            raise ConfigError(f"unknown failure mode {self.failure!r}")


@dataclass(frozen=True)
class PlatformProfile:
    """Platform-wide noise and lifecycle parameters."""

    sigma_instance: float = 0.05
    diurnal_amplitude: float = 0.15
    diurnal_period_s: float = 86_400.0
    sigma_noise: float = 0.02
    cold_penalty_factor: float = 1.0
    cold_latency_s: float = 0.5
    instance_max_lifetime_s: float = 900.0
    virtual_clock_rate: float = 1.0  # virtual seconds per benchmark-version run
    virtual_start_time_s: float = 0.0
    memory_speed_map: Mapping[int, float] = field(
        default_factory=lambda: {1024: 0.2, 2048: 1.0}
    )

    def __post_init__(self) -> None:
        if self.sigma_instance < 0 or self.sigma_noise < 0:
            raise ConfigError("sigmas must be >= 0")
        if not 0.0 <= self.diurnal_amplitude < 1.0:
            raise ConfigError("diurnal_amplitude must lie in [0, 1)")
        if self.diurnal_period_s <= 0 or self.virtual_clock_rate <= 0:
            raise ConfigError("diurnal_period_s and virtual_clock_rate must be positive")
        if self.cold_penalty_factor <= 0:
            raise ConfigError("cold_penalty_factor must be positive")
        if self.cold_latency_s < 0 or self.instance_max_lifetime_s <= 0:
            raise ConfigError("cold_latency_s >= 0 and instance_max_lifetime_s > 0 required")


@dataclass(frozen=True)
class SimulatorScenario:
    benchmarks: Mapping[str, BenchmarkProfile]
    platform: PlatformProfile = PlatformProfile()
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.benchmarks:
            raise ConfigError("scenario needs at least one benchmark")


def diurnal_factor(platform: PlatformProfile, virtual_time_s: float) -> float:
    """Slow multiplicative drift; peak/trough ratio is (1+a/2)/(1-a/2)."""
    a = platform.diurnal_amplitude
    return 1.0 + (a / 2.0) * math.sin(2.0 * math.pi * virtual_time_s / platform.diurnal_period_s)


def memory_speed(platform: PlatformProfile, memory_mb: int) -> float:
    """Relative compute speed for a memory size.

    The platform's memory-to-CPU relation is not linear, so exact sizes come
    from the configured map; unlisted sizes fall back to scaling linearly
    against the 2048 MB baseline.
    """
    if memory_mb in platform.memory_speed_map:
        return platform.memory_speed_map[memory_mb]
    return memory_mb / 2048.0


@dataclass
class _Instance:
    instance_id: str
    birth_vt: float
    factor: float
    idle_since_vt: float


class SimBackend(Backend):
    """Virtual platform serving invocation requests deterministically."""

    def __init__(
        self,
        scenario: SimulatorScenario,
        *,
        run_seed: int,
        virtual_parallelism: int = 150,
        memory_mb: int = 2048,
    ):
        if virtual_parallelism < 1:
            raise ConfigError("virtual_parallelism must be >= 1")
        self.scenario = scenario
        self.memory_mb = memory_mb
        self._ns_scale = 1.0 / memory_speed(scenario.platform, memory_mb)
        self._slots = [0.0] * virtual_parallelism
        heapq.heapify(self._slots)
        self._warm: list[_Instance] = []
        self._instance_count = 0
        self._max_vt = 0.0
        self._lock = threading.Lock()
        self._instance_rng = np.random.default_rng(
            np.random.SeedSequence(derive_seed(scenario.seed, run_seed, "instances"))
        )
        self._run_seed = run_seed

    # The platform state machine is arrival-order dependent, so callers must
    # submit requests in a reproducible sequence.
    def dispatch_width(self, max_parallelism: int) -> int:
        return 1

    def discover_benchmarks(self) -> list[BenchmarkId]:
        return sorted(
            (BenchmarkId.parse(name) for name in self.scenario.benchmarks),
            key=lambda b: b.canonical,
        )

    def now(self) -> datetime:
        with self._lock:
            return self._virtual_datetime(self._max_vt)

    def _virtual_datetime(self, vt: float) -> datetime:
        offset = self.scenario.platform.virtual_start_time_s + vt
        return VIRTUAL_EPOCH + timedelta(seconds=offset)

    def _acquire_instance(self, start_vt: float) -> tuple[_Instance, bool]:
        platform = self.scenario.platform
        self._warm = [
            inst for inst in self._warm
            if start_vt - inst.birth_vt <= platform.instance_max_lifetime_s
        ]
        best_pos = -1
        for pos, inst in enumerate(self._warm):
            if inst.idle_since_vt <= start_vt:
                if best_pos < 0 or inst.idle_since_vt >= self._warm[best_pos].idle_since_vt:
                    best_pos = pos
        if best_pos >= 0:
            return self._warm.pop(best_pos), False
        self._instance_count += 1
        factor = float(np.exp(self._instance_rng.normal(0.0, platform.sigma_instance)))
        inst = _Instance(
            instance_id=f"sim-{self._instance_count:05d}",
            birth_vt=start_vt,
            factor=factor,
            idle_since_vt=start_vt,
        )
        return inst, True

    def invoke(self, request: InvocationRequest) -> InvocationResponse:
        with self._lock:
            return self._invoke_locked(request)

    def _invoke_locked(self, request: InvocationRequest) -> InvocationResponse:
        platform = self.scenario.platform
        profiles = {}
        for bench in request.benchmarks:
            profile = self.scenario.benchmarks.get(bench.canonical)
            if profile is None:
                raise ConfigError(f"benchmark not in scenario: {bench.canonical}")
            profiles[bench.canonical] = profile

        ss = np.random.SeedSequence(
            derive_seed(self.scenario.seed, "request", request.request_seed)
        )
        order_ss, noise_ss = ss.spawn(2)
        order_rng = np.random.default_rng(order_ss)
        noise_rng = np.random.default_rng(noise_ss)

        # Noise draws happen in canonical order (request order, repeat,
        # v1 then v2) so values do not depend on execution shuffling.
        z: dict[tuple[str, int, Version], float] = {}
        for bench in request.benchmarks:
            if profiles[bench.canonical].failure is not None:
                continue
            for repeat in range(request.in_call_repeats):
                for version in (Version.V1, Version.V2):
                    z[(bench.canonical, repeat, version)] = float(noise_rng.standard_normal())

        bench_order = list(request.benchmarks)
        if request.randomize_benchmark_order:
            bench_order = [bench_order[i] for i in order_rng.permutation(len(bench_order))]
        version_orders: list[tuple[Version, ...]] = []
        for _ in range(len(bench_order) * request.in_call_repeats):
            if request.randomize_version_order and int(order_rng.integers(0, 2)) == 1:
                version_orders.append((Version.V2, Version.V1))
            else:
                version_orders.append((Version.V1, Version.V2))

        start_vt = heapq.heappop(self._slots)
        instance, cold = self._acquire_instance(start_vt)
        invocation_id = invocation_id_for_seed(request.request_seed)
        run_dur = platform.virtual_clock_rate
        vt = start_vt + (platform.cold_latency_s if cold else 0.0)

        measurements: list[Measurement] = []
        failures: list[BenchmarkFailure] = []
        run_counter = 0
        slot_idx = 0
        for bench in bench_order:
            profile = profiles[bench.canonical]
            if profile.failure is not None:
                cause = (
                    FailureCause.TIMEOUT
                    if profile.failure == "timeout"
                    else FailureCause.BUILD_OR_RUN_ERROR
                )
                for repeat in range(request.in_call_repeats):
                    if repeat == 0:
                        vt += (
                            request.per_benchmark_timeout_s
                            if profile.failure == "timeout"
                            else 0.5 * run_dur
                        )
                        detail = "simulated " + profile.failure
                    else:
                        detail = "not run after earlier failure in this invocation"
                    failures.append(
                        BenchmarkFailure(
                            benchmark=bench, invocation_id=invocation_id,
                            cause=cause, repeat_index=repeat, detail=detail,
                        )
                    )
                slot_idx += request.in_call_repeats
                continue
            sigma = math.sqrt(platform.sigma_noise**2 + profile.cv**2)
            version_mult = {
                Version.V1: 1.0,
                Version.V2: 1.0 + profile.true_effect_pct / 100.0,
            }
            for repeat in range(request.in_call_repeats):
                pair_vt = vt
                shared = (
                    profile.base_ns
                    * self._ns_scale
                    * instance.factor
                    * diurnal_factor(platform, pair_vt)
                )
                for version in version_orders[slot_idx]:
                    ns = shared * version_mult[version]
                    if sigma > 0.0:
                        ns *= math.exp(sigma * z[(bench.canonical, repeat, version)])
                    if cold and run_counter == 0:
                        ns *= platform.cold_penalty_factor
                    iterations = max(1, round(run_dur * 1e9 / ns))
                    measurements.append(
                        Measurement(
                            benchmark=bench,
                            version=version,
                            ns_per_op=ns,
                            iterations=iterations,
                            instance_id=instance.instance_id,
                            invocation_id=invocation_id,
                            cold_start=cold,
                            wall_time=self._virtual_datetime(pair_vt),
                            repeat_index=repeat,
                        )
                    )
                    run_counter += 1
                    vt += run_dur
                slot_idx += 1

        instance.idle_since_vt = vt
        self._warm.append(instance)
        heapq.heappush(self._slots, vt)
        self._max_vt = max(self._max_vt, vt)
        return InvocationResponse(
            instance_id=instance.instance_id,
            cold_start=cold,
            measurements=tuple(measurements),
            failures=tuple(failures),
            duration_s=vt - start_vt,
        )


def sim_sample(
    scenario: SimulatorScenario,
    benchmark: str,
    version: Version,
    instance_factor: float,
    virtual_time_s: float,
    noise_z: float = 0.0,
    cold_first_run: bool = False,
    memory_mb: int = 2048,
) -> float:
    """One timing sample of the simulator's noise model, without lifecycle.

    Exposed for direct inspection of the model; the backend applies exactly
    this formula per run.
    """
    profile = scenario.benchmarks[benchmark]
    platform = scenario.platform
    mult = 1.0 if version is Version.V1 else 1.0 + profile.true_effect_pct / 100.0
    sigma = math.sqrt(platform.sigma_noise**2 + profile.cv**2)
    ns = (
        profile.base_ns
        / memory_speed(platform, memory_mb)
        * mult
        * instance_factor
        * diurnal_factor(platform, virtual_time_s)
    )
    if sigma > 0.0:
        ns *= math.exp(sigma * noise_z)
    if cold_first_run:
        ns *= platform.cold_penalty_factor
    return ns


# --- scenario JSON ----------------------------------------------------------

_PLATFORM_KEYS = {
    "sigma_instance", "diurnal_amplitude", "diurnal_period_s", "sigma_noise",
    "cold_penalty_factor", "cold_latency_s", "instance_max_lifetime_s",
    "virtual_clock_rate", "virtual_start_time_s", "memory_speed_map",
}
_BENCHMARK_KEYS = {"base_ns", "true_effect_pct", "cv", "failure"}


def scenario_from_dict(data: Mapping[str, Any]) -> SimulatorScenario:
    unknown = set(data) - {"benchmarks", "platform", "seed"}
    if unknown:
        raise ConfigError(f"unknown scenario keys: {sorted(unknown)}")
    if "benchmarks" not in data:
        raise ConfigError("scenario needs a 'benchmarks' section")
    platform_data = dict(data.get("platform", {}))
    unknown = set(platform_data) - _PLATFORM_KEYS
    if unknown:
        raise ConfigError(f"unknown platform keys: {sorted(unknown)}")
    if "memory_speed_map" in platform_data:
        platform_data["memory_speed_map"] = {
            int(k): float(v) for k, v in platform_data["memory_speed_map"].items()
        }
    platform = PlatformProfile(**platform_data)
    benchmarks: dict[str, BenchmarkProfile] = {}
    for name, profile_data in data["benchmarks"].items():
        BenchmarkId.parse(name)
        unknown = set(profile_data) - _BENCHMARK_KEYS
        if unknown:
            raise ConfigError(f"unknown benchmark profile keys for {name}: {sorted(unknown)}")
        benchmarks[name] = BenchmarkProfile(**profile_data)
    return SimulatorScenario(
        benchmarks=benchmarks, platform=platform, seed=int(data.get("seed", 0))
    )


def scenario_to_dict(scenario: SimulatorScenario) -> dict[str, Any]:
    return {
        "benchmarks": {
            name: {
                "base_ns": p.base_ns,
                "true_effect_pct": p.true_effect_pct,
                "cv": p.cv,
                "failure": p.failure,
            }
            for name, p in scenario.benchmarks.items()
        },
        "platform": {
            "sigma_instance": scenario.platform.sigma_instance,
            "diurnal_amplitude": scenario.platform.diurnal_amplitude,
            "diurnal_period_s": scenario.platform.diurnal_period_s,
            "sigma_noise": scenario.platform.sigma_noise,
            "cold_penalty_factor": scenario.platform.cold_penalty_factor,
            "cold_latency_s": scenario.platform.cold_latency_s,
            "instance_max_lifetime_s": scenario.platform.instance_max_lifetime_s,
            "virtual_clock_rate": scenario.platform.virtual_clock_rate,
            "virtual_start_time_s": scenario.platform.virtual_start_time_s,
            "memory_speed_map": {
                str(k): v for k, v in scenario.platform.memory_speed_map.items()
            },
        },
        "seed": scenario.seed,
    }


def load_scenario(path: str) -> SimulatorScenario:
    with open(path, encoding="utf-8") as fh:
        return scenario_from_dict(json.load(fh))
