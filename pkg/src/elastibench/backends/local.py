"""Local-process backend: a pool of worker instances driving an adapter.

Each worker models one function instance. Its first invocation is a cold
start (the adapter's warm-up hook runs once, its duration is recorded and
its output discarded); afterwards the worker serves invocations one at a
time, running the adapter sequentially for every benchmark, alternating the
two versions per repeat. Idle workers are reused most-recently-used first.
"""

from __future__ import annotations

import random
import shutil
import tempfile
import threading
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Any, Mapping

from ..adapter import AdapterSpec, list_benchmarks, run_benchmark, run_warmup_hook
from ..errors import ConfigError, InvocationError
from ..model import (
    BenchmarkFailure,
    BenchmarkId,
    FailureCause,
    Measurement,
    Version,
)
from ..seeding import derive_seed
from . import Backend, InvocationRequest, InvocationResponse, invocation_id_for_seed


def adapter_spec_from_dict(data: Mapping[str, Any]) -> AdapterSpec:
    known = {"executable", "v1_dir", "v2_dir", "extra_args", "warmup_hook"}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown adapter keys: {sorted(unknown)}")
    for key in ("executable", "v1_dir", "v2_dir"):
        if key not in data:
            raise ConfigError(f"adapter section missing {key!r}")
    return AdapterSpec(
        executable=str(data["executable"]),
        v1_dir=str(data["v1_dir"]),
        v2_dir=str(data["v2_dir"]),
        extra_args=tuple(data.get("extra_args", ())),
        warmup_hook=tuple(data["warmup_hook"]) if data.get("warmup_hook") else None,
    )


@dataclass
class _Worker:
    worker_id: str
    scratch_dir: str
    used: bool = False


class LocalBackend(Backend):
    def __init__(self, adapter: AdapterSpec, max_instances: int = 8):
        if max_instances < 1:
            raise ConfigError("max_instances must be >= 1")
        self.adapter = adapter
        self._max_instances = max_instances
        self._idle: list[_Worker] = []
        self._spawned = 0
        self._cond = threading.Condition()
        self._closed = False

    def discover_benchmarks(self) -> list[BenchmarkId]:
        ids_v1 = {b.canonical for b in list_benchmarks(self.adapter, Version.V1)}
        ids_v2 = {b.canonical for b in list_benchmarks(self.adapter, Version.V2)}
        return [BenchmarkId.parse(name) for name in sorted(ids_v1 & ids_v2)]

    def _borrow(self) -> _Worker:
        with self._cond:
            while True:
                if self._closed:
                    raise InvocationError("backend closed", kind="worker_crash")
                if self._idle:
                    return self._idle.pop()  # most recently returned first
                if self._spawned < self._max_instances:
                    self._spawned += 1
                    worker = _Worker(
                        worker_id=f"local-{self._spawned - 1}",
                        scratch_dir=tempfile.mkdtemp(prefix="elastibench-scratch-"),
                    )
                    return worker
                self._cond.wait()

    def _give_back(self, worker: _Worker) -> None:
        with self._cond:
            self._idle.append(worker)
            self._cond.notify()

    def invoke(self, request: InvocationRequest) -> InvocationResponse:
        worker = self._borrow()
        started = time.monotonic()
        try:
            cold = not worker.used
            if cold:
                run_warmup_hook(self.adapter, worker.scratch_dir)
                worker.used = True
            invocation_id = invocation_id_for_seed(request.request_seed)
            rng = random.Random(derive_seed(request.request_seed, "local-order"))
            bench_order = list(request.benchmarks)
            if request.randomize_benchmark_order:
                rng.shuffle(bench_order)

            measurements: list[Measurement] = []
            failures: list[BenchmarkFailure] = []
            for bench in bench_order:
                failed_cause: FailureCause | None = None
                for repeat in range(request.in_call_repeats):
                    if failed_cause is not None:
                        failures.append(BenchmarkFailure(
                            benchmark=bench, invocation_id=invocation_id,
                            cause=failed_cause, repeat_index=repeat,
                            detail="not run after earlier failure in this invocation",
                        ))
                        continue
                    order = [Version.V1, Version.V2]
                    if request.randomize_version_order and rng.random() < 0.5:
                        order.reverse()
                    for version in order:
                        outcome = run_benchmark(
                            self.adapter, version, bench,
                            request.per_benchmark_timeout_s, worker.scratch_dir,
                        )
                        if not outcome.ok:
                            failures.append(BenchmarkFailure(
                                benchmark=bench, invocation_id=invocation_id,
                                cause=outcome.cause, repeat_index=repeat,
                                detail=outcome.detail,
                            ))
                            failed_cause = outcome.cause
                            break
                        measurements.append(Measurement(
                            benchmark=bench,
                            version=version,
                            ns_per_op=outcome.ns_per_op,
                            iterations=outcome.iterations,
                            instance_id=worker.worker_id,
                            invocation_id=invocation_id,
                            cold_start=cold,
                            wall_time=datetime.now(timezone.utc),
                            repeat_index=repeat,
                        ))
            return InvocationResponse(
                instance_id=worker.worker_id,
                cold_start=cold,
                measurements=tuple(measurements),
                failures=tuple(failures),
                duration_s=time.monotonic() - started,
            )
        except InvocationError:
            raise
        except Exception as exc:
            raise InvocationError(f"worker crashed: {exc}", kind="worker_crash", retryable=True)
        finally:
            self._give_back(worker)

    def close(self) -> None:
        with self._cond:
            self._closed = True
            workers = list(self._idle)
            self._idle.clear()
            self._cond.notify_all()
        for worker in workers:
            shutil.rmtree(worker.scratch_dir, ignore_errors=True)
