"""Benchmark adapter contract and subprocess driver.

An adapter is an executable that bridges one benchmark harness (Go test,
cargo-bench, JMH, ...) to this tool. It must understand two commands:

    <executable> [extra args] list --dir <version_dir>
    <executable> [extra args] run --dir <version_dir> --bench <id> --timeout-s <n>

``list`` prints one benchmark id per line. ``run`` prints exactly one result
line, tab-separated::

    <benchmark_id>\t<iterations>\t<ns_per_op>

Any other output line must start with ``#`` and is ignored. Adapters receive
``ELASTIBENCH_SCRATCH_DIR`` (a guaranteed-writable directory, since the
instance filesystem may otherwise be read-only) and ``ELASTIBENCH_VERSION``
("v1"/"v2") in their environment.
"""

from __future__ import annotations

import os
import subprocess
import tempfile
import time
from contextlib import ExitStack
from dataclasses import dataclass
from pathlib import Path

from .errors import AdapterError, ConfigError
from .model import BenchmarkId, FailureCause, Version

SCRATCH_ENV = "ELASTIBENCH_SCRATCH_DIR"
VERSION_ENV = "ELASTIBENCH_VERSION"

KILL_GRACE_S = 1.0


@dataclass(frozen=True)
class AdapterSpec:
    """Where the adapter lives and which two source trees it compares."""

    executable: str
    v1_dir: str
    v2_dir: str
    extra_args: tuple[str, ...] = ()
    warmup_hook: tuple[str, ...] | None = None

    def validate(self) -> None:
        if not Path(self.executable).exists():
            raise ConfigError(f"adapter executable not found: {self.executable}")
        for name, d in (("v1_dir", self.v1_dir), ("v2_dir", self.v2_dir)):
            if not Path(d).is_dir():
                raise ConfigError(f"{name} is not a directory: {d}")
        if Path(self.v1_dir).resolve() == Path(self.v2_dir).resolve():
            raise ConfigError("v1_dir and v2_dir must be distinct paths")

    def version_dir(self, version: Version) -> str:
        return self.v1_dir if version is Version.V1 else self.v2_dir


@dataclass(frozen=True)
class AdapterRunResult:
    """Outcome of one benchmark-version run: a timing or a failure cause."""

    ok: bool
    ns_per_op: float | None
    iterations: int | None
    cause: FailureCause | None
    detail: str
    duration_s: float


def _adapter_env(spec: AdapterSpec, version: Version, scratch_dir: str) -> dict[str, str]:
    env = dict(os.environ)
    env[SCRATCH_ENV] = scratch_dir
    env[VERSION_ENV] = version.value
    return env


def _data_lines(output: str) -> list[str]:
    return [
        line.strip()
        for line in output.splitlines()
        if line.strip() and not line.lstrip().startswith("#")
    ]


def list_benchmarks(
    spec: AdapterSpec, version: Version, scratch_dir: str | None = None
) -> list[BenchmarkId]:
    """Discover the benchmark ids in one version tree, sorted lexicographically."""
    if not Path(spec.executable).exists():
        raise AdapterError(f"adapter executable not found: {spec.executable}")
    cmd = [spec.executable, *spec.extra_args, "list", "--dir", spec.version_dir(version)]
    with ExitStack() as stack:
        if scratch_dir is None:
            scratch_dir = stack.enter_context(
                tempfile.TemporaryDirectory(prefix="elastibench-list-")
            )
        proc = subprocess.run(
            cmd,
            capture_output=True,
            text=True,
            env=_adapter_env(spec, version, scratch_dir),
        )
    if proc.returncode != 0:
        raise AdapterError(
            f"adapter list exited with {proc.returncode}",
            output=proc.stdout + proc.stderr,
        )
    ids = []
    for line in _data_lines(proc.stdout):
        if "\t" in line or " " in line:
            raise AdapterError(f"malformed benchmark id line: {line!r}", output=proc.stdout)
        ids.append(BenchmarkId.parse(line))
    seen = set()
    for bid in ids:
        if bid.canonical in seen:
            raise AdapterError(f"duplicate benchmark id: {bid.canonical}", output=proc.stdout)
        seen.add(bid.canonical)
    return sorted(ids, key=lambda b: b.canonical)


def run_benchmark(
    spec: AdapterSpec,
    version: Version,
    benchmark: BenchmarkId,
    timeout_s: float,
    scratch_dir: str,
) -> AdapterRunResult:
    """Run one benchmark in one version tree, bounded by ``timeout_s``.

    Never blocks longer than ``timeout_s`` plus a fixed one-second kill
    grace: on timeout the process is terminated, then killed.
    """
    cmd = [
        spec.executable, *spec.extra_args,
        "run", "--dir", spec.version_dir(version),
        "--bench", benchmark.canonical,
        "--timeout-s", str(timeout_s),
    ]
    started = time.monotonic()
    try:
        proc = subprocess.Popen(
            cmd,
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
            text=True,
            env=_adapter_env(spec, version, scratch_dir),
        )
    except OSError as exc:
        return AdapterRunResult(
            ok=False, ns_per_op=None, iterations=None,
            cause=FailureCause.BUILD_OR_RUN_ERROR,
            detail=f"failed to start adapter: {exc}",
            duration_s=time.monotonic() - started,
        )
    try:
        stdout, stderr = proc.communicate(timeout=timeout_s)
    except subprocess.TimeoutExpired:
        proc.terminate()
        try:
            proc.wait(timeout=KILL_GRACE_S)
        except subprocess.TimeoutExpired:
            proc.kill()
            proc.wait()
        return AdapterRunResult(
            ok=False, ns_per_op=None, iterations=None,
            cause=FailureCause.TIMEOUT,
            detail=f"run exceeded {timeout_s}s and was interrupted",
            duration_s=time.monotonic() - started,
        )
    duration = time.monotonic() - started
    if proc.returncode != 0:
        return AdapterRunResult(
            ok=False, ns_per_op=None, iterations=None,
            cause=FailureCause.BUILD_OR_RUN_ERROR,
            detail=f"exit {proc.returncode}: {stderr.strip()[:2000]}",
            duration_s=duration,
        )
    lines = _data_lines(stdout)
    if len(lines) != 1:
        return AdapterRunResult(
            ok=False, ns_per_op=None, iterations=None,
            cause=FailureCause.PARSE_FAILURE,
            detail=f"expected exactly one result line, got {len(lines)}",
            duration_s=duration,
        )
    parts = lines[0].split("\t")
    if len(parts) != 3 or parts[0] != benchmark.canonical:
        return AdapterRunResult(
            ok=False, ns_per_op=None, iterations=None,
            cause=FailureCause.PARSE_FAILURE,
            detail=f"malformed result line: {lines[0]!r}",
            duration_s=duration,
        )
    try:
        iterations = int(parts[1])
        ns_per_op = float(parts[2])
        if iterations < 1 or ns_per_op <= 0 or ns_per_op != ns_per_op:
            raise ValueError
    except ValueError:
        return AdapterRunResult(
            ok=False, ns_per_op=None, iterations=None,
            cause=FailureCause.PARSE_FAILURE,
            detail=f"non-numeric result line: {lines[0]!r}",
            duration_s=duration,
        )
    return AdapterRunResult(
        ok=True, ns_per_op=ns_per_op, iterations=iterations,
        cause=None, detail="", duration_s=duration,
    )


def run_warmup_hook(
    spec: AdapterSpec, scratch_dir: str, timeout_s: float = 120.0
) -> tuple[bool, float]:
    """Run the per-instance warm-up command once; its output is discarded.

    Used to prime caches on a fresh instance so that measured runs are
    faster and more consistent. Failures are tolerated (the instance may
    still produce valid measurements); returns (ok, duration_s).
    """
    if spec.warmup_hook is None:
        return True, 0.0
    env = dict(os.environ)
    env[SCRATCH_ENV] = scratch_dir
    started = time.monotonic()
    try:
        proc = subprocess.run(
            list(spec.warmup_hook),
            capture_output=True,
            timeout=timeout_s,
            env=env,
        )
        return proc.returncode == 0, time.monotonic() - started
    except (subprocess.TimeoutExpired, OSError):
        return False, time.monotonic() - started
