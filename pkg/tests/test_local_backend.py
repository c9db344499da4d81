import time

import pytest

from conftest import write_adapter
from elastibench.backends import InvocationRequest
from elastibench.backends.local import LocalBackend, adapter_spec_from_dict
from elastibench.errors import ConfigError
from elastibench.model import BenchmarkId, FailureCause, Version, pair_measurements


def request_for(names, seed=1, repeats=2, randomize_versions=False, timeout=10.0):
    return InvocationRequest(
        benchmarks=tuple(BenchmarkId.parse(n) for n in names),
        in_call_repeats=repeats,
        randomize_version_order=randomize_versions,
        randomize_benchmark_order=False,
        per_benchmark_timeout_s=timeout,
        request_seed=seed,
    )


@pytest.fixture
def backend(toy_adapter):
    b = LocalBackend(toy_adapter, max_instances=2)
    yield b
    b.close()


def test_invocation_yields_pairs_per_repeat(backend):
    response = backend.invoke(request_for(["BenchAdd"], repeats=3))
    pairs, unpaired = pair_measurements(response.measurements)
    assert not unpaired
    assert len(pairs) == 3
    for p in pairs:
        assert p.rel_diff_pct == pytest.approx(10.0)  # v2 table is 10% slower


def test_cold_then_warm_on_same_worker(backend):
    first = backend.invoke(request_for(["BenchAdd"], seed=1, repeats=1))
    second = backend.invoke(request_for(["BenchAdd"], seed=2, repeats=1))
    assert first.cold_start is True
    assert second.cold_start is False
    assert first.instance_id == second.instance_id  # idle workers reused LIFO


def test_fixed_version_order_is_v1_then_v2(backend):
    response = backend.invoke(request_for(["BenchAdd"], repeats=2))
    versions = [m.version for m in response.measurements]
    assert versions == [Version.V1, Version.V2, Version.V1, Version.V2]


def test_randomized_order_deterministic_per_seed(toy_adapter):
    def order(seed):
        backend = LocalBackend(toy_adapter, max_instances=1)
        try:
            response = backend.invoke(
                request_for(["BenchAdd", "BenchGet"], seed=seed,
                            repeats=3, randomize_versions=True)
            )
        finally:
            backend.close()
        return [(m.benchmark.canonical, m.repeat_index, m.version) for m in response.measurements]

    assert order(42) == order(42)
    orders = {tuple(order(s)) for s in range(6)}
    assert len(orders) > 1  # randomization does something across seeds


def test_v2_failure_keeps_v1_unpaired_and_fails_fast(tmp_path):
    spec = write_adapter(
        tmp_path,
        v1_table={"B": {"ns": 100.0}},
        v2_table={"B": {"ns": 100.0, "exit": 1}},
    )
    backend = LocalBackend(spec, max_instances=1)
    try:
        response = backend.invoke(request_for(["B"], repeats=3))
    finally:
        backend.close()
    pairs, unpaired = pair_measurements(response.measurements)
    assert not pairs
    assert len(unpaired) == 1  # v1 of the first repeat is kept, reported unpaired
    assert len(response.failures) == 3
    assert response.failures[0].cause is FailureCause.BUILD_OR_RUN_ERROR
    assert "not run after earlier failure" in response.failures[1].detail
    # Every repeat slot is accounted for: a pair or a failure entry.
    assert {f.repeat_index for f in response.failures} == {0, 1, 2}


def test_timeout_failure_bounded_wall_clock(tmp_path):
    spec = write_adapter(
        tmp_path,
        v1_table={"Slow": {"ns": 1.0, "sleep": 5}},
        v2_table={"Slow": {"ns": 1.0}},
    )
    backend = LocalBackend(spec, max_instances=1)
    started = time.monotonic()
    try:
        response = backend.invoke(request_for(["Slow"], repeats=2, timeout=0.5))
    finally:
        backend.close()
    assert time.monotonic() - started < 4.0  # one timed-out run, then fail-fast
    assert response.failures[0].cause is FailureCause.TIMEOUT


def test_warmup_hook_once_per_instance(tmp_path):
    spec = write_adapter(
        tmp_path,
        v1_table={"B": {"ns": 100.0}},
        v2_table={"B": {"ns": 100.0}},
        warmup=True,
    )
    backend = LocalBackend(spec, max_instances=1)
    try:
        backend.invoke(request_for(["B"], seed=1, repeats=1))
        backend.invoke(request_for(["B"], seed=2, repeats=1))
        scratch = backend._idle[0].scratch_dir
        lines = open(f"{scratch}/warmup.log").read().splitlines()
    finally:
        backend.close()
    assert lines == ["warmed"]


def test_discover_benchmarks_intersects_trees(tmp_path):
    spec = write_adapter(
        tmp_path,
        v1_table={"A": {"ns": 1.0}, "OnlyV1": {"ns": 1.0}},
        v2_table={"A": {"ns": 1.0}, "OnlyV2": {"ns": 1.0}},
    )
    backend = LocalBackend(spec, max_instances=1)
    try:
        assert [b.canonical for b in backend.discover_benchmarks()] == ["A"]
    finally:
        backend.close()


def test_adapter_spec_from_dict_strict():
    with pytest.raises(ConfigError):
        adapter_spec_from_dict({"executable": "x", "v1_dir": "a", "v2_dir": "b", "bogus": 1})
    with pytest.raises(ConfigError):
        adapter_spec_from_dict({"executable": "x", "v1_dir": "a"})
