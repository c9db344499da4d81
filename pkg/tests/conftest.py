import json
import stat
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from elastibench.adapter import AdapterSpec
from elastibench.backends.simulator import (
    BenchmarkProfile,
    PlatformProfile,
    SimulatorScenario,
)

# Adapter used by the local-backend and CLI tests. It serves timings from a
# benchmarks.json table in the version directory, so v1 and v2 trees can
# report different numbers. Rows support "sleep" (seconds before answering),
# "exit" (fail with that code), and "garbage" (print a malformed line).
ADAPTER_SCRIPT = """#!/usr/bin/env python3
import argparse, json, os, sys, time
from pathlib import Path


def main():
    parser = argparse.ArgumentParser()
    sub = parser.add_subparsers(dest="cmd", required=True)
    p_list = sub.add_parser("list")
    p_list.add_argument("--dir", required=True)
    p_run = sub.add_parser("run")
    p_run.add_argument("--dir", required=True)
    p_run.add_argument("--bench", required=True)
    p_run.add_argument("--timeout-s", required=True)
    args = parser.parse_args()
    table = json.loads((Path(args.dir) / "benchmarks.json").read_text())
    scratch = os.environ.get("ELASTIBENCH_SCRATCH_DIR")
    if scratch:
        with open(Path(scratch) / "adapter_runs.log", "a") as fh:
            fh.write("%s %s %s\\n" % (
                args.cmd,
                os.environ.get("ELASTIBENCH_VERSION", "-"),
                getattr(args, "bench", "-"),
            ))
    if args.cmd == "list":
        if table.get("__list_exit__"):
            print("discovery blew up", file=sys.stderr)
            return int(table["__list_exit__"])
        if table.get("__list_garbage__"):
            print("bad id with spaces")
            return 0
        for name in sorted(k for k in table if not k.startswith("__")):
            print(name)
        return 0
    row = table.get(args.bench)
    if row is None:
        print("unknown benchmark %s" % args.bench, file=sys.stderr)
        return 1
    if row.get("sleep"):
        time.sleep(float(row["sleep"]))
    if row.get("exit"):
        print("simulated build failure", file=sys.stderr)
        return int(row["exit"])
    if row.get("garbage"):
        print("not a result line at all")
        return 0
    print("# harness chatter is prefixed and ignored")
    print("%s\\t%d\\t%s" % (args.bench, row.get("iters", 1000), row["ns"]))
    return 0


if __name__ == "__main__":
    sys.exit(main())
"""

WARMUP_HOOK = ("/bin/sh", "-c", 'echo warmed >> "$ELASTIBENCH_SCRATCH_DIR/warmup.log"')


def write_adapter(root: Path, v1_table: dict, v2_table: dict, warmup: bool = False) -> AdapterSpec:
    script = root / "adapter.py"
    script.write_text(ADAPTER_SCRIPT)
    script.chmod(script.stat().st_mode | stat.S_IXUSR | stat.S_IXGRP | stat.S_IXOTH)
    v1_dir = root / "v1"
    v2_dir = root / "v2"
    for d, table in ((v1_dir, v1_table), (v2_dir, v2_table)):
        d.mkdir(parents=True, exist_ok=True)
        (d / "benchmarks.json").write_text(json.dumps(table))
    return AdapterSpec(
        executable=str(script),
        v1_dir=str(v1_dir),
        v2_dir=str(v2_dir),
        warmup_hook=WARMUP_HOOK if warmup else None,
    )


@pytest.fixture
def toy_adapter(tmp_path):
    """Two healthy benchmarks, v2 10% slower on one of them."""
    return write_adapter(
        tmp_path,
        v1_table={"BenchAdd": {"ns": 100.0}, "BenchGet": {"ns": 250.0}},
        v2_table={"BenchAdd": {"ns": 110.0}, "BenchGet": {"ns": 250.0}},
    )


CV_MIX = (0.005, 0.01, 0.02, 0.05)


def make_scenario(
    n_benchmarks: int,
    *,
    effect_pct=0.0,
    cvs=CV_MIX,
    seed: int = 7,
    failing: dict | None = None,
    **platform_overrides,
) -> SimulatorScenario:
    """Scenario with a spread of base costs and intrinsic variabilities.

    ``effect_pct`` may be a float (applied to all benchmarks) or a dict
    mapping benchmark names to effects. ``failing`` maps names to a failure
    mode ("timeout"/"build_error").
    """
    platform = PlatformProfile(**platform_overrides)
    failing = failing or {}
    benchmarks = {}
    for i in range(n_benchmarks):
        name = f"BenchmarkSim{i:03d}"
        if isinstance(effect_pct, dict):
            effect = effect_pct.get(name, 0.0)
        else:
            effect = effect_pct
        benchmarks[name] = BenchmarkProfile(
            base_ns=50.0 * (1 + i % 7) + 25.0 * (i % 3),
            true_effect_pct=effect,
            cv=cvs[i % len(cvs)] if cvs else 0.0,
            failure=failing.get(name),
        )
    return SimulatorScenario(benchmarks=benchmarks, platform=platform, seed=seed)


def scenario_names(scenario: SimulatorScenario) -> list[str]:
    return sorted(scenario.benchmarks)
