"""Command-line front end.

Subcommands::

    elastibench plan     --config cfg.json --out DIR
    elastibench run      --config cfg.json --out DIR [--gate-pct X] [--quiet]
    elastibench analyze  --results results.jsonl --out DIR [--gate-pct X]
    elastibench compare  --report-a A --report-b B --out DIR
    elastibench repeats  --results results.jsonl --reference report.json --out DIR

Exit codes: 0 success (gate passed), 1 gated regression detected, 2 invalid
configuration or input schema, 3 experiment aborted (backend unavailable).

All randomness flows from the experiment seed in the config file; no command
draws entropy from the clock, so simulator-backed commands are fully
reproducible.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Any, Mapping

from .backends import Backend, create_backend
from .errors import (
    ComparisonError,
    ConfigError,
    DataIntegrityError,
    ElastibenchError,
    ExperimentAborted,
    InvalidId,
    PlanError,
    StatsError,
)
from .model import BenchmarkId, ExperimentConfig, VersionPair, pair_measurements
from .orchestrator import Pricing, build_plan, estimate_cost, execute, write_plan
from .reporting import (
    DEFAULT_GATE_PCT,
    RESULTS_FILENAME,
    ResultsWriter,
    build_report,
    comparison_to_dict,
    gate_passes,
    load_report,
    load_results,
    render_summary,
    write_report,
)
from .stats import BootstrapConfig, compare_experiments, repeats_for_ci_size

EXIT_OK = 0
EXIT_GATE_FAILED = 1
EXIT_BAD_CONFIG = 2
EXIT_ABORTED = 3

_TOP_LEVEL_KEYS = {"versions", "experiment", "pricing", "gate_pct", "benchmarks"}


def load_config_file(path: str) -> dict[str, Any]:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file is not valid JSON: {exc}")
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a JSON object")
    unknown = set(data) - _TOP_LEVEL_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if "versions" not in data:
        raise ConfigError("config file needs a 'versions' section")
    return data


def _apply_overrides(experiment: dict[str, Any], args: argparse.Namespace) -> None:
    if getattr(args, "seed", None) is not None:
        experiment["seed"] = args.seed
    if getattr(args, "parallelism", None) is not None:
        experiment["max_parallelism"] = args.parallelism
    if getattr(args, "repeats_in_call", None) is not None:
        experiment["in_call_repeats"] = args.repeats_in_call
    if getattr(args, "call_repeats", None) is not None:
        experiment["call_repeats"] = args.call_repeats
    if getattr(args, "backend", None) is not None:
        backend = dict(experiment.get("backend", {}))
        backend["type"] = args.backend
        experiment["backend"] = backend


def _pricing_from(data: Mapping[str, Any] | None) -> Pricing:
    if not data:
        return Pricing()
    unknown = set(data) - {"price_per_gb_s", "price_per_request"}
    if unknown:
        raise ConfigError(f"unknown pricing keys: {sorted(unknown)}")
    return Pricing(
        price_per_gb_s=float(data.get("price_per_gb_s", Pricing.price_per_gb_s)),
        price_per_request=float(data.get("price_per_request", Pricing.price_per_request)),
    )


def _setup(args: argparse.Namespace) -> tuple[ExperimentConfig, VersionPair, Pricing, float, list[BenchmarkId] | None]:
    data = load_config_file(args.config)
    experiment = dict(data.get("experiment", {}))
    _apply_overrides(experiment, args)
    config = ExperimentConfig.from_dict(experiment)
    versions = VersionPair(**data["versions"])
    pricing = _pricing_from(data.get("pricing"))
    gate_pct = float(data.get("gate_pct", DEFAULT_GATE_PCT))
    if getattr(args, "gate_pct", None) is not None:
        gate_pct = args.gate_pct
    explicit = data.get("benchmarks")
    benchmarks = [BenchmarkId.parse(b) for b in explicit] if explicit else None
    return config, versions, pricing, gate_pct, benchmarks


def _make_backend(config: ExperimentConfig) -> Backend:
    return create_backend(
        config.backend,
        run_seed=config.seed,
        max_parallelism=config.max_parallelism,
        memory_mb=config.memory_mb,
        per_benchmark_timeout_s=config.per_benchmark_timeout_s,
        in_call_repeats=config.in_call_repeats,
    )


def _resolve_benchmarks(
    backend: Backend, explicit: list[BenchmarkId] | None
) -> list[BenchmarkId]:
    if explicit:
        return explicit
    discovered = backend.discover_benchmarks()
    if not discovered:
        raise ConfigError(
            "no benchmarks: give an explicit 'benchmarks' list in the config "
            "(required for the http backend) or use a backend that can discover them"
        )
    return discovered


def _expected_invocation_s(config: ExperimentConfig) -> float:
    if config.expected_invocation_s is not None:
        return config.expected_invocation_s
    return (
        config.benchmarks_per_call * config.in_call_repeats * 2
        * config.per_benchmark_timeout_s + 10.0
    )


def cmd_plan(args: argparse.Namespace) -> int:
    config, _versions, pricing, _gate, explicit = _setup(args)
    backend = _make_backend(config)
    try:
        benchmarks = _resolve_benchmarks(backend, explicit)
    finally:
        backend.close()
    plan = build_plan(config, benchmarks)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_plan(plan, str(out / "plan.json"))
    cost = estimate_cost(
        plan.total_invocations, pricing, _expected_invocation_s(config), config.memory_mb
    )
    print(
        f"{plan.total_invocations} invocations, "
        f"{plan.target_results_per_benchmark} results/benchmark, "
        f"{len(benchmarks)} benchmarks, estimated cost ${cost:.4f}"
    )
    return EXIT_OK


def cmd_run(args: argparse.Namespace) -> int:
    config, versions, pricing, gate_pct, explicit = _setup(args)
    backend = _make_backend(config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        benchmarks = _resolve_benchmarks(backend, explicit)
        plan = build_plan(config, benchmarks)
        write_plan(plan, str(out / "plan.json"))

        writer = ResultsWriter(out / RESULTS_FILENAME, config, versions)

        def on_invocation(entry, response, extra_failures):
            writer.write_invocation(
                response.measurements if response else (),
                (list(response.failures) if response else []) + extra_failures,
            )

        progress = None
        if not args.quiet:
            def progress(event):
                print(json.dumps(event, separators=(",", ":")), file=sys.stderr)

        try:
            result = execute(
                plan, backend, config, versions,
                on_invocation=on_invocation, progress=progress,
            )
        except ExperimentAborted as exc:
            partial = exc.partial
            if partial is not None:
                writer.write_footer(partial.started_at, partial.finished_at)
                writer.close()
                bundle = build_report(partial, gate_pct=gate_pct, pricing=pricing)
                write_report(bundle, out)
            else:
                writer.close()
            print(f"experiment aborted: {exc}", file=sys.stderr)
            return EXIT_ABORTED
        writer.write_footer(result.started_at, result.finished_at)
        writer.close()
    finally:
        backend.close()

    bundle = build_report(result, gate_pct=gate_pct, pricing=pricing)
    write_report(bundle, out)
    print(render_summary(bundle), end="")
    return EXIT_OK if gate_passes(result.stats, gate_pct) else EXIT_GATE_FAILED


def cmd_analyze(args: argparse.Namespace) -> int:
    result = load_results(args.results)
    gate_pct = args.gate_pct if args.gate_pct is not None else DEFAULT_GATE_PCT
    bundle = build_report(result, gate_pct=gate_pct)
    out = Path(args.out)
    write_report(bundle, out)
    print(render_summary(bundle), end="")
    return EXIT_OK


def cmd_compare(args: argparse.Namespace) -> int:
    bundle_a = load_report(args.report_a)
    bundle_b = load_report(args.report_b)
    comparison = compare_experiments(bundle_a.stats, bundle_b.stats)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    payload = comparison_to_dict(comparison)
    (out / "comparison.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    print(
        f"agreement {payload['agreement_fraction']} over {payload['compared_n']} benchmarks; "
        f"one-sided coverage a->b {payload['one_sided_coverage_ab']}, "
        f"b->a {payload['one_sided_coverage_ba']}; "
        f"two-sided {payload['two_sided_coverage']}"
    )
    for item in payload["possible_changes"]:
        print(
            f"possible change: {item['benchmark']} "
            f"max |median| {item['max_abs_median_diff_pct']}%"
        )
    return EXIT_OK


def cmd_repeats(args: argparse.Namespace) -> int:
    full = load_results(args.results)
    reference = load_report(args.reference)
    pairs, _ = pair_measurements(full.measurements)
    samples: dict[str, list[float]] = {}
    for p in pairs:  # stored order == planned call order
        samples.setdefault(p.benchmark.canonical, []).append(p.rel_diff_pct)
    if not samples:
        raise StatsError("no paired measurements in results file")
    max_n = max(len(v) for v in samples.values())
    # Prefixes below min_results would not be analyzable experiments at all
    # (and degenerate to zero-width CIs), so the study starts there.
    start = min(max(full.config.min_results, 1), max_n)
    ks = list(range(start, max_n + 1, args.k_step))
    if not ks or ks[-1] != max_n:
        ks.append(max_n)
    resamples = args.resamples or full.config.bootstrap_resamples
    curve = repeats_for_ci_size(
        samples,
        {s.benchmark.canonical: s for s in reference.stats},
        BootstrapConfig(resamples=resamples, ci_level=full.config.ci_level),
        base_seed=full.config.seed,
        ks=ks,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["k,fraction"]
    for k, fraction in curve.curve:
        lines.append(f"{k},{fraction:.4f}")
    (out / "repeats_curve.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    payload = {
        "eligible": curve.eligible_n,
        "skipped": [{"benchmark": b, "reason": why} for b, why in curve.skipped],
        "per_benchmark": [
            {
                "benchmark": r.benchmark,
                "reference_ci_size": round(r.reference_ci_size, 4),
                "minimal_k": r.minimal_k,
            }
            for r in curve.per_benchmark
        ],
    }
    (out / "repeats.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    final_k, final_fraction = curve.curve[-1] if curve.curve else (0, 0.0)
    print(
        f"{curve.eligible_n} eligible benchmarks; "
        f"fraction at k={final_k}: {final_fraction:.4f}"
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="elastibench",
        description="Detect performance regressions with paired, fanned-out microbenchmarks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config_flags(p):
        p.add_argument("--config", required=True, help="experiment config JSON")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--backend", choices=["local", "sim", "http"],
                       help="override the configured backend type")
        p.add_argument("--seed", type=int, help="override the experiment seed")
        p.add_argument("--parallelism", type=int, help="override max parallel invocations")
        p.add_argument("--repeats-in-call", type=int, dest="repeats_in_call",
                       help="override measurements per version per invocation")
        p.add_argument("--call-repeats", type=int, dest="call_repeats",
                       help="override invocations per benchmark")

    p_plan = sub.add_parser("plan", help="build and price the invocation plan")
    add_config_flags(p_plan)
    p_plan.set_defaults(func=cmd_plan)

    p_run = sub.add_parser("run", help="execute the experiment and report")
    add_config_flags(p_run)
    p_run.add_argument("--gate-pct", type=float, dest="gate_pct",
                       help=f"regression gate threshold in percent (default {DEFAULT_GATE_PCT})")
    p_run.add_argument("--quiet", action="store_true", help="suppress progress events")
    p_run.set_defaults(func=cmd_run)

    p_analyze = sub.add_parser("analyze", help="recompute a report from raw results")
    p_analyze.add_argument("--results", required=True, help="results.jsonl path")
    p_analyze.add_argument("--out", required=True)
    p_analyze.add_argument("--gate-pct", type=float, dest="gate_pct")
    p_analyze.set_defaults(func=cmd_analyze)

    p_compare = sub.add_parser("compare", help="compare two experiment reports")
    p_compare.add_argument("--report-a", required=True, dest="report_a")
    p_compare.add_argument("--report-b", required=True, dest="report_b")
    p_compare.add_argument("--out", required=True)
    p_compare.set_defaults(func=cmd_compare)

    p_repeats = sub.add_parser(
        "repeats", help="how many repeats until the CI is as tight as a reference"
    )
    p_repeats.add_argument("--results", required=True, help="results.jsonl of the long run")
    p_repeats.add_argument("--reference", required=True, help="reference report.json")
    p_repeats.add_argument("--out", required=True)
    p_repeats.add_argument("--k-step", type=int, default=1, dest="k_step")
    p_repeats.add_argument("--resamples", type=int, help="bootstrap resamples for the curve")
    p_repeats.set_defaults(func=cmd_repeats)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DataIntegrityError, ComparisonError, StatsError,
            PlanError, InvalidId) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_CONFIG
    except ElastibenchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ABORTED


if __name__ == "__main__":
    sys.exit(main())
