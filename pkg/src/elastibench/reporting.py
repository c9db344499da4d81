"""Persistence and rendering of experiments, reports, and comparisons.

Raw results live in a JSON Lines file: a header object (experiment config
and version pair), one object per measurement, one object per failed repeat
slot, and a footer with the run timestamps. Reports are derived artifacts
(``report.json``, CDF CSVs, ``summary.txt``) written with stable ordering
and fixed numeric precision so identical inputs produce identical bytes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence, TextIO

from .errors import ConfigError, DataIntegrityError
from .model import (
    BenchmarkFailure,
    BenchmarkId,
    BenchmarkStats,
    Classification,
    ExclusionReason,
    ExperimentConfig,
    ExperimentResult,
    Measurement,
    VersionPair,
    failure_from_dict,
    failure_to_dict,
    format_rfc3339,
    measurement_from_dict,
    measurement_to_dict,
    parse_rfc3339,
)
from .orchestrator import Pricing, estimate_cost
from .stats import ComparisonReport, ComparisonVerdict, analyze_experiment

DEFAULT_GATE_PCT = 3.0

RESULTS_FILENAME = "results.jsonl"
REPORT_FILENAME = "report.json"
SUMMARY_FILENAME = "summary.txt"
CDF_CHANGES_FILENAME = "cdf_changes.csv"
CDF_NOCHANGES_FILENAME = "cdf_nochanges.csv"


def _round4(value: float | None) -> float | None:
    return None if value is None else round(value, 4)


def _dump_line(obj: Mapping[str, Any], fh: TextIO) -> None:
    fh.write(json.dumps(obj, separators=(",", ":")))
    fh.write("\n")


class ResultsWriter:
    """Streams measurements to disk as invocations complete."""

    def __init__(self, path: str | Path, config: ExperimentConfig, versions: VersionPair):
        self._fh = open(path, "w", encoding="utf-8")
        _dump_line(
            {
                "type": "header",
                "config": config.to_dict(),
                "versions": {"v1_ref": versions.v1_ref, "v2_ref": versions.v2_ref},
            },
            self._fh,
        )

    def write_invocation(
        self,
        measurements: Iterable[Measurement],
        failures: Iterable[BenchmarkFailure],
    ) -> None:
        for m in measurements:
            _dump_line(measurement_to_dict(m), self._fh)
        for f in failures:
            _dump_line({"type": "failure", **failure_to_dict(f)}, self._fh)
        self._fh.flush()

    def write_footer(self, started_at, finished_at) -> None:
        _dump_line(
            {
                "type": "footer",
                "started_at": format_rfc3339(started_at),
                "finished_at": format_rfc3339(finished_at),
            },
            self._fh,
        )

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "ResultsWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def write_results(result: ExperimentResult, path: str | Path) -> None:
    """Persist a complete in-memory result in one go."""
    with ResultsWriter(path, result.config, result.versions) as writer:
        writer.write_invocation(result.measurements, result.failures)
        writer.write_footer(result.started_at, result.finished_at)


def load_results(path: str | Path) -> ExperimentResult:
    """Load a results file and recompute the per-benchmark statistics.

    Statistics are always rederived from the raw measurements with the seed
    stored in the header, so a loaded result is interchangeable with the one
    produced by the original run.
    """
    measurements: list[Measurement] = []
    failures: list[BenchmarkFailure] = []
    config: ExperimentConfig | None = None
    versions: VersionPair | None = None
    started_at = finished_at = None
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataIntegrityError(f"{path}:{line_no}: invalid JSON: {exc}")
            kind = obj.get("type")
            if line_no == 1:
                if kind != "header":
                    raise DataIntegrityError(f"{path}: first line must be the header")
                config = ExperimentConfig.from_dict(obj["config"])
                versions = VersionPair(**obj["versions"])
                continue
            if kind == "failure":
                obj.pop("type")
                failures.append(failure_from_dict(obj))
            elif kind == "footer":
                started_at = parse_rfc3339(obj["started_at"])
                finished_at = parse_rfc3339(obj["finished_at"])
            elif kind is None:
                measurements.append(measurement_from_dict(obj))
            else:
                raise DataIntegrityError(f"{path}:{line_no}: unknown record type {kind!r}")
    if config is None or versions is None:
        raise DataIntegrityError(f"{path}: missing header")
    if started_at is None or finished_at is None:
        # Tolerate a missing footer (e.g. an interrupted run).
        times = [m.wall_time for m in measurements]
        started_at = min(times) if times else parse_rfc3339("1970-01-01T00:00:00+00:00")
        finished_at = max(times) if times else started_at
    stats, _ = analyze_experiment(measurements, failures, config)
    return ExperimentResult(
        config=config, versions=versions, measurements=measurements,
        stats=stats, started_at=started_at, finished_at=finished_at,
        failures=failures,
    )


# --- report bundle ----------------------------------------------------------

@dataclass
class ReportBundle:
    """Everything a report directory contains, pre-serialization."""

    stats: list[BenchmarkStats]
    summary: dict[str, Any]
    run_metadata: dict[str, Any]
    cdf_exports: dict[str, list[float]]
    gate_pct: float
    comparison: ComparisonReport | None = None


def _median(values: Sequence[float]) -> float | None:
    if not values:
        return None
    ordered = sorted(values)
    n = len(ordered)
    mid = n // 2
    if n % 2:
        return ordered[mid]
    return (ordered[mid - 1] + ordered[mid]) / 2.0


def build_report(
    result: ExperimentResult,
    *,
    gate_pct: float = DEFAULT_GATE_PCT,
    pricing: Pricing | None = None,
) -> ReportBundle:
    pricing = pricing or Pricing()
    config = result.config
    stats = sorted(result.stats, key=lambda s: s.benchmark.canonical)

    counts = {c.value: 0 for c in Classification}
    for s in stats:
        counts[s.classification.value] += 1
    changes = [abs(s.median_diff_pct) for s in stats if s.is_change]
    no_changes = [
        abs(s.median_diff_pct)
        for s in stats
        if s.classification is Classification.NO_CHANGE
    ]
    summary = {
        "benchmarks": len(stats),
        "counts": counts,
        "median_abs_change_pct": _round4(_median(changes)),
        "measurements": len(result.measurements),
        "failures": len(result.failures),
    }

    invocation_ids = {m.invocation_id for m in result.measurements}
    invocation_ids.update(f.invocation_id for f in result.failures)
    expected_s = config.expected_invocation_s
    if expected_s is None:
        expected_s = (
            config.benchmarks_per_call * config.in_call_repeats * 2
            * config.per_benchmark_timeout_s + 10.0
        )
    run_metadata = {
        "config": config.to_dict(),
        "versions": {"v1_ref": result.versions.v1_ref, "v2_ref": result.versions.v2_ref},
        "started_at": format_rfc3339(result.started_at),
        "finished_at": format_rfc3339(result.finished_at),
        "invocations": len(invocation_ids),
        "cost_estimate_usd": _round4(
            estimate_cost(len(invocation_ids), pricing, expected_s, config.memory_mb)
        ),
        "gate_pct": gate_pct,
    }

    return ReportBundle(
        stats=stats,
        summary=summary,
        run_metadata=run_metadata,
        cdf_exports={
            "changes": sorted(changes),
            "nochanges": sorted(no_changes),
        },
        gate_pct=gate_pct,
    )


def gate_passes(stats: Sequence[BenchmarkStats], gate_pct: float) -> bool:
    """False when any detected regression exceeds the gate threshold."""
    return not any(
        s.classification is Classification.CHANGE_POSITIVE and s.median_diff_pct > gate_pct
        for s in stats
    )


def _stats_row(s: BenchmarkStats) -> dict[str, Any]:
    return {
        "benchmark": s.benchmark.canonical,
        "n": s.n,
        "median_diff_pct": _round4(s.median_diff_pct),
        "ci_low_pct": _round4(s.ci_low_pct),
        "ci_high_pct": _round4(s.ci_high_pct),
        "classification": s.classification.value,
        "exclusion_reason": s.exclusion_reason.value if s.exclusion_reason else None,
    }


def _stats_row_load(row: Mapping[str, Any]) -> BenchmarkStats:
    return BenchmarkStats(
        benchmark=BenchmarkId.parse(row["benchmark"]),
        n=int(row["n"]),
        median_diff_pct=row["median_diff_pct"],
        ci_low_pct=row["ci_low_pct"],
        ci_high_pct=row["ci_high_pct"],
        classification=Classification(row["classification"]),
        exclusion_reason=(
            ExclusionReason(row["exclusion_reason"]) if row["exclusion_reason"] else None
        ),
    )


def comparison_to_dict(report: ComparisonReport) -> dict[str, Any]:
    verdict_counts = {v.value: 0 for v in ComparisonVerdict}
    for v in report.verdicts.values():
        verdict_counts[v.value] += 1
    return {
        "compared_n": report.compared_n,
        "agreement_fraction": _round4(report.agreement_fraction),
        "one_sided_coverage_ab": _round4(report.one_sided_coverage_ab),
        "one_sided_coverage_ba": _round4(report.one_sided_coverage_ba),
        "two_sided_coverage": _round4(report.two_sided_coverage),
        "verdict_counts": verdict_counts,
        "verdicts": {name: v.value for name, v in sorted(report.verdicts.items())},
        "possible_changes": [
            {"benchmark": name, "max_abs_median_diff_pct": _round4(value)}
            for name, value in report.possible_changes
        ],
    }


def write_report(bundle: ReportBundle, out_dir: str | Path) -> dict[str, Path]:
    """Write report.json, the two CDF CSVs, and summary.txt into ``out_dir``.

    Re-writing the same bundle produces byte-identical files.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = {
        "analysis": [_stats_row(s) for s in bundle.stats],
        "summary": bundle.summary,
        "run_metadata": bundle.run_metadata,
        "comparison": comparison_to_dict(bundle.comparison) if bundle.comparison else None,
    }
    paths = {}
    report_path = out / REPORT_FILENAME
    report_path.write_text(
        json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    paths["report"] = report_path

    for label, filename in (
        ("changes", CDF_CHANGES_FILENAME),
        ("nochanges", CDF_NOCHANGES_FILENAME),
    ):
        values = bundle.cdf_exports.get(label, [])
        lines = ["abs_median_diff_pct,cdf"]
        for i, value in enumerate(values, start=1):
            lines.append(f"{value:.4f},{i / len(values):.4f}")
        path = out / filename
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        paths[label] = path

    summary_path = out / SUMMARY_FILENAME
    summary_path.write_text(render_summary(bundle), encoding="utf-8")
    paths["summary"] = summary_path
    return paths


def load_report(path: str | Path) -> ReportBundle:
    path = Path(path)
    if path.is_dir():
        path = path / REPORT_FILENAME
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}")
    try:
        stats = [_stats_row_load(row) for row in data["analysis"]]
        run_metadata = data["run_metadata"]
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"{path} does not look like a report file: {exc}")
    return ReportBundle(
        stats=stats,
        summary=data.get("summary", {}),
        run_metadata=run_metadata,
        cdf_exports={},
        gate_pct=float(run_metadata.get("gate_pct", DEFAULT_GATE_PCT)),
    )


def render_summary(bundle: ReportBundle) -> str:
    """Human-readable table with one row per benchmark and a gate verdict."""
    header = f"{'benchmark':<44} {'n':>5} {'median%':>10} {'ci_low%':>10} {'ci_high%':>10}  class"
    lines = [header, "-" * len(header)]
    for s in bundle.stats:
        if s.classification is Classification.EXCLUDED:
            lines.append(
                f"{s.benchmark.canonical:<44} {s.n:>5} {'-':>10} {'-':>10} {'-':>10}  "
                f"excluded ({s.exclusion_reason.value})"
            )
        else:
            lines.append(
                f"{s.benchmark.canonical:<44} {s.n:>5} "
                f"{s.median_diff_pct:>10.4f} {s.ci_low_pct:>10.4f} {s.ci_high_pct:>10.4f}  "
                f"{s.classification.value}"
            )
    counts = bundle.summary.get("counts", {})
    lines.append("-" * len(header))
    lines.append(
        f"total {bundle.summary.get('benchmarks', len(bundle.stats))} benchmarks: "
        f"{counts.get('change_positive', 0)} slower, "
        f"{counts.get('change_negative', 0)} faster, "
        f"{counts.get('no_change', 0)} unchanged, "
        f"{counts.get('excluded', 0)} excluded"
    )
    if bundle.comparison is not None:
        c = comparison_to_dict(bundle.comparison)
        lines.append(
            f"comparison: agreement {c['agreement_fraction']} over {c['compared_n']} benchmarks"
        )
    ok = gate_passes(bundle.stats, bundle.gate_pct)
    lines.append(
        f"gate (regression threshold {bundle.gate_pct:.4f}%): {'pass' if ok else 'fail'}"
    )
    return "\n".join(lines) + "\n"
