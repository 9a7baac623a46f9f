"""report.json / rows.csv / summary.txt emission."""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Optional

from tempo.evalharness.runner import HarnessResult, RunRecord
from tempo.evalharness.stats import _r, arm_stats, decision_quality, latency_stats
from tempo.evalharness.workload import Tier
from tempo.pipeline import PHASES

SCHEMA_VERSION = 1

ROW_FIELDS = (
    "id",
    "parent_id",
    "tier",
    "bucket",
    "decision",
    "baseline_s",
    "optimized_s",
    "ratio",
    "similarity",
    "judge_score",
    "baseline_error",
    "optimized_error",
)


def build_report(result: HarnessResult) -> dict:
    records = result.optimized or result.baseline
    report: dict = {
        "schema_version": SCHEMA_VERSION,
        "settings": result.settings.to_json(),
        "workload": {
            "rows": len(records),
            "warm_rows": sum(r.tier is Tier.WARM for r in records),
            "cold_rows": sum(r.tier is Tier.COLD for r in records),
            "warm_parents": sorted(result.warm_parents),
            "seed_entries_warmed": result.warmed,
        },
        "arms": {},
        "errors": {},
        "latency": None,
        "confusion": None,
    }
    for name, recs in (("baseline", result.baseline), ("optimized", result.optimized)):
        if recs:
            report["arms"][name] = arm_stats(recs)
            report["errors"][name] = sum(r.outcome.error is not None for r in recs)
    if result.pairs:
        report["latency"] = latency_stats(result.pairs)
    if result.optimized:
        report["confusion"] = decision_quality(result.optimized, result.warm_parents).to_json()
    return report


def _row(b: Optional[RunRecord], o: Optional[RunRecord]) -> list:
    r = o or b
    assert r is not None
    ratio = _r(b.latency / o.latency) if b and o and o.latency > 0 else None
    cells = [
        r.scenario_id,
        r.parent_id,
        r.tier.value,
        r.outcome.bucket.value if r.outcome.bucket else "",
        o.outcome.cache_decision.value if o else "",
        _r(b.latency) if b else "",
        _r(o.latency) if o else "",
        ratio,
        _r(o.outcome.similarity) if o else None,
        _r(o.outcome.judge_score) if o else None,
        (b.outcome.error or "") if b else "",
        (o.outcome.error or "") if o else "",
    ]
    return ["" if c is None else c for c in cells]


def rows_csv(result: HarnessResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(ROW_FIELDS)
    n = max(len(result.baseline), len(result.optimized))
    for i in range(n):
        b = result.baseline[i] if result.baseline else None
        o = result.optimized[i] if result.optimized else None
        w.writerow(_row(b, o))
    return buf.getvalue()


def _fmt(x) -> str:
    if x is None:
        return "-"
    if isinstance(x, float):
        return f"{x:.3f}"
    return str(x)


def render_summary(report: dict) -> str:
    lines = [f"tempo evaluation report (schema {report['schema_version']}, clock={report['settings']['clock']})", ""]
    wl = report["workload"]
    lines.append(
        f"rows {wl['rows']}  warm {wl['warm_rows']}  cold {wl['cold_rows']}  "
        f"warm parents {len(wl['warm_parents'])}  cache entries warmed {wl['seed_entries_warmed']}"
    )
    arms = report["arms"]
    if arms:
        lines += ["", "Phase medians (s)", "  " + "phase".ljust(16) + "".join(a.rjust(12) for a in arms)]
        for phase in PHASES + ("total",):
            lines.append("  " + phase.ljust(16) + "".join(_fmt(arms[a]["phase_medians"][phase]).rjust(12) for a in arms))
    lat = report.get("latency")
    if lat:
        lines += [
            "",
            f"median per-row speedup (baseline/optimized)  {_fmt(lat['median_ratio'])}",
            f"median latency  baseline {_fmt(lat['median_latency']['baseline'])}  "
            f"optimized {_fmt(lat['median_latency']['optimized'])}",
            f"5% trimmed mean baseline {_fmt(lat['trimmed_mean_5pct']['baseline'])}  "
            f"optimized {_fmt(lat['trimmed_mean_5pct']['optimized'])}",
            f"hit rate {_fmt(lat['hit_rate'])} ({lat['hits']} of {lat['rows']})  "
            f"median hit speedup {_fmt(lat['median_hit_speedup'])}",
            f"miss rows {lat['miss_rows']}  median latency baseline {_fmt(lat['median_miss_latency']['baseline'])}  "
            f"optimized {_fmt(lat['median_miss_latency']['optimized'])}  "
            f"median delta {_fmt(lat['median_miss_delta'])}",
        ]
    cm = report.get("confusion")
    if cm:
        lines += [
            "",
            f"decisions  tp {cm['tp']}  fp {cm['fp']}  fn {cm['fn']}  tn {cm['tn']}",
            f"precision {cm['precision']:.4f}  recall {cm['recall']:.4f}  f1 {cm['f1']:.4f}  "
            f"specificity {cm['specificity']:.4f}",
        ]
    if any(report.get("errors", {}).values()):
        lines += ["", "row errors: " + ", ".join(f"{k} {v}" for k, v in report["errors"].items())]
    return "\n".join(lines) + "\n"


def dumps_report(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True) + "\n"


def emit_report(result: HarnessResult, out_dir: str | Path) -> dict:
    """Write report.json, rows.csv and summary.txt; returns the report."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = build_report(result)
    (out / "report.json").write_text(dumps_report(report), encoding="utf-8")
    (out / "rows.csv").write_text(rows_csv(result), encoding="utf-8", newline="")
    (out / "summary.txt").write_text(render_summary(report), encoding="utf-8")
    return report


def load_report(in_dir: str | Path) -> dict:
    report = json.loads((Path(in_dir) / "report.json").read_text("utf-8"))
    if report.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported report schema {report.get('schema_version')!r}")
    return report


__all__ = ["ROW_FIELDS", "SCHEMA_VERSION", "build_report", "dumps_report", "emit_report", "load_report", "render_summary", "rows_csv"]
