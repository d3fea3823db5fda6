"""Report files.

A benchmark directory holds:

``metrics.json``  per-architecture metrics and deltas; no clock readings, so a
                  seeded rerun reproduces it byte for byte
``timing.json``   wall-clock and per-step time, which never reproduce exactly
``table.txt``     the comparative table, relative percentages incl. ``time``
``history.md``    every run appended as a timestamped section, never rewritten
"""
from __future__ import annotations

import datetime as _dt
import json
import math
from pathlib import Path

from causalgr.training.bench import TABLE_COLUMNS, BenchmarkReport
from causalgr.training.loop import TIMING_FIELDS, MetricsReport


def _clean(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {k: _clean(v) for k, v in value.items()}
    return value


def dumps(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"


def report_json(report: MetricsReport, timing: bool = True) -> str:
    return dumps(report.to_dict(timing=timing))


def format_table(bench: BenchmarkReport) -> str:
    deltas = bench.deltas()
    width = max(len(a) for a in bench.architectures)
    head = "architecture".ljust(width) + "".join(f"{c:>18}" for c in TABLE_COLUMNS)
    lines = [head]
    for arch, row in zip(bench.architectures, deltas):
        cells = "".join(f"{row.get(c, float('nan')):>+17.2f}%" for c in TABLE_COLUMNS)
        lines.append(arch.ljust(width) + cells)
    return "\n".join(lines) + "\n"


def format_absolute(bench: BenchmarkReport) -> str:
    width = max(len(a) for a in bench.architectures)
    cols = ("eval_loss", "accuracy") + tuple(f"ne_{t}" for t in bench.reports[0].per_task_ne)
    lines = ["architecture".ljust(width) + "".join(f"{c:>18}" for c in cols)]
    for r in bench.reports:
        vals = [r.eval_loss, r.primary_accuracy, *r.per_task_ne.values()]
        lines.append(r.architecture.ljust(width) + "".join(f"{v:>18.6f}" for v in vals))
    return "\n".join(lines) + "\n"


def metrics_document(bench: BenchmarkReport, meta: dict | None = None) -> dict:
    deltas = bench.deltas()
    return {
        "meta": meta or {},
        "reports": [r.to_dict(timing=False) for r in bench.reports],
        "relative_percent": [
            {"architecture": a, **{k: v for k, v in d.items() if k != "time"}}
            for a, d in zip(bench.architectures, deltas)
        ],
    }


def timing_document(bench: BenchmarkReport) -> dict:
    return {r.architecture: {k: getattr(r, k) for k in TIMING_FIELDS} for r in bench.reports}


def write_bench_reports(bench: BenchmarkReport, out_dir: str | Path, meta: dict | None = None,
                        report_format: str = "table") -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "metrics": out / "metrics.json",
        "timing": out / "timing.json",
        "table": out / "table.txt",
        "history": out / "history.md",
    }
    paths["metrics"].write_text(dumps(metrics_document(bench, meta)))
    paths["timing"].write_text(dumps(timing_document(bench)))
    table = format_table(bench)
    paths["table"].write_text(table)
    stamp = _dt.datetime.now(_dt.timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
    body = table if report_format == "table" else dumps(metrics_document(bench, meta))
    with paths["history"].open("a") as fh:
        fh.write(f"## {stamp}\n\n```\n{body}```\n\n```\n{format_absolute(bench)}```\n\n")
    return paths
