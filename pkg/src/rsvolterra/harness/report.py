"""Flatten a run directory's manifest summary into report.csv."""

from __future__ import annotations

import csv
import json
from pathlib import Path

__all__ = ["ReportError", "emit_report"]


class ReportError(FileNotFoundError):
    pass


def _flatten(prefix, obj, rows):
    if isinstance(obj, dict):
        for k in sorted(obj):
            _flatten(f"{prefix}.{k}" if prefix else str(k), obj[k], rows)
    elif isinstance(obj, list) and all(not isinstance(v, (dict, list)) for v in obj):
        rows.append((prefix, ";".join(repr(v) if isinstance(v, float) else str(v) for v in obj)))
    elif isinstance(obj, list):
        for i, v in enumerate(obj):
            _flatten(f"{prefix}[{i}]", v, rows)
    else:
        rows.append((prefix, repr(obj) if isinstance(obj, float) else str(obj)))


def emit_report(run_dir) -> Path:
    """Write ``report.csv`` (experiment, metric, value) from a completed run.

    Only the deterministic summary enters the report, so regenerating it on
    an unchanged directory gives identical bytes.
    """
    run_dir = Path(run_dir)
    man_path = run_dir / "manifest.json"
    if not man_path.is_file():
        raise ReportError(f"{run_dir} is not a completed run: missing manifest.json")
    with open(man_path, encoding="utf-8") as fh:
        man = json.load(fh)
    missing = sorted(name for name in man.get("files", {}) if not (run_dir / name).is_file())
    if missing:
        raise ReportError(f"run directory {run_dir} is missing: {', '.join(missing)}")
    rows = []
    _flatten("", man.get("summary", {}), rows)
    out = run_dir / "report.csv"
    with open(out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["experiment", "metric", "value"])
        for metric, value in rows:
            w.writerow([man["experiment"], metric, value])
    return out
