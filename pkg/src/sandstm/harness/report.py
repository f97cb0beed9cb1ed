"""Serialize a RunReport as CSV, JSON or a markdown table (deterministic output)."""

import csv
import io
import json

from .bench import CellResult, RunReport

COLUMNS = ("workload", "strategy", "threads", "mean_s", "ci_halfwidth_s", "reps", "commits",
           "aborts", "full_validations", "comparisons", "leader_execs", "helper_execs")
FORMATS = ("csv", "json", "markdown")

TIME_DIGITS = 6  # microseconds


def _row(cell):
    return {
        "workload": cell.workload, "strategy": cell.strategy, "threads": cell.threads,
        "mean_s": f"{cell.mean_s:.{TIME_DIGITS}f}",
        "ci_halfwidth_s": f"{cell.ci_halfwidth_s:.{TIME_DIGITS}f}",
        "reps": cell.reps, "commits": cell.commits, "aborts": cell.aborts,
        "full_validations": cell.full_validations, "comparisons": cell.comparisons,
        "leader_execs": cell.leader_execs, "helper_execs": cell.helper_execs,
    }


def _round(x):
    return None if x is None else round(x, TIME_DIGITS)


def _cell_json(cell):
    d = {k: getattr(cell, k) for k in COLUMNS}
    d["mean_s"] = _round(cell.mean_s)
    d["ci_halfwidth_s"] = _round(cell.ci_halfwidth_s)
    d.update(stopped_by_rule=cell.stopped_by_rule, ops=cell.ops, helper_rounds=cell.helper_rounds,
             dooms=cell.dooms, doom_latency_mean_s=_round(cell.doom_latency_mean_s),
             doom_latency_max_s=_round(cell.doom_latency_max_s),
             abort_reasons=dict(cell.abort_reasons), samples=[_round(s) for s in cell.samples])
    return d


def emit_report(report, fmt="csv"):
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=COLUMNS, lineterminator="\n")
        w.writeheader()
        for cell in report.cells:
            w.writerow(_row(cell))
        return buf.getvalue().encode()
    if fmt == "json":
        doc = {"metadata": dict(sorted(report.metadata.items())),
               "columns": list(COLUMNS),
               "cells": [_cell_json(c) for c in report.cells]}
        return (json.dumps(doc, indent=2) + "\n").encode()
    if fmt == "markdown":
        lines = ["| " + " | ".join(COLUMNS) + " |", "|" + "---|" * len(COLUMNS)]
        for cell in report.cells:
            row = _row(cell)
            lines.append("| " + " | ".join(str(row[c]) for c in COLUMNS) + " |")
        meta = report.metadata
        if meta:
            lines += ["", "CI: " + ", ".join(f"{k}={meta[k]}" for k in sorted(meta))]
        return ("\n".join(lines) + "\n").encode()
    raise ValueError(f"unknown format {fmt!r}; choose from {', '.join(FORMATS)}")


def _cell_from(d):
    return CellResult(
        workload=d["workload"], strategy=d["strategy"], threads=int(d["threads"]),
        mean_s=float(d["mean_s"]), ci_halfwidth_s=float(d["ci_halfwidth_s"]), reps=int(d["reps"]),
        stopped_by_rule=bool(d.get("stopped_by_rule", False)), ops=int(d.get("ops", 0)),
        commits=int(d["commits"]), aborts=int(d["aborts"]),
        full_validations=int(d["full_validations"]), comparisons=int(d["comparisons"]),
        leader_execs=int(d["leader_execs"]), helper_execs=int(d["helper_execs"]),
        helper_rounds=int(d.get("helper_rounds", 0)), dooms=int(d.get("dooms", 0)))


def parse_report(data, fmt):
    """Inverse of emit_report for the CSV columns (csv or json input)."""
    text = data.decode() if isinstance(data, bytes) else data
    if fmt == "csv":
        return RunReport([_cell_from(r) for r in csv.DictReader(io.StringIO(text))])
    if fmt == "json":
        doc = json.loads(text)
        return RunReport([_cell_from(c) for c in doc["cells"]], doc.get("metadata", {}))
    raise ValueError(f"cannot parse {fmt!r}")


__all__ = ["COLUMNS", "FORMATS", "emit_report", "parse_report"]
