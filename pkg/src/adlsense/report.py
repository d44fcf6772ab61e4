"""Evaluation report writer: machine-readable JSON plus an aligned text table
mirroring the within-domain / out-of-domain / success-rate layouts, with
optional rendered figures alongside.

Output is deterministic: fixed key order, fixed float formatting, no clocks.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Mapping, Sequence

from .errors import FileFormatError
from .evaluation import FriedmanResult, McNemarResult, MetricReport

REPORT_FORMAT = "adlsense-report"
REPORT_VERSION = 1


def _fmt(value: float | None, digits: int = 3) -> str:
    return "-" if value is None else f"{value:.{digits}f}"


def _tests_payload(
    friedman: FriedmanResult | None,
    mcnemar: Mapping[str, McNemarResult] | None,
) -> dict:
    payload: dict = {}
    if friedman is not None:
        payload["friedman"] = {"q": friedman.q, "df": friedman.df, "p": friedman.p}
    if mcnemar:
        payload["mcnemar"] = {
            pair: {"z": r.z, "p": r.p, "exact_p": r.exact_p}
            for pair, r in sorted(mcnemar.items())
        }
    return payload


def _metrics_table(metrics: Mapping[str, MetricReport]) -> list[str]:
    rows = [("Method", "P", "R", "F1", "NUADL Acc")]
    for name in sorted(metrics):
        r = metrics[name]
        rows.append(
            (
                name,
                _fmt(r.macro_precision),
                _fmt(r.macro_recall),
                _fmt(r.macro_f1),
                _fmt(r.nuadl_accuracy),
            )
        )
    widths = [max(len(row[i]) for row in rows) for i in range(len(rows[0]))]
    lines = []
    for row in rows:
        lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip())
    lines.insert(1, "  ".join("-" * w for w in widths))
    return lines


def _rates_table(rates: Mapping[str, Sequence[tuple[int, int]]]) -> list[str]:
    lines = [
        "Group           Completed  Successes  Rate",
        "-----           ---------  ---------  ----",
    ]
    total_s = total_a = 0
    for group in sorted(rates):
        rows = rates[group]
        s = sum(r[0] for r in rows)
        a = sum(r[1] for r in rows)
        total_s += s
        total_a += a
        lines.append(f"{group:<15} {a:>9}  {s:>9}  {100.0 * s / a:.1f}%")
    if total_a:
        lines.append(f"{'overall':<15} {total_a:>9}  {total_s:>9}  {100.0 * total_s / total_a:.1f}%")
    return lines


def write_report(
    path,
    metrics: Mapping[str, MetricReport],
    friedman: FriedmanResult | None = None,
    mcnemar: Mapping[str, McNemarResult] | None = None,
    rates: Mapping[str, Sequence[tuple[int, int]]] | None = None,
    figures: bool = False,
) -> list[Path]:
    """Write ``<path>.json`` and ``<path>.txt``; optionally render figures.

    Returns the list of written paths. An empty metrics mapping omits the
    metrics section and records a warning instead.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    warnings: list[str] = []
    if not metrics:
        warnings.append("no prediction sets supplied; metrics section omitted")
    for name in sorted(metrics):
        for label in metrics[name].zero_support:
            warnings.append(
                f"method {name!r}: class {label!r} has zero support and was "
                "excluded from macro averages"
            )

    payload: dict = {"format": REPORT_FORMAT, "version": REPORT_VERSION}
    if metrics:
        payload["metrics"] = {name: metrics[name].to_dict() for name in sorted(metrics)}
    tests = _tests_payload(friedman, mcnemar)
    if tests:
        payload["tests"] = tests
    if rates:
        payload["rates"] = {
            group: [[int(s), int(a)] for s, a in rows]
            for group, rows in sorted(rates.items())
        }
    if warnings:
        payload["warnings"] = warnings

    json_path = path.with_suffix(".json")
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")

    lines: list[str] = ["Evaluation report", "================="]
    if warnings:
        lines.append("")
        lines.extend(f"warning: {w}" for w in warnings)
    if metrics:
        lines.extend(["", "Classification (macro over known classes)", ""])
        lines.extend(_metrics_table(metrics))
    if friedman is not None:
        lines.extend(
            [
                "",
                "Friedman test over class predictions:",
                f"  Q = {friedman.q:.3f}, df = {friedman.df}, p = {friedman.p:.4g}",
            ]
        )
    if mcnemar:
        lines.extend(["", "Posthoc McNemar tests:"])
        for pair, r in sorted(mcnemar.items()):
            exact = f", exact p = {r.exact_p:.4g}" if r.exact_p is not None else ""
            lines.append(f"  {pair}: z = {r.z:.3f}, p = {r.p:.4g}{exact}")
    if rates:
        lines.extend(["", "Assistance success rates", ""])
        lines.extend(_rates_table(rates))
    text_path = path.with_suffix(".txt")
    with open(text_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")

    written = [json_path, text_path]
    if figures:
        from .plots import render_report_figures

        written.extend(render_report_figures(payload, path.parent / f"{path.name}_figures"))
    return written


def load_report(path) -> dict:
    """Parse a report back; MetricReport values round-trip exactly."""
    path = Path(path)
    if path.suffix != ".json":
        path = path.with_suffix(".json")
    with open(path, "r", encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FileFormatError(f"{path}: {exc}") from exc
    if payload.get("format") != REPORT_FORMAT:
        raise FileFormatError(f"{path}: not an {REPORT_FORMAT} file")
    if payload.get("version") != REPORT_VERSION:
        raise FileFormatError(f"{path}: unsupported report version")
    result = dict(payload)
    if "metrics" in payload:
        result["metrics"] = {
            name: MetricReport.from_dict(data)
            for name, data in payload["metrics"].items()
        }
    return result
