"""Correlation tables in Markdown, CSV and an aligned plain-text table."""

from __future__ import annotations

import csv
import io
from decimal import ROUND_HALF_UP, Decimal
from enum import Enum
from typing import Sequence

from gveval.errors import EmptyReport
from gveval.stats import CorrelationEntry


class ReportStyle(str, Enum):
    MARKDOWN = "markdown"
    CSV = "csv"
    TABLE = "table"


def percent(value: float, places: int = 1) -> str:
    """``value`` x 100, rounded half-up on its decimal repr (0.60385 -> "60.4")."""
    quantum = Decimal(1).scaleb(-places)
    return str((Decimal(repr(float(value))) * 100).quantize(quantum, rounding=ROUND_HALF_UP))


def _sorted(entries: Sequence[CorrelationEntry]) -> list[CorrelationEntry]:
    return sorted(entries, key=lambda e: (e.dataset, e.metric, e.projection))


def emit_report(entries: Sequence[CorrelationEntry], style: ReportStyle | str = ReportStyle.TABLE) -> str:
    if not entries:
        raise EmptyReport("no correlation entries to report")
    style = ReportStyle(style)
    rows = _sorted(entries)
    if style is ReportStyle.CSV:
        buf = io.StringIO()
        writer = csv.writer(buf)  # RFC 4180: CRLF, minimal quoting
        writer.writerow(["dataset", "metric", "projection", "n", "tau_b", "tau_c"])
        for e in rows:
            writer.writerow([e.dataset, e.metric, e.projection, e.n, repr(e.tau_b), repr(e.tau_c)])
        return buf.getvalue()
    if style is ReportStyle.MARKDOWN:
        out = ["| Dataset | Metric | n | Kendall tau_b | Kendall tau_c |", "|---|---|---:|---:|---:|"]
        for e in rows:
            out.append(f"| {e.dataset} | {e.metric} | {e.n} | {percent(e.tau_b, 3)} | {percent(e.tau_c, 3)} |")
        return "\n".join(out) + "\n"
    return _aligned_table(rows)


def _aligned_table(rows: list[CorrelationEntry]) -> str:
    datasets = sorted({e.dataset for e in rows})
    metrics = sorted({e.metric for e in rows})
    cell = {(e.dataset, e.metric): e for e in rows}
    header1 = ["Metric"] + [d or "-" for d in datasets for _ in (0, 1)]
    header2 = [""] + ["tau_b", "tau_c"] * len(datasets)
    body = []
    for m in metrics:
        line = [m]
        for d in datasets:
            e = cell.get((d, m))
            line += [percent(e.tau_b), percent(e.tau_c)] if e else ["-", "-"]
        body.append(line)
    table = [header1, header2] + body
    widths = [max(len(r[i]) for r in table) for i in range(len(header1))]
    lines = []
    for r in table:
        first = r[0].ljust(widths[0])
        rest = [r[i].rjust(widths[i]) for i in range(1, len(r))]
        lines.append("  ".join([first] + rest).rstrip())
    return "\n".join(lines) + "\n"
