"""Plain text, CSV and JSON renderings of results tables."""
from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Any, Optional, Union

from vrebench.metrics.compare import ComparisonRow, ComparisonTable, format_percent, percent_diff
from vrebench.metrics.decompose import Decomposition
from vrebench.metrics.stats import FIELD_OF_LABEL, INTEGER_FIELDS, LABELS, SCHEMA_VERSION, UNITS, StatsTable

FORMATS = ("txt", "csv", "json")


class UnwritablePath(OSError):
    pass


class SchemaMismatch(ValueError):
    pass


def format_value(label: str, value: float) -> str:
    name = FIELD_OF_LABEL[label]
    if name in INTEGER_FIELDS:
        text = str(int(value))
    elif name in ("avg_request_response_time_sec", "avg_page_response_time_sec"):
        text = f"{value:.3f}"
    elif name in ("total_throughput_mb", "avg_throughput_mbps"):
        text = f"{value:.2f}"
    else:
        text = f"{value:.1f}"
    unit = UNITS.get(name)
    return f"{text} {unit}" if unit else text


def _table(header: list[str], rows: list[list[str]]) -> str:
    widths = [max(len(r[i]) for r in [header, *rows]) for i in range(len(header))]
    lines = []
    for r in [header, *rows]:
        cells = [r[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(r[1:], widths[1:])]
        lines.append("  ".join(cells).rstrip())
    return "\n".join(lines) + "\n"


def _csv(rows: list[list[Any]]) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


# -- stats ----------------------------------------------------------------

def render_stats(stats: StatsTable, fmt: str = "txt", title: str = "") -> str:
    if fmt == "txt":
        body = _table(["Statistic", "Value"], [[label, format_value(label, v)] for label, v in stats.rows()])
        head = f"{title}\n" if title else ""
        return head + body + f"Duration: {stats.duration_sec:.3f} s\n"
    if fmt == "csv":
        labels = list(LABELS.values())
        return _csv([labels, [repr(v) for _, v in stats.rows()]])
    if fmt == "json":
        return json.dumps({
            "schema": SCHEMA_VERSION,
            "kind": "stats",
            "title": title,
            "durationSec": stats.duration_sec,
            "rows": {label: v for label, v in stats.rows()},
        }, indent=2) + "\n"
    raise ValueError(f"unknown format {fmt!r}; expected one of {FORMATS}")


def parse_stats(text: str, fmt: str = "json") -> StatsTable:
    if fmt == "json":
        doc = json.loads(text)
        if doc.get("schema") != SCHEMA_VERSION:
            raise SchemaMismatch(f"report schema {doc.get('schema')!r} does not match {SCHEMA_VERSION!r}")
        if doc.get("kind") != "stats":
            raise SchemaMismatch("file holds a comparison, not a single run's statistics")
        return StatsTable.from_labels(doc["rows"], float(doc.get("durationSec", 0.0)))
    if fmt == "csv":
        rows = list(csv.reader(io.StringIO(text)))
        if len(rows) < 2 or rows[0] != list(LABELS.values()):
            raise SchemaMismatch("CSV header does not match the statistics labels")
        return StatsTable.from_labels({label: float(v) for label, v in zip(rows[0], rows[1])})
    raise ValueError(f"cannot parse stats from {fmt!r}")


# -- comparison -----------------------------------------------------------

def render_comparison(table: ComparisonTable, fmt: str = "txt", title: str = "") -> str:
    if fmt == "txt":
        rows = [[r.label, format_value(r.label, r.value_a), format_value(r.label, r.value_b), r.rendered]
                for r in table.rows]
        head = f"{title}\n" if title else ""
        return head + _table(["Statistic", table.name_a, table.name_b, "%"], rows)
    if fmt == "csv":
        labels = [r.label for r in table.rows]
        return _csv([
            ["Run", *labels],
            [table.name_a, *(repr(r.value_a) for r in table.rows)],
            [table.name_b, *(repr(r.value_b) for r in table.rows)],
            ["%", *(r.rendered for r in table.rows)],
        ])
    if fmt == "json":
        return json.dumps({
            "schema": SCHEMA_VERSION,
            "kind": "comparison",
            "title": title,
            "names": [table.name_a, table.name_b],
            "rows": [{"label": r.label, "a": r.value_a, "b": r.value_b, "percent": r.percent, "rendered": r.rendered}
                     for r in table.rows],
        }, indent=2) + "\n"
    raise ValueError(f"unknown format {fmt!r}; expected one of {FORMATS}")


def parse_comparison(text: str) -> ComparisonTable:
    doc = json.loads(text)
    if doc.get("schema") != SCHEMA_VERSION or doc.get("kind") != "comparison":
        raise SchemaMismatch("not a comparison report of the current schema")
    rows = tuple(ComparisonRow(r["label"], r["a"], r["b"], percent_diff(r["a"], r["b"])) for r in doc["rows"])
    name_a, name_b = doc.get("names", ["A", "B"])
    return ComparisonTable(rows, name_a, name_b)


# -- time decomposition ---------------------------------------------------

def render_decomposition(result: Decomposition, fmt: str = "txt") -> str:
    header = ["Operation", "Total time (ms)", "Client time (ms)", "Server time (ms)"]
    rows = [[label, f"{d.total_ms:.3f}", f"{d.client_ms:.3f}", f"{d.server_ms:.3f}"]
            for label, d in result.operations.items()]
    if fmt == "txt":
        text = _table(header, rows)
        if result.unmatched:
            text += f"Unmatched requests: {len(result.unmatched)}\n"
            text += "".join(f"  {u.method} {u.path}\n" for u in result.unmatched)
        return text
    if fmt == "csv":
        return _csv([header, *rows])
    if fmt == "json":
        return json.dumps({
            "schema": SCHEMA_VERSION,
            "kind": "decomposition",
            "operations": {label: {"totalMs": d.total_ms, "clientMs": d.client_ms, "serverMs": d.server_ms,
                                   "ttfbMs": d.ttfb_ms, "count": d.count}
                           for label, d in result.operations.items()},
            "unmatched": [{"method": u.method, "path": u.path} for u in result.unmatched],
        }, indent=2) + "\n"
    raise ValueError(f"unknown format {fmt!r}; expected one of {FORMATS}")


# -- files ----------------------------------------------------------------

def _format_of(path: Path, fmt: Optional[str]) -> str:
    fmt = fmt or path.suffix.lstrip(".").lower() or "txt"
    if fmt not in FORMATS:
        raise ValueError(f"unknown report format {fmt!r}; expected one of {FORMATS}")
    return fmt


def write_report(obj: Union[StatsTable, ComparisonTable, Decomposition], path: Union[str, Path],
                 fmt: Optional[str] = None, title: str = "") -> Path:
    path = Path(path)
    fmt = _format_of(path, fmt)
    if isinstance(obj, StatsTable):
        text = render_stats(obj, fmt, title)
    elif isinstance(obj, ComparisonTable):
        text = render_comparison(obj, fmt, title)
    elif isinstance(obj, Decomposition):
        text = render_decomposition(obj, fmt)
    else:
        raise TypeError(f"cannot render {type(obj).__name__}")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as exc:
        raise UnwritablePath(f"cannot write {path}: {exc}") from exc
    return path


def load_stats(path: Union[str, Path]) -> StatsTable:
    path = Path(path)
    fmt = _format_of(path, None)
    if fmt == "txt":
        raise SchemaMismatch(f"{path}: text reports are for reading; load the .json or .csv file")
    return parse_stats(path.read_text(), fmt)


__all__ = [
    "FORMATS",
    "SchemaMismatch",
    "UnwritablePath",
    "format_percent",
    "format_value",
    "load_stats",
    "parse_comparison",
    "parse_stats",
    "render_comparison",
    "render_decomposition",
    "render_stats",
    "write_report",
]
