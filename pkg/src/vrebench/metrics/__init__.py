from vrebench.metrics.compare import ComparisonRow, ComparisonTable, compare, format_percent, percent_diff
from vrebench.metrics.decompose import (
    AccessRecord,
    ClientRequest,
    Decomposition,
    TimeDecomposition,
    UnmatchedRequests,
    decompose,
    parse_access_line,
    parse_access_log,
)
from vrebench.metrics.report import (
    SchemaMismatch,
    UnwritablePath,
    load_stats,
    parse_comparison,
    parse_stats,
    render_comparison,
    render_decomposition,
    render_stats,
    write_report,
)
from vrebench.metrics.stats import LABELS, SCHEMA_VERSION, AlertThresholds, StatsTable, alerts_percent, compute_stats

__all__ = [
    "LABELS",
    "SCHEMA_VERSION",
    "AccessRecord",
    "AlertThresholds",
    "ClientRequest",
    "ComparisonRow",
    "ComparisonTable",
    "Decomposition",
    "SchemaMismatch",
    "StatsTable",
    "TimeDecomposition",
    "UnmatchedRequests",
    "UnwritablePath",
    "alerts_percent",
    "compare",
    "compute_stats",
    "decompose",
    "format_percent",
    "load_stats",
    "parse_access_line",
    "parse_access_log",
    "parse_comparison",
    "parse_stats",
    "percent_diff",
    "render_comparison",
    "render_decomposition",
    "render_stats",
    "write_report",
]
