"""The fourteen-row results table and the formulas behind it.

Units are decimal: 1 MB is 10**6 bytes and 1 Mb is 10**6 bits.
"""
from __future__ import annotations

import bisect
from dataclasses import asdict, dataclass, fields
from typing import Any, Mapping, Optional, Sequence

from vrebench.loadgen.log import RawRunLog, Sample

SCHEMA_VERSION = "vre-stats/1"

# field name -> row label, in table order
LABELS: dict[str, str] = {
    "avg_pages_per_sec": "Average pages/s",
    "avg_requests_per_sec": "Average requests/s",
    "total_pages": "Total pages",
    "total_requests": "Total requests",
    "avg_request_response_time_sec": "Average Request response time",
    "total_request_errors": "Total request errors",
    "error_rate_percent": "Error rate",
    "avg_page_response_time_sec": "Average Page response time",
    "total_throughput_mb": "Total throughput",
    "avg_throughput_mbps": "Average throughput",
    "users_launched": "Total users launched",
    "iterations_completed": "Total iterations completed",
    "action_errors": "Total action errors",
    "alerts_total_duration_percent": "Alerts total duration",
}
FIELD_OF_LABEL = {label: name for name, label in LABELS.items()}
UNITS: dict[str, str] = {
    "avg_request_response_time_sec": "s",
    "avg_page_response_time_sec": "s",
    "total_throughput_mb": "MB",
    "avg_throughput_mbps": "Mb/s",
    "alerts_total_duration_percent": "%",
}
INTEGER_FIELDS = {"total_pages", "total_requests", "total_request_errors", "users_launched",
                  "iterations_completed", "action_errors"}


@dataclass(frozen=True)
class AlertThresholds:
    window_sec: float = 5.0
    response_time_sec: float = 1.5
    cpu_percent: float = 90.0
    step_ms: float = 100.0


@dataclass(frozen=True)
class StatsTable:
    avg_pages_per_sec: float = 0.0
    avg_requests_per_sec: float = 0.0
    total_pages: int = 0
    total_requests: int = 0
    avg_request_response_time_sec: float = 0.0
    total_request_errors: int = 0
    error_rate_percent: float = 0.0
    avg_page_response_time_sec: float = 0.0
    total_throughput_mb: float = 0.0
    avg_throughput_mbps: float = 0.0
    users_launched: int = 0
    iterations_completed: int = 0
    action_errors: int = 0
    alerts_total_duration_percent: float = 0.0
    duration_sec: float = 0.0

    @classmethod
    def from_totals(cls, *, duration_sec: float, total_pages: int = 0, total_requests: int = 0,
                    total_bytes: Optional[int] = None, total_throughput_mb: Optional[float] = None,
                    total_request_errors: int = 0, request_time_sum_sec: float = 0.0,
                    page_time_sum_sec: float = 0.0, users_launched: int = 0, iterations_completed: int = 0,
                    action_errors: int = 0, alerts_total_duration_percent: float = 0.0) -> "StatsTable":
        """Apply the rate formulas to raw totals; computeStats and the published-figure checks share this path."""
        mb = total_throughput_mb if total_throughput_mb is not None else (total_bytes or 0) / 1e6
        return cls(
            avg_pages_per_sec=_rate(total_pages, duration_sec),
            avg_requests_per_sec=_rate(total_requests, duration_sec),
            total_pages=total_pages,
            total_requests=total_requests,
            avg_request_response_time_sec=request_time_sum_sec / total_requests if total_requests else 0.0,
            total_request_errors=total_request_errors,
            error_rate_percent=total_request_errors / total_requests * 100 if total_requests else 0.0,
            avg_page_response_time_sec=page_time_sum_sec / total_pages if total_pages else 0.0,
            total_throughput_mb=mb,
            avg_throughput_mbps=_rate(mb * 8, duration_sec),
            users_launched=users_launched,
            iterations_completed=iterations_completed,
            action_errors=action_errors,
            alerts_total_duration_percent=alerts_total_duration_percent,
            duration_sec=duration_sec,
        )

    @classmethod
    def from_labels(cls, values: Mapping[str, Any], duration_sec: float = 0.0) -> "StatsTable":
        """Build a table from row labels (e.g. a column of a published results table)."""
        kwargs: dict[str, Any] = {"duration_sec": duration_sec}
        for label, value in values.items():
            try:
                name = FIELD_OF_LABEL[label]
            except KeyError:
                raise KeyError(f"unknown row label {label!r}") from None
            kwargs[name] = int(value) if name in INTEGER_FIELDS else float(value)
        return cls(**kwargs)

    def rows(self) -> list[tuple[str, float]]:
        return [(label, getattr(self, name)) for name, label in LABELS.items()]

    def by_label(self) -> dict[str, float]:
        return dict(self.rows())

    def as_dict(self) -> dict[str, Any]:
        return asdict(self)


def _rate(total: float, duration_sec: float) -> float:
    return total / duration_sec if duration_sec > 0 else 0.0


def alerts_percent(log: RawRunLog, duration_ms: float, thresholds: AlertThresholds = AlertThresholds()) -> float:
    """Share of the run's time grid at which a threshold is breached.

    A grid point breaches when the mean response time of requests finished in
    the trailing window exceeds the limit, or the last CPU sample exceeds its limit.
    """
    if duration_ms <= 0:
        return 0.0
    finished = sorted((e.end_ms, e.elapsed_ms) for e in log.requests)
    ends = [f[0] for f in finished]
    prefix = [0.0]
    for _, elapsed in finished:
        prefix.append(prefix[-1] + elapsed)
    samples: Sequence[Sample] = sorted(log.meta.samples or [], key=lambda s: s.t_ms)
    sample_times = [s.t_ms for s in samples]
    window_ms = thresholds.window_sec * 1000
    limit_ms = thresholds.response_time_sec * 1000

    points = breached = 0
    t = thresholds.step_ms
    while t <= duration_ms + 1e-9:
        points += 1
        lo = bisect.bisect_right(ends, t - window_ms)
        hi = bisect.bisect_right(ends, t)
        hot = hi > lo and (prefix[hi] - prefix[lo]) / (hi - lo) > limit_ms
        if not hot and samples:
            k = bisect.bisect_right(sample_times, t) - 1
            hot = k >= 0 and samples[k].cpu_percent > thresholds.cpu_percent
        breached += hot
        t += thresholds.step_ms
    return breached / points * 100 if points else 0.0


def compute_stats(log: RawRunLog, thresholds: AlertThresholds = AlertThresholds()) -> StatsTable:
    """The results table for one run; a pure function of the log."""
    requests = log.requests
    pages = log.pages
    duration_sec = log.meta.duration_sec
    return StatsTable.from_totals(
        duration_sec=duration_sec,
        total_pages=len(pages),
        total_requests=len(requests),
        total_bytes=sum(e.bytes_down for e in requests),
        total_request_errors=sum(1 for e in requests if e.error_flag),
        request_time_sum_sec=sum(e.elapsed_ms for e in requests) / 1000,
        page_time_sum_sec=sum(e.elapsed_ms for e in pages) / 1000,
        users_launched=log.meta.users_launched,
        iterations_completed=log.meta.iterations_completed,
        action_errors=log.meta.action_errors,
        alerts_total_duration_percent=alerts_percent(log, duration_sec * 1000, thresholds),
    )


def field_names() -> list[str]:
    return [f.name for f in fields(StatsTable)]
