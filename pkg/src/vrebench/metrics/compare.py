from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from vrebench.metrics.stats import StatsTable


def percent_diff(a: float, b: float) -> Optional[float]:
    """(B - A) / A * 100; None when A is zero and B is not."""
    if a == b:
        return 0.0
    if a == 0:
        return None
    return (b - a) / a * 100


def format_percent(value: Optional[float], identical: bool = False) -> str:
    if value is None:
        return "n/a"
    if identical:
        return "+0%"
    return f"{value:+.1f}%"


@dataclass(frozen=True)
class ComparisonRow:
    label: str
    value_a: float
    value_b: float
    percent: Optional[float]

    @property
    def rendered(self) -> str:
        return format_percent(self.percent, self.value_a == self.value_b)


@dataclass(frozen=True)
class ComparisonTable:
    rows: tuple[ComparisonRow, ...]
    name_a: str = "A"
    name_b: str = "B"

    def row(self, label: str) -> ComparisonRow:
        for r in self.rows:
            if r.label == label:
                return r
        raise KeyError(label)


def compare(a: StatsTable, b: StatsTable, name_a: str = "A", name_b: str = "B") -> ComparisonTable:
    rows = tuple(
        ComparisonRow(label, va, vb, percent_diff(va, vb))
        for (label, va), (_, vb) in zip(a.rows(), b.rows())
    )
    return ComparisonTable(rows, name_a, name_b)
