"""Split round-trip time into client and server shares using the service access log."""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Optional, Union

from vrebench.loadgen.log import Event

_ACCESS_LINE = re.compile(r"^(?P<method>[A-Z]+) (?P<path>\S+) (?P<status>\d{3}) (?P<ms>\d+(?:\.\d+)?) ms - (?P<bytes>\d+|-)$")


class UnmatchedRequests(LookupError):
    def __init__(self, unmatched: list["ClientRequest"]):
        super().__init__(f"{len(unmatched)} client requests have no access-log line")
        self.unmatched = unmatched


@dataclass(frozen=True)
class AccessRecord:
    method: str
    path: str
    status: int
    elapsed_ms: float
    nbytes: Optional[int]


@dataclass(frozen=True)
class ClientRequest:
    method: str
    path: str
    total_ms: float
    label: str = ""
    ttfb_ms: float = 0.0


@dataclass(frozen=True)
class TimeDecomposition:
    total_ms: float
    client_ms: float
    server_ms: float
    ttfb_ms: float = 0.0
    count: int = 1


@dataclass
class Decomposition:
    operations: dict[str, TimeDecomposition] = field(default_factory=dict)
    matched: list[tuple[ClientRequest, TimeDecomposition]] = field(default_factory=list)
    unmatched: list[ClientRequest] = field(default_factory=list)


def parse_access_line(line: str) -> Optional[AccessRecord]:
    m = _ACCESS_LINE.match(line.strip())
    if m is None:
        return None
    nbytes = m["bytes"]
    return AccessRecord(m["method"], m["path"], int(m["status"]), float(m["ms"]),
                        None if nbytes == "-" else int(nbytes))


def parse_access_log(lines: Iterable[str]) -> list[AccessRecord]:
    return [r for r in map(parse_access_line, lines) if r is not None]


def _split(total_ms: float, server_ms: float, ttfb_ms: float) -> TimeDecomposition:
    total = round(total_ms, 3)
    server = round(server_ms, 3)
    return TimeDecomposition(total, round(total - server, 3), server, round(ttfb_ms, 3))


def decompose(client: Iterable[Union[ClientRequest, Event]], server_log: Iterable[Union[str, AccessRecord]],
              *, strict: bool = False) -> Decomposition:
    """Match client requests to access-log lines by method, path and ordinal.

    The n-th client request for a (method, path) pair is matched with the n-th
    server line for that pair. Unmatched client requests are listed and left
    out of the per-operation means. Run-log events are taken in completion
    order, which is the order the service writes its log lines.
    """
    items = list(client)
    if items and all(isinstance(i, Event) for i in items):
        items.sort(key=lambda e: e.end_ms)
    records = [r if isinstance(r, AccessRecord) else parse_access_line(r) for r in server_log]
    queues: dict[tuple[str, str], list[AccessRecord]] = {}
    for r in records:
        if r is not None:
            queues.setdefault((r.method, r.path), []).append(r)
    cursor: dict[tuple[str, str], int] = {}

    result = Decomposition()
    sums: dict[str, list[float]] = {}
    for item in items:
        if isinstance(item, Event):
            if item.kind != "request" or item.status == 0:
                continue
            item = ClientRequest(item.method, item.path, item.elapsed_ms, item.label, item.ttfb_ms)
        key = (item.method, item.path)
        n = cursor.get(key, 0)
        queue = queues.get(key, [])
        if n >= len(queue):
            result.unmatched.append(item)
            continue
        cursor[key] = n + 1
        split = _split(item.total_ms, queue[n].elapsed_ms, item.ttfb_ms)
        result.matched.append((item, split))
        acc = sums.setdefault(item.label or f"{item.method} {item.path}", [0.0, 0.0, 0.0, 0.0, 0])
        acc[0] += split.total_ms
        acc[1] += split.client_ms
        acc[2] += split.server_ms
        acc[3] += split.ttfb_ms
        acc[4] += 1
    for label, (total, client_ms, server, ttfb, count) in sums.items():
        result.operations[label] = TimeDecomposition(
            round(total / count, 3), round(client_ms / count, 3), round(server / count, 3), round(ttfb / count, 3),
            int(count),
        )
    if strict and result.unmatched:
        raise UnmatchedRequests(result.unmatched)
    return result
