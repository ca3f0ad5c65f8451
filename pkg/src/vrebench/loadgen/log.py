from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterator, Optional

LOG_SCHEMA = "vre-runlog/1"


@dataclass
class Event:
    user_idx: int
    kind: str  # "page" | "request"
    method: str
    path: str
    status: int
    bytes_down: int
    bytes_up: int
    elapsed_ms: float
    ttfb_ms: float
    error_flag: bool
    start_ms: float
    label: str = ""
    page_seq: Optional[int] = None  # page this request belongs to
    requests: int = 0  # page events: how many requests it aggregates

    @property
    def end_ms(self) -> float:
        return self.start_ms + self.elapsed_ms

    def to_json(self) -> dict[str, Any]:
        return {
            "userIdx": self.user_idx,
            "kind": self.kind,
            "method": self.method,
            "path": self.path,
            "status": self.status,
            "bytesDown": self.bytes_down,
            "bytesUp": self.bytes_up,
            "elapsedMs": round(self.elapsed_ms, 3),
            "ttfbMs": round(self.ttfb_ms, 3),
            "errorFlag": self.error_flag,
            "startMs": round(self.start_ms, 3),
            "label": self.label,
            "pageSeq": self.page_seq,
            "requests": self.requests,
        }

    @classmethod
    def from_json(cls, d: dict[str, Any]) -> "Event":
        return cls(
            user_idx=d["userIdx"], kind=d["kind"], method=d["method"], path=d["path"], status=d["status"],
            bytes_down=d["bytesDown"], bytes_up=d["bytesUp"], elapsed_ms=d["elapsedMs"], ttfb_ms=d["ttfbMs"],
            error_flag=d["errorFlag"], start_ms=d["startMs"], label=d.get("label", ""),
            page_seq=d.get("pageSeq"), requests=d.get("requests", 0),
        )


@dataclass
class Sample:
    t_ms: float
    cpu_percent: float
    mem_percent: float


@dataclass
class RunMeta:
    scenario: str = ""
    backend: str = ""
    mode: str = ""
    start_wall: float = 0.0
    end_wall: float = 0.0
    users_launched: int = 0
    iterations_completed: int = 0
    action_errors: int = 0
    assignments: dict[str, int] = field(default_factory=dict)
    samples: Optional[list[Sample]] = None
    resources: Optional[dict[str, dict[str, float]]] = None

    @property
    def duration_sec(self) -> float:
        return max(self.end_wall - self.start_wall, 0.0)


@dataclass
class RawRunLog:
    meta: RunMeta = field(default_factory=RunMeta)
    events: list[Event] = field(default_factory=list)

    @property
    def requests(self) -> list[Event]:
        return [e for e in self.events if e.kind == "request"]

    @property
    def pages(self) -> list[Event]:
        return [e for e in self.events if e.kind == "page"]

    def by_user(self) -> dict[int, list[Event]]:
        out: dict[int, list[Event]] = {}
        for e in self.events:
            out.setdefault(e.user_idx, []).append(e)
        return out

    def lines(self) -> Iterator[str]:
        meta = asdict(self.meta)
        yield json.dumps({"schema": LOG_SCHEMA, "meta": meta}, sort_keys=True)
        for event in self.events:
            yield json.dumps(event.to_json(), sort_keys=True)

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\n".join(self.lines()) + "\n")
        return path

    @classmethod
    def load(cls, path: str | Path) -> "RawRunLog":
        lines = Path(path).read_text().splitlines()
        head = json.loads(lines[0])
        if head.get("schema") != LOG_SCHEMA:
            raise ValueError(f"{path}: not a run log ({head.get('schema')!r})")
        meta = dict(head["meta"])
        samples = meta.pop("samples", None)
        run_meta = RunMeta(**meta)
        if samples is not None:
            run_meta.samples = [Sample(**s) for s in samples]
        return cls(run_meta, [Event.from_json(json.loads(line)) for line in lines[1:] if line.strip()])
