from __future__ import annotations

import logging
import threading
import time
from typing import Optional

from vrebench.loadgen.log import Sample

logger = logging.getLogger(__name__)


class SamplerUnavailable(RuntimeError):
    pass


class ResourceSampler:
    """Samples host CPU and memory on a background thread while a run is in progress."""

    def __init__(self, interval_ms: float = 250.0, clock_origin: Optional[float] = None) -> None:
        try:
            import psutil
        except ImportError as exc:
            raise SamplerUnavailable("psutil is not installed") from exc
        self._psutil = psutil
        self.interval_ms = interval_ms
        self.origin = clock_origin if clock_origin is not None else time.perf_counter()
        self.samples: list[Sample] = []
        self._stop = threading.Event()
        self._thread: Optional[threading.Thread] = None

    def _take(self) -> None:
        self.samples.append(Sample(
            t_ms=(time.perf_counter() - self.origin) * 1000,
            cpu_percent=float(self._psutil.cpu_percent(interval=None)),
            mem_percent=float(self._psutil.virtual_memory().percent),
        ))

    def _loop(self) -> None:
        while not self._stop.wait(self.interval_ms / 1000):
            try:
                self._take()
            except Exception as exc:  # keep the run going without samples
                logger.warning("resource sampling stopped: %s", exc)
                return

    def start(self) -> "ResourceSampler":
        try:
            self._psutil.cpu_percent(interval=None)  # primes the counter
        except Exception as exc:
            raise SamplerUnavailable(str(exc)) from exc
        self._thread = threading.Thread(target=self._loop, name="vre-sampler", daemon=True)
        self._thread.start()
        return self

    def stop(self) -> list[Sample]:
        self._stop.set()
        if self._thread is not None:
            self._thread.join()
        if not self.samples:
            try:
                self._take()
            except Exception:
                pass
        return self.samples


def summarize(samples: list[Sample]) -> dict[str, dict[str, float]]:
    out = {}
    for key, attr in (("cpuPercent", "cpu_percent"), ("memPercent", "mem_percent")):
        values = [getattr(s, attr) for s in samples]
        if values:
            out[key] = {"min": min(values), "avg": sum(values) / len(values), "max": max(values)}
    return out
