"""Executes scenarios: one thread per virtual user, one persistent connection each.

Byte counts are computed from the exact request and response framing so that
the throughput figures do not depend on the HTTP library's internals.
"""
from __future__ import annotations

import http.client
import json
import logging
import secrets
import threading
import time
import uuid
from dataclasses import dataclass
from typing import Any, Mapping, Optional
from urllib.parse import urlsplit

from vrebench.loadgen.log import Event, RawRunLog, RunMeta
from vrebench.loadgen.sampler import ResourceSampler, SamplerUnavailable, summarize
from vrebench.loadgen.scenario import Scenario
from vrebench.loadgen.scripts import (
    Action,
    Login,
    Logout,
    Loop,
    Multipart,
    PageLoad,
    Request,
    TemplateError,
    Think,
    VirtualUserScript,
    builtin,
    extract,
    refresh_mode,
    render,
    render_value,
)
from vrebench.seed import PROFILES, SeedProfile

logger = logging.getLogger(__name__)

COOKIE_NAME = "vre.sid"
DEFAULT_SHELL = ("/app/index.html", "/app/app.js", "/app/vendor.js", "/app/app.css")
# setup traffic carries this marker so it never collides with scripted paths in the access log
PREFLIGHT = "?preflight=1"


class TargetUnreachable(ConnectionError):
    pass


class SeedMissing(RuntimeError):
    pass


class ActionError(RuntimeError):
    """A script-level failure; aborts the current iteration."""


@dataclass
class Exchange:
    status: int
    headers: list[tuple[str, str]]
    body: bytes
    bytes_up: int
    bytes_down: int
    start: float
    ttfb_ms: float
    elapsed_ms: float

    def json(self) -> Any:
        return json.loads(self.body) if self.body else None

    def header(self, name: str) -> Optional[str]:
        for k, v in self.headers:
            if k.lower() == name.lower():
                return v
        return None


def encode_multipart(part: Multipart, fields: Mapping[str, str]) -> tuple[bytes, str]:
    boundary = "----vre" + uuid.UUID(int=len(part.filename) + part.size).hex
    chunks = []
    for name, value in fields.items():
        chunks.append(
            f'--{boundary}\r\nContent-Disposition: form-data; name="{name}"\r\n\r\n{value}\r\n'.encode()
        )
    chunks.append(
        f'--{boundary}\r\nContent-Disposition: form-data; name="file"; filename="{part.filename}"\r\n'
        f"Content-Type: {part.media_type}\r\n\r\n".encode()
    )
    chunks.append(b"\0" * part.size)
    chunks.append(f"\r\n--{boundary}--\r\n".encode())
    return b"".join(chunks), f"multipart/form-data; boundary={boundary}"


class HttpClient:
    """Keep-alive client with a cookie jar and an entity-tag cache for the shell files."""

    def __init__(self, base_url: str, timeout: float = 120.0) -> None:
        parts = urlsplit(base_url)
        if parts.scheme != "http" or not parts.hostname:
            raise ValueError(f"expected an http:// base URL, got {base_url!r}")
        self.host = parts.hostname
        self.port = parts.port or 80
        self.host_header = parts.netloc
        self.timeout = timeout
        self.cookies: dict[str, str] = {}
        self.etags: dict[str, str] = {}
        self._conn: Optional[http.client.HTTPConnection] = None

    def close(self) -> None:
        if self._conn is not None:
            self._conn.close()
            self._conn = None

    def request(self, method: str, path: str, body: bytes = b"", content_type: Optional[str] = None) -> Exchange:
        headers = [("Host", self.host_header), ("User-Agent", "vre-loadgen/1"), ("Accept", "*/*")]
        if self.cookies:
            headers.append(("Cookie", "; ".join(f"{k}={v}" for k, v in self.cookies.items())))
        clean = path.split("?", 1)[0]
        if method == "GET" and clean in self.etags:
            headers.append(("If-None-Match", self.etags[clean]))
        if content_type:
            headers.append(("Content-Type", content_type))
        if body or method in ("POST", "PUT", "PATCH"):
            headers.append(("Content-Length", str(len(body))))
        bytes_up = len(f"{method} {path} HTTP/1.1\r\n") + sum(len(k) + len(v) + 4 for k, v in headers) + 2 + len(body)

        start = time.perf_counter()
        if self._conn is None:
            self._conn = http.client.HTTPConnection(self.host, self.port, timeout=self.timeout)
        conn = self._conn
        try:
            conn.putrequest(method, path, skip_host=True, skip_accept_encoding=True)
            for k, v in headers:
                conn.putheader(k, v)
            conn.endheaders(body or None)
            response = conn.getresponse()
            ttfb = time.perf_counter()
            payload = response.read()
        except (OSError, http.client.HTTPException):
            self.close()
            raise
        end = time.perf_counter()
        response_headers = response.getheaders()
        bytes_down = (
            len(f"HTTP/1.1 {response.status} {response.reason}\r\n")
            + sum(len(k) + len(v) + 4 for k, v in response_headers)
            + 2
            + len(payload)
        )
        if response.will_close:
            self.close()
        exchange = Exchange(response.status, response_headers, payload, bytes_up, bytes_down, start,
                            (ttfb - start) * 1000, (end - start) * 1000)
        self._absorb(clean, exchange)
        return exchange

    def _absorb(self, clean_path: str, exchange: Exchange) -> None:
        for k, v in exchange.headers:
            if k.lower() == "set-cookie":
                pair = v.split(";", 1)[0]
                name, _, value = pair.partition("=")
                self.cookies[name.strip()] = value.strip()
        if exchange.status == 200 and clean_path.startswith("/app/"):
            etag = exchange.header("ETag")
            if etag:
                self.etags[clean_path] = etag


class _VirtualUser:
    def __init__(self, idx: int, script: VirtualUserScript, scenario: Scenario, base_url: str,
                 run_tag: str, shell_paths: tuple[str, ...], etags: Mapping[str, str], timeout: float) -> None:
        self.idx = idx
        self.script = script
        self.scenario = scenario
        self.run_tag = run_tag
        self.shell_paths = shell_paths
        self.client = HttpClient(base_url, timeout)
        self.client.etags.update(etags)
        self.events: list[Event] = []
        self.iterations_completed = 0
        self.action_errors = 0
        self.origin = 0.0
        self._page_seq = 0

    def run(self, barrier: threading.Barrier, origin_box: list[float]) -> None:
        try:
            barrier.wait()
        except threading.BrokenBarrierError:
            return
        self.origin = origin_box[0]
        try:
            for iteration in range(self.scenario.iterations_per_user):
                variables: dict[str, Any] = {"user": self.idx, "run": self.run_tag, "iteration": iteration}
                try:
                    self._run_actions(self.script.actions, variables)
                    self.iterations_completed += 1
                except ActionError as exc:
                    self.action_errors += 1
                    logger.info("user %d (%s) iteration %d aborted: %s", self.idx, self.script.name, iteration, exc)
        finally:
            self.client.close()

    def _run_actions(self, actions: tuple[Action, ...], variables: dict[str, Any]) -> None:
        for action in actions:
            if isinstance(action, Loop):
                for i in range(action.count):
                    variables[action.var] = i
                    self._run_actions(action.actions, variables)
            elif isinstance(action, PageLoad):
                self._page(action, variables)
                if self.scenario.think_ms:
                    time.sleep(self.scenario.think_ms / 1000)
            elif isinstance(action, Request):
                self._request(action, variables, None)
            elif isinstance(action, Login):
                try:
                    body = {"username": render(action.username, variables), "password": render(action.password, variables)}
                except TemplateError as exc:
                    raise ActionError(str(exc)) from exc
                event, _ = self._exchange("POST", "/api/auth/login", body, None, "Login")
                if event.status != 200:
                    raise ActionError(f"login as {body['username']} failed with {event.status}")
            elif isinstance(action, Logout):
                self._exchange("POST", "/api/auth/logout", {}, None, "Logout")
                self.client.cookies.pop(COOKIE_NAME, None)
            elif isinstance(action, Think):
                time.sleep(action.ms / 1000)
            else:
                raise TypeError(f"unknown action {action!r}")

    def _page(self, page: PageLoad, variables: dict[str, Any]) -> None:
        if not page.shell and not page.data:
            return
        seq = self._page_seq
        self._page_seq += 1
        start = time.perf_counter()
        slot = len(self.events)
        placeholder = Event(self.idx, "page", "GET", page.name, 0, 0, 0, 0.0, 0.0, False,
                            (start - self.origin) * 1000, label=page.name, page_seq=seq)
        self.events.append(placeholder)
        try:
            if page.shell:
                for path in self.shell_paths:
                    self._exchange("GET", path, None, seq, page.name)
            for request in page.data:
                self._request(request, variables, seq)
        finally:
            mine = [e for e in self.events[slot + 1:] if e.page_seq == seq]
            placeholder.elapsed_ms = (time.perf_counter() - start) * 1000
            placeholder.ttfb_ms = mine[0].ttfb_ms if mine else 0.0
            placeholder.bytes_down = sum(e.bytes_down for e in mine)
            placeholder.bytes_up = sum(e.bytes_up for e in mine)
            placeholder.requests = len(mine)
            failed = [e.status for e in mine if e.error_flag]
            placeholder.status = failed[0] if failed else 200
            if not mine:
                self.events.remove(placeholder)

    def _request(self, request: Request, variables: dict[str, Any], page_seq: Optional[int]) -> None:
        try:
            path = render(request.path, variables)
            body = request.body
            if isinstance(body, Multipart):
                body = (body, {k: render(v, variables) for k, v in body.fields.items()})
            elif body is not None:
                body = render_value(body, variables)
        except TemplateError as exc:
            raise ActionError(str(exc)) from exc
        event, exchange = self._exchange(request.method, path, body, page_seq, request.label)
        if exchange is None or event.error_flag:
            if request.required:
                raise ActionError(f"{request.method} {path} returned {event.status}")
            return
        for var, spec in request.extract.items():
            try:
                variables[var] = extract(exchange.json(), spec)
            except (TemplateError, ValueError) as exc:
                raise ActionError(f"extracting {var}: {exc}") from exc

    def _exchange(self, method: str, path: str, body: Any, page_seq: Optional[int],
                  label: str) -> tuple[Event, Optional[Exchange]]:
        content_type = None
        if isinstance(body, tuple):
            payload, content_type = encode_multipart(*body)
        elif body is None:
            payload = b""
        else:
            payload = json.dumps(body, separators=(",", ":")).encode()
            content_type = "application/json"
        started = time.perf_counter()
        try:
            exchange = self.client.request(method, path, payload, content_type)
        except (OSError, http.client.HTTPException) as exc:
            logger.warning("user %d: %s %s failed: %s", self.idx, method, path, exc)
            event = Event(self.idx, "request", method, path, 0, 0, 0, (time.perf_counter() - started) * 1000,
                          0.0, True, (started - self.origin) * 1000, label, page_seq)
            self.events.append(event)
            return event, None
        event = Event(
            user_idx=self.idx, kind="request", method=method, path=path, status=exchange.status,
            bytes_down=exchange.bytes_down, bytes_up=exchange.bytes_up, elapsed_ms=exchange.elapsed_ms,
            ttfb_ms=exchange.ttfb_ms, error_flag=exchange.status >= 400, start_ms=(exchange.start - self.origin) * 1000,
            label=label, page_seq=page_seq,
        )
        self.events.append(event)
        return event, exchange


def _preflight(base_url: str, scripts: Mapping[str, VirtualUserScript], warm_cache: bool,
               timeout: float) -> tuple[tuple[str, ...], dict[str, str]]:
    """Checks the target and its seed data; returns the shell file list and warmed entity tags."""
    client = HttpClient(base_url, timeout)
    try:
        try:
            manifest = client.request("GET", "/app/manifest.json" + PREFLIGHT)
        except OSError as exc:
            raise TargetUnreachable(f"cannot reach {base_url}: {exc}") from exc
        shell = tuple(manifest.json()["files"]) if manifest.status == 200 else DEFAULT_SHELL
        needs: dict[str, int] = {}
        for script in scripts.values():
            for segment, count in script.requires.items():
                needs[segment] = max(needs.get(segment, 0), count)
        for segment, count in sorted(needs.items()):
            found = client.request("GET", f"/api/{segment}{PREFLIGHT}")
            if found.status == 401:
                logger.warning("cannot check seed data for %s: reads require login", segment)
                continue
            have = len(found.json() or []) if found.status == 200 else 0
            if have < count:
                raise SeedMissing(f"need at least {count} {segment} records, found {have}; run the seed command first")
        etags: dict[str, str] = {}
        if warm_cache:
            for path in shell:
                client.request("GET", path + PREFLIGHT)
            etags = dict(client.etags)
        return shell, etags
    finally:
        client.close()


def build_scripts(scenario: Scenario, profile: SeedProfile = PROFILES["default"],
                  overrides: Optional[Mapping[str, VirtualUserScript]] = None) -> dict[str, VirtualUserScript]:
    scripts = {}
    for name, _ in scenario.population.mix:
        if overrides and name in overrides:
            script = overrides[name]
        elif scenario.loop_count is not None and name != "Operations":
            script = builtin(name, profile, count=scenario.loop_count)
        else:
            script = builtin(name, profile)
        scripts[name] = refresh_mode(script, scenario.mode)
    return scripts


def run_scenario(scenario: Scenario, base_url: str, *, profile: SeedProfile = PROFILES["default"],
                 scripts: Optional[Mapping[str, VirtualUserScript]] = None, backend: str = "",
                 warm_cache: bool = True, sample_interval_ms: Optional[float] = 250.0,
                 timeout: float = 120.0, run_tag: Optional[str] = None) -> RawRunLog:
    """Launch exactly ``concurrent_users`` workers and collect their events."""
    resolved = build_scripts(scenario, profile, scripts)
    assignments = scenario.population.assign(scenario.concurrent_users)
    shell, etags = _preflight(base_url, {n: resolved[n] for n in set(assignments)}, warm_cache, timeout)
    run_tag = run_tag or secrets.token_hex(3)

    users = [
        _VirtualUser(i, resolved[name], scenario, base_url, run_tag, shell, etags, timeout)
        for i, name in enumerate(assignments)
    ]
    origin_box = [0.0]
    barrier = threading.Barrier(len(users) + 1) if users else None
    threads = [threading.Thread(target=u.run, args=(barrier, origin_box), name=f"vu-{u.idx}", daemon=True)
               for u in users]
    for t in threads:
        t.start()

    sampler = None
    if sample_interval_ms:
        try:
            sampler = ResourceSampler(sample_interval_ms)
        except SamplerUnavailable as exc:
            logger.warning("resource sampling disabled: %s", exc)
    start_wall = time.time()
    origin_box[0] = time.perf_counter()
    if sampler is not None:
        sampler.origin = origin_box[0]
        try:
            sampler.start()
        except SamplerUnavailable as exc:
            logger.warning("resource sampling disabled: %s", exc)
            sampler = None
    if barrier is not None:
        barrier.wait()
    for t in threads:
        t.join()
    end_wall = time.time()
    samples = sampler.stop() if sampler is not None else None

    meta = RunMeta(
        scenario=scenario.id,
        backend=backend,
        mode=scenario.mode,
        start_wall=start_wall,
        end_wall=end_wall,
        users_launched=len(users),
        iterations_completed=sum(u.iterations_completed for u in users),
        action_errors=sum(u.action_errors for u in users),
        assignments={name: assignments.count(name) for name in dict.fromkeys(assignments)},
        samples=samples,
        resources=summarize(samples) if samples else None,
    )
    events = [e for u in users for e in u.events]
    return RawRunLog(meta, events)
