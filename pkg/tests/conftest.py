from __future__ import annotations

import http.client
import json
from pathlib import Path
from typing import Any, Optional

import pytest

from vrebench.api import ServerConfig, serve
from vrebench.seed import seed


class Api:
    """Minimal JSON client for exercising the service from tests."""

    def __init__(self, url: str):
        self.host, port = url.split("//", 1)[1].split(":")
        self.port = int(port)
        self.cookie: Optional[str] = None

    def call(self, method: str, path: str, body: Any = None, *, raw: Optional[bytes] = None,
             headers: Optional[dict] = None) -> tuple[int, dict, Any]:
        conn = http.client.HTTPConnection(self.host, self.port, timeout=30)
        hdrs = dict(headers or {})
        payload = raw
        if body is not None:
            payload = json.dumps(body).encode()
            hdrs["Content-Type"] = "application/json"
        if self.cookie:
            hdrs["Cookie"] = self.cookie
        conn.request(method, path, body=payload, headers=hdrs)
        resp = conn.getresponse()
        data = resp.read()
        conn.close()
        out_headers = {k.lower(): v for k, v in resp.getheaders()}
        if "set-cookie" in out_headers:
            self.cookie = out_headers["set-cookie"].split(";", 1)[0]
        try:
            parsed = json.loads(data) if data and "json" in out_headers.get("content-type", "") else data
        except ValueError:
            parsed = data
        return resp.status, out_headers, parsed

    def login(self, username: str, password: str) -> int:
        return self.call("POST", "/api/auth/login", {"username": username, "password": password})[0]


def make_server(tmp: Path, backend: str = "document", profile: Optional[str] = "small", **overrides):
    config = ServerConfig(db=f"{backend}:{tmp / backend}", port=overrides.pop("port", 0), echo_access_log=False,
                          shell_bytes=overrides.pop("shell_bytes", 40_000), **overrides)
    handle = serve(config)
    if profile:
        seed(handle.store, profile, config.content_root)
    return handle


@pytest.fixture(params=["document", "normalized"])
def backend(request) -> str:
    return request.param


@pytest.fixture
def server(tmp_path, backend):
    handle = make_server(tmp_path, backend)
    yield handle
    handle.stop()


@pytest.fixture
def api(server) -> Api:
    return Api(server.url)


def pytest_terminal_summary(terminalreporter):
    import sys

    acceptance = sys.modules.get("test_acceptance")
    if acceptance is None or not acceptance.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in acceptance.summary_lines():
        terminalreporter.write_line(line)
