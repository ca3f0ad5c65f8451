from __future__ import annotations

import errno
import logging
import sys
import threading
import time
from collections import deque
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Optional, TextIO

from vrebench.api.app import Request, Response, VreApp
from vrebench.api.config import BadConfig, ServerConfig
from vrebench.store import Store

logger = logging.getLogger(__name__)


class PortInUse(OSError):
    pass


def format_access_line(method: str, path: str, status: int, elapsed_ms: float, nbytes: int) -> str:
    return f"{method} {path} {status} {elapsed_ms:.3f} ms - {nbytes}"


class AccessLog:
    """Writes one line per request to stdout and/or a file, keeping a bounded tail in memory."""

    def __init__(self, path: Optional[str | Path] = None, echo: bool = True, keep: int = 1_000_000,
                 stream: Optional[TextIO] = None) -> None:
        self._fh = open(path, "a", encoding="utf-8") if path else None
        self.path = Path(path) if path else None
        self._echo = echo
        self._stream = stream
        self.lines: deque[str] = deque(maxlen=keep)
        self._lock = threading.Lock()

    def write(self, line: str) -> None:
        with self._lock:
            self.lines.append(line)
            if self._fh is not None:
                self._fh.write(line + "\n")
                self._fh.flush()
            if self._echo:
                print(line, file=self._stream or sys.stdout, flush=True)

    def close(self) -> None:
        with self._lock:
            if self._fh is not None:
                self._fh.close()
                self._fh = None


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    server_version = "vre"
    sys_version = ""
    # headers and body leave in one segment; split writes stall on delayed ACKs
    wbufsize = 1 << 16
    disable_nagle_algorithm = True
    app: VreApp
    access_log: AccessLog

    def _serve(self) -> None:
        start = time.perf_counter()
        length = int(self.headers.get("Content-Length") or 0)
        body = self.rfile.read(length) if length else b""
        response = self.app.handle(Request(self.command, self.path, self.headers, body))
        # measured before the socket write, like a response-time middleware at header time
        elapsed_ms = (time.perf_counter() - start) * 1000
        self.access_log.write(format_access_line(self.command, self.path, response.status, elapsed_ms,
                                                 len(response.body)))
        self._send(response, elapsed_ms)

    def _send(self, response: Response, elapsed_ms: float) -> None:
        self.send_response(response.status)
        if response.status != 304:
            self.send_header("Content-Type", response.content_type)
        self.send_header("Content-Length", str(len(response.body)))
        for key, value in response.headers:
            self.send_header(key, value)
        # fixed width so header bytes do not depend on timing
        self.send_header("Server-Timing", f"store;dur={response.store_ms:010.3f}, total;dur={elapsed_ms:010.3f}")
        self.end_headers()
        if response.body:
            self.wfile.write(response.body)

    do_GET = do_POST = do_PUT = do_DELETE = _serve

    def log_message(self, format: str, *args) -> None:
        logger.debug("%s - %s", self.address_string(), format % args)


class _Server(ThreadingHTTPServer):
    daemon_threads = True
    allow_reuse_address = False
    request_queue_size = 128


class ServiceHandle:
    def __init__(self, app: VreApp, httpd: _Server, access_log: AccessLog) -> None:
        self.app = app
        self.httpd = httpd
        self.access_log = access_log
        self._thread: Optional[threading.Thread] = None

    @property
    def port(self) -> int:
        return self.httpd.server_address[1]

    @property
    def url(self) -> str:
        return f"http://{self.httpd.server_address[0]}:{self.port}"

    @property
    def store(self) -> Store:
        return self.app.backend_store

    def start(self) -> "ServiceHandle":
        self._thread = threading.Thread(target=self.httpd.serve_forever, args=(0.05,), name="vre-http", daemon=True)
        self._thread.start()
        return self

    def serve_forever(self) -> None:
        self.httpd.serve_forever()

    def stop(self) -> None:
        self.httpd.shutdown()
        self.httpd.server_close()
        if self._thread is not None:
            self._thread.join()
        self.app.close()
        self.access_log.close()

    def __enter__(self) -> "ServiceHandle":
        return self

    def __exit__(self, *exc) -> None:
        self.stop()


def serve(config: ServerConfig, store: Optional[Store] = None, *, start: bool = True,
          access_log: Optional[AccessLog] = None) -> ServiceHandle:
    """Bind the service; with ``start`` it runs on a background thread."""
    data_dir = Path(config.data_dir)
    try:
        data_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise BadConfig(f"data directory {data_dir} is not writable: {exc}") from exc
    app = VreApp(config, store)
    log = access_log or AccessLog(config.access_log or None, echo=config.echo_access_log)
    handler = type("VreHandler", (_Handler,), {"app": app, "access_log": log})
    try:
        httpd = _Server((config.host, config.port), handler)
    except OSError as exc:
        app.close()
        if exc.errno == errno.EADDRINUSE:
            raise PortInUse(f"port {config.port} is already in use") from exc
        raise
    handle = ServiceHandle(app, httpd, log)
    return handle.start() if start else handle
