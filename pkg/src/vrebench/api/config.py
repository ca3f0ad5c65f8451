"""Service configuration: ``key = value`` file, then environment, then flags."""
from __future__ import annotations

import os
import re
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Any, Mapping, Optional

from vrebench.store.base import WriteConcern, WriteMode


class BadConfig(ValueError):
    pass


# file key -> attribute
FILE_KEYS = {
    "db": "db",
    "sessionSecret": "session_secret",
    "VRE_GLOBAL_REPOSITORY": "content_root",
    "port": "port",
    "openReads": "open_reads",
    "flushIntervalMs": "flush_interval_ms",
    "writeConcern": "write_concern",
    "repositoryDir": "repository_dir",
    "shellBytes": "shell_bytes",
    "accessLog": "access_log",
}
ENV_KEYS = {
    "VRE_DB": "db",
    "VRE_SESSION_SECRET": "session_secret",
    "VRE_GLOBAL_REPOSITORY": "content_root",
    "VRE_PORT": "port",
    "VRE_OPEN_READS": "open_reads",
    "VRE_FLUSH_INTERVAL_MS": "flush_interval_ms",
    "VRE_WRITE_CONCERN": "write_concern",
    "VRE_REPOSITORY_DIR": "repository_dir",
    "VRE_SHELL_BYTES": "shell_bytes",
    "VRE_ACCESS_LOG": "access_log",
}
DEFAULT_SHELL_BYTES = 6_000_000


def _bool(value: Any) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise BadConfig(f"not a boolean: {value!r}")


@dataclass(frozen=True)
class ServerConfig:
    # "<backend>:<data dir>", e.g. "document:./data"
    db: str = "document:./vre-data"
    session_secret: str = "developmentSessionSecret"
    content_root: str = ""
    port: int = 3000
    host: str = "127.0.0.1"
    open_reads: bool = True
    flush_interval_ms: int = 100
    write_concern: str = WriteMode.ACKNOWLEDGED_UNJOURNALED.value
    repository_dir: str = ""
    shell_bytes: int = DEFAULT_SHELL_BYTES
    access_log: str = ""
    echo_access_log: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "port", int(self.port))
        object.__setattr__(self, "flush_interval_ms", int(self.flush_interval_ms))
        object.__setattr__(self, "shell_bytes", int(self.shell_bytes))
        object.__setattr__(self, "open_reads", _bool(self.open_reads))
        self.backend  # validates db
        try:
            WriteMode(self.write_concern)
        except ValueError as exc:
            raise BadConfig(f"unknown write concern {self.write_concern!r}") from exc
        if self.flush_interval_ms <= 0:
            raise BadConfig("flushIntervalMs must be positive")
        if self.shell_bytes < 0:
            raise BadConfig("shellBytes must be non-negative")
        if not self.session_secret:
            raise BadConfig("sessionSecret must be non-empty")
        if not self.content_root:
            object.__setattr__(self, "content_root", str(Path(self.data_dir) / "VRE_REPOS"))

    @property
    def backend(self) -> str:
        backend, sep, _ = self.db.partition(":")
        if not sep or backend not in ("document", "normalized"):
            raise BadConfig(f"db must look like 'document:<dir>' or 'normalized:<dir>', got {self.db!r}")
        return backend

    @property
    def data_dir(self) -> str:
        return self.db.partition(":")[2] or "."

    @property
    def content_root_is_url(self) -> bool:
        return bool(re.match(r"^[a-z][a-z0-9+.-]*://", self.content_root, re.I)) or (
            "/" not in self.content_root and "\\" not in self.content_root and "." in self.content_root
        )

    @property
    def upload_dir(self) -> Path:
        """Where uploaded bytes land on this machine."""
        if self.repository_dir:
            return Path(self.repository_dir)
        if self.content_root_is_url:
            return Path(self.data_dir) / "VRE_REPOS"
        return Path(self.content_root)

    @property
    def write_concern_spec(self) -> WriteConcern:
        return WriteConcern(WriteMode(self.write_concern), self.flush_interval_ms)


def parse_config_text(text: str) -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or key not in FILE_KEYS:
            raise BadConfig(f"line {lineno}: expected one of {sorted(FILE_KEYS)} as 'key = value'")
        if len(value) >= 2 and value[0] == value[-1] and value[0] in "'\"":
            value = value[1:-1]
        values[FILE_KEYS[key]] = value
    return values


def load_config(
    path: Optional[str | os.PathLike] = None,
    env: Optional[Mapping[str, str]] = None,
    overrides: Optional[Mapping[str, Any]] = None,
) -> ServerConfig:
    """Build a config with precedence flags > environment > file > defaults."""
    merged: dict[str, Any] = {}
    if path is not None:
        try:
            merged.update(parse_config_text(Path(path).read_text()))
        except OSError as exc:
            raise BadConfig(f"cannot read config file {path}: {exc}") from exc
    env = os.environ if env is None else env
    for key, attr in ENV_KEYS.items():
        if key in env:
            merged[attr] = env[key]
    merged.update({k: v for k, v in (overrides or {}).items() if v is not None})
    known = {f.name for f in fields(ServerConfig)}
    unknown = set(merged) - known
    if unknown:
        raise BadConfig(f"unknown settings: {sorted(unknown)}")
    try:
        return ServerConfig(**merged)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, BadConfig):
            raise
        raise BadConfig(str(exc)) from exc


__all__ = ["BadConfig", "ServerConfig", "load_config", "parse_config_text", "replace"]
