"""Request dispatch for the VRE REST service, independent of the socket layer."""
from __future__ import annotations

import json
import logging
import mimetypes
import threading
import time
from dataclasses import dataclass, field
from email.parser import HeaderParser
from pathlib import Path, PurePath
from typing import Any, Callable, Mapping, Optional

from vrebench.api.config import ServerConfig
from vrebench.api.routes import Route, match
from vrebench.api.shell import Shell
from vrebench.auth import COOKIE_NAME, AuthFailed, Session, SessionTable, credentials, login, requires_login
from vrebench.model import ROLE_PROFILES, ContentKind, Role, public_doc, random_token
from vrebench.store import (
    DuplicateKey,
    InvalidRecord,
    NotFound,
    ReferentialViolation,
    Store,
    StoreClosed,
    open_store,
)

logger = logging.getLogger(__name__)


class HttpError(Exception):
    def __init__(self, status: int, message: str):
        super().__init__(message)
        self.status = status
        self.message = message


@dataclass
class Request:
    method: str
    path: str
    headers: Mapping[str, str] = field(default_factory=dict)
    body: bytes = b""

    def header(self, name: str) -> Optional[str]:
        getter = getattr(self.headers, "get", None)
        value = getter(name) if getter else None
        if value is None:
            lowered = name.lower()
            for k, v in self.headers.items():
                if k.lower() == lowered:
                    return v
        return value

    def cookie(self, name: str) -> Optional[str]:
        raw = self.header("Cookie") or ""
        for part in raw.split(";"):
            key, _, value = part.strip().partition("=")
            if key == name:
                return value
        return None

    def json(self) -> dict[str, Any]:
        if not self.body:
            return {}
        try:
            data = json.loads(self.body)
        except ValueError as exc:
            raise HttpError(400, "Malformed JSON body") from exc
        if not isinstance(data, dict):
            raise HttpError(400, "Body must be a flat document")
        return data


@dataclass
class Response:
    status: int
    body: bytes = b""
    content_type: str = "application/json; charset=utf-8"
    headers: list[tuple[str, str]] = field(default_factory=list)
    store_ms: float = 0.0

    @classmethod
    def json(cls, payload: Any, status: int = 200) -> "Response":
        return cls(status, json.dumps(payload, separators=(",", ":")).encode("utf-8"))

    @classmethod
    def error(cls, status: int, message: str) -> "Response":
        return cls.json({"message": message}, status)


class _TimedStore:
    """Proxy that adds the wall time of every store call to a per-thread counter."""

    def __init__(self, store: Store, local: threading.local):
        self._store = store
        self._local = local

    def __getattr__(self, name: str):
        attr = getattr(self._store, name)
        if not callable(attr):
            return attr

        def timed(*args, **kwargs):
            start = time.perf_counter()
            try:
                return attr(*args, **kwargs)
            finally:
                self._local.store_ms = getattr(self._local, "store_ms", 0.0) + (time.perf_counter() - start) * 1000

        return timed


_STATUS_OF = {
    NotFound: 404,
    ReferentialViolation: 409,
    DuplicateKey: 409,
    InvalidRecord: 400,
    StoreClosed: 503,
}


def content_kind(media_type: str) -> ContentKind:
    major = media_type.split("/", 1)[0].lower()
    if major == "video":
        return ContentKind.VIDEO
    if major == "audio":
        return ContentKind.AUDIO
    if major == "text" or media_type in ("application/pdf", "application/msword") or "wordprocessingml" in media_type:
        return ContentKind.TEXT
    return ContentKind.OTHER


def parse_multipart(content_type: str, body: bytes) -> tuple[dict[str, str], dict[str, tuple[str, str, bytes]]]:
    """Split a multipart/form-data body into text fields and files (filename, type, bytes)."""
    header = HeaderParser().parsestr(f"Content-Type: {content_type}\r\n\r\n")
    boundary = header.get_param("boundary")
    if not boundary:
        raise HttpError(400, "Missing multipart boundary")
    delimiter = b"--" + boundary.encode("latin-1")
    fields: dict[str, str] = {}
    files: dict[str, tuple[str, str, bytes]] = {}
    for chunk in body.split(delimiter)[1:]:
        if chunk.startswith(b"--"):
            break
        chunk = chunk[2:] if chunk.startswith(b"\r\n") else chunk
        head, sep, payload = chunk.partition(b"\r\n\r\n")
        if not sep:
            raise HttpError(400, "Malformed multipart part")
        if payload.endswith(b"\r\n"):
            payload = payload[:-2]
        part = HeaderParser().parsestr(head.decode("utf-8", "replace") + "\r\n\r\n")
        name = part.get_param("name", header="content-disposition")
        if name is None:
            continue
        filename = part.get_param("filename", header="content-disposition")
        if filename is not None:
            files[name] = (filename, part.get_content_type() if part.get("Content-Type") else "", payload)
        else:
            fields[name] = payload.decode("utf-8")
    return fields, files


class VreApp:
    def __init__(self, config: ServerConfig, store: Optional[Store] = None) -> None:
        self.config = config
        self._raw_store = store if store is not None else open_store(
            config.backend, config.data_dir, config.write_concern_spec
        )
        self._local = threading.local()
        self.store = _TimedStore(self._raw_store, self._local)
        self.sessions = SessionTable(config.session_secret)
        self.shell = Shell(config.shell_bytes)

    @property
    def backend_store(self) -> Store:
        return self._raw_store

    def close(self) -> None:
        self._raw_store.close()

    # -- dispatch ---------------------------------------------------------

    def handle(self, request: Request) -> Response:
        self._local.store_ms = 0.0
        try:
            response = self._dispatch(request)
        except HttpError as exc:
            response = Response.error(exc.status, exc.message)
        except AuthFailed as exc:
            response = Response.error(401, exc.message)
        except tuple(_STATUS_OF) as exc:
            response = Response.error(_STATUS_OF[type(exc)], str(exc))
        except Exception:
            logger.exception("unhandled error for %s %s", request.method, request.path)
            response = Response.error(500, "Internal server error")
        response.store_ms = self._local.store_ms
        return response

    def _dispatch(self, request: Request) -> Response:
        method = request.method.upper()
        path = request.path.split("?", 1)[0]
        if path.startswith("/app/"):
            return self._shell(request, path[len("/app/"):])
        if path == "/api/auth/login" and method == "POST":
            return self._login(request)
        if path == "/api/auth/logout" and method == "POST":
            return self._logout(request)
        found = match(method, path)
        if found is None:
            raise HttpError(404, f"Cannot {method} {path}")
        route, item_id = found
        session = self.sessions.lookup(request.cookie(COOKIE_NAME))
        if not requires_login(method, session, open_reads=self.config.open_reads):
            raise HttpError(401, "User is not logged in")
        handler: Callable[..., Response] = getattr(self, "_" + route.handler.split(".", 1)[1])
        if item_id is not None:
            # resolve the id before the handler runs
            self.store.read(route.collection, item_id)
            return handler(route, request, session, item_id)
        return handler(route, request, session)

    # -- auth -------------------------------------------------------------

    def _login(self, request: Request) -> Response:
        body = request.json()
        username, password = body.get("username"), body.get("password")
        if not isinstance(username, str) or not isinstance(password, str):
            raise AuthFailed()
        session = login(self.store, self.sessions, username, password)
        response = Response.json({"_id": session.account_id, "username": username, "role": session.role.value})
        cookie = self.sessions.cookie_value(session)
        response.headers.append(("Set-Cookie", f"{COOKIE_NAME}={cookie}; Path=/; HttpOnly"))
        return response

    def _logout(self, request: Request) -> Response:
        self.sessions.revoke(request.cookie(COOKIE_NAME))
        return Response.json({"message": "Logged out"})

    # -- static shell -----------------------------------------------------

    def _shell(self, request: Request, name: str) -> Response:
        if request.method.upper() != "GET":
            raise HttpError(404, f"Cannot {request.method} /app/{name}")
        found = self.shell.get(name or "index.html")
        if found is None:
            raise HttpError(404, f"Cannot GET /app/{name}")
        body, etag = found
        guessed = mimetypes.guess_type(name)[0] or "application/octet-stream"
        headers = [("ETag", etag), ("Cache-Control", "no-cache")]
        if request.header("If-None-Match") == etag:
            return Response(304, b"", guessed, headers)
        return Response(200, body, guessed, headers)

    # -- collection handlers ----------------------------------------------

    def _out(self, collection: str, doc: Mapping[str, Any]) -> dict[str, Any]:
        return public_doc(collection, doc)

    def _list(self, route: Route, request: Request, session: Optional[Session]) -> Response:
        return Response.json([self._out(route.collection, d) for d in self.store.list(route.collection)])

    def _read(self, route: Route, request: Request, session: Optional[Session], item_id: str) -> Response:
        return Response.json(self._out(route.collection, self.store.read(route.collection, item_id)))

    def _create(self, route: Route, request: Request, session: Optional[Session]) -> Response:
        collection = route.collection
        if collection == "Contents" and (request.header("Content-Type") or "").startswith("multipart/form-data"):
            return self._upload(request, session)
        body = request.json()
        if collection == "Accounts":
            return self._create_account(body, session)
        if collection == "TreatmentContent":
            return self._assign_content(body)
        if collection == "Contents":
            body.setdefault("creatorId", session.account_id if session else None)
        new_id = self.store.create(collection, body)
        return Response.json(self._out(collection, self.store.read(collection, new_id)))

    def _update(self, route: Route, request: Request, session: Optional[Session], item_id: str) -> Response:
        patch = request.json()
        if route.collection == "Accounts":
            for private in ("salt", "passwordHash", "scheme"):
                if private in patch:
                    raise HttpError(400, f"{private} cannot be set directly")
            if "password" in patch:
                patch.update(credentials(str(patch.pop("password"))))
        doc = self.store.update(route.collection, item_id, patch)
        return Response.json(self._out(route.collection, doc))

    def _delete(self, route: Route, request: Request, session: Optional[Session], item_id: str) -> Response:
        return Response.json(self._out(route.collection, self.store.delete(route.collection, item_id)))

    def _create_account(self, body: dict[str, Any], session: Optional[Session]) -> Response:
        if session is None or session.role is not Role.ADMINISTRATOR:
            raise HttpError(403, "Only administrators can create accounts")
        username, password = body.get("username"), body.get("password")
        if not isinstance(username, str) or not username or not isinstance(password, str) or not password:
            raise HttpError(400, "username and password are required")
        try:
            role = Role(body.get("role", Role.CLINICIAN.value))
        except ValueError as exc:
            raise HttpError(400, "unknown role") from exc
        account_id = self.store.create(
            "Accounts", {"username": username, "role": role.value, **credentials(password)}
        )
        profile = {"accountId": account_id, "displayName": str(body.get("displayName") or username)}
        try:
            self.store.create(ROLE_PROFILES[role], profile)
        except Exception:
            self.store.delete("Accounts", account_id)
            raise
        return Response.json(self._out("Accounts", self.store.read("Accounts", account_id)))

    def _assign_content(self, body: dict[str, Any]) -> Response:
        owners = [(k, c) for k, c in (("treatmentId", "Treatments"), ("informationId", "Information")) if body.get(k)]
        if len(owners) != 1 or not body.get("contentId"):
            raise HttpError(400, "need contentId and exactly one of treatmentId, informationId")
        (owner_field, owner_collection), = owners
        for collection, key in ((owner_collection, owner_field), ("Contents", "contentId")):
            if not self.store.exists(collection, str(body[key])):
                raise HttpError(404, f"unknown {key}")
        record = {owner_field: str(body[owner_field]), "contentId": str(body["contentId"])}
        new_id = self.store.create("TreatmentContent", record)
        return Response.json(self.store.read("TreatmentContent", new_id))

    # -- repository upload ------------------------------------------------

    def _upload(self, request: Request, session: Optional[Session]) -> Response:
        if session is None:
            raise HttpError(401, "User is not logged in")
        if session.role not in (Role.ADMINISTRATOR, Role.CLINICIAN):
            raise HttpError(403, "Only administrators and clinicians can upload")
        fields, files = parse_multipart(request.header("Content-Type") or "", request.body)
        meta: dict[str, Any] = {}
        if "data" in fields:
            try:
                meta = json.loads(fields["data"])
            except ValueError as exc:
                raise HttpError(400, "data field is not valid JSON") from exc
        for key in ("name", "pat_desc", "clin_desc", "category"):
            if key in fields:
                meta.setdefault(key, fields[key])
        if "file" not in files:
            raise HttpError(400, "Missing file")
        if not meta.get("name") or not meta.get("category"):
            raise HttpError(400, "Missing content metadata (name, category)")
        category = str(meta["category"])
        if not self.store.exists("Categories", category):
            raise HttpError(400, "Unknown category")

        filename, media_type, payload = files["file"]
        media_type = media_type if media_type not in ("", "application/octet-stream") else (
            mimetypes.guess_type(filename)[0] or "application/octet-stream"
        )
        stored_name = random_token(18) + PurePath(filename).suffix
        target_dir = self.config.upload_dir
        try:
            target_dir.mkdir(parents=True, exist_ok=True)
            (target_dir / stored_name).write_bytes(payload)
        except OSError as exc:
            logger.error("content root unwritable: %s", exc)
            raise HttpError(507, "Content root is not writable") from exc

        root = self.config.content_root
        sep = "\\" if "\\" in root and "/" not in root else "/"
        record = {
            "name": str(meta["name"]),
            "mediaType": media_type,
            "patient_description": str(meta.get("pat_desc", "")),
            "clinician_description": str(meta.get("clin_desc", "")),
            "categoryId": category,
            "path": root.rstrip("/\\") + sep + stored_name,
            "creatorId": session.account_id,
            "kind": content_kind(media_type).value,
        }
        try:
            new_id = self.store.create("Contents", record)
        except Exception:
            (target_dir / stored_name).unlink(missing_ok=True)
            raise
        return Response.json(self.store.read("Contents", new_id))


def upload_path(config: ServerConfig, content_path: str) -> Path:
    """Local file behind a stored content path."""
    name = content_path.replace("\\", "/").rsplit("/", 1)[-1]
    return config.upload_dir / name
