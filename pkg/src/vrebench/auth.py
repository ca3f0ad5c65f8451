"""Password hashing, sessions and the requiresLogin guard."""
from __future__ import annotations

import base64
import binascii
import hashlib
import hmac
import os
import secrets
import threading
import time
from dataclasses import dataclass
from typing import Optional

from vrebench.model import PasswordScheme, Role

PBKDF2_ITERATIONS = 10_000
PBKDF2_KEY_BYTES = 64
LEGACY_SALT_BYTES = 16
SALT_BYTES = 16
COOKIE_NAME = "vre.sid"
MUTATING_METHODS = frozenset({"POST", "PUT", "DELETE"})


class AuthFailed(Exception):
    """Login refused. The message never says whether the user exists."""

    message = "Invalid username or password"

    def __init__(self) -> None:
        super().__init__(self.message)


class MalformedStoredField(ValueError):
    pass


def new_salt() -> str:
    return base64.b64encode(os.urandom(SALT_BYTES)).decode("ascii")


def pbkdf2_sha256(password: bytes, salt: bytes, iterations: int, dklen: int) -> bytes:
    return hashlib.pbkdf2_hmac("sha256", password, salt, iterations, dklen)


def hash_password(password: str, salt: str) -> str:
    """PBKDF2-HMAC-SHA256, 10,000 rounds, 64-byte key, base64 encoded."""
    if not salt:
        raise ValueError("salt must be non-empty")
    key = pbkdf2_sha256(password.encode("utf-8"), salt.encode("utf-8"), PBKDF2_ITERATIONS, PBKDF2_KEY_BYTES)
    return base64.b64encode(key).decode("ascii")


def make_legacy_field(password: str, salt: bytes) -> str:
    """Old-system form: raw salt followed by SHA-256(salt + password), base64 encoded."""
    if len(salt) != LEGACY_SALT_BYTES:
        raise ValueError(f"legacy salts are {LEGACY_SALT_BYTES} bytes")
    digest = hashlib.sha256(salt + password.encode("utf-8")).digest()
    return base64.b64encode(salt + digest).decode("ascii")


def parse_legacy_field(stored: str) -> tuple[bytes, bytes]:
    try:
        raw = base64.b64decode(stored, validate=True)
    except (binascii.Error, ValueError) as exc:
        raise MalformedStoredField("stored field is not base64") from exc
    if len(raw) != LEGACY_SALT_BYTES + 32:
        raise MalformedStoredField(f"expected {LEGACY_SALT_BYTES + 32} bytes, got {len(raw)}")
    return raw[:LEGACY_SALT_BYTES], raw[LEGACY_SALT_BYTES:]


def verify_legacy(password: str, stored: str) -> bool:
    salt, expected = parse_legacy_field(stored)
    actual = hashlib.sha256(salt + password.encode("utf-8")).digest()
    return hmac.compare_digest(actual, expected)


def verify_password(password: str, account: dict) -> bool:
    scheme = account.get("scheme", PasswordScheme.PBKDF2_SHA256.value)
    if scheme == PasswordScheme.LEGACY_SHA256_CONCAT.value:
        try:
            return verify_legacy(password, account["passwordHash"])
        except MalformedStoredField:
            return False
    candidate = hash_password(password, account["salt"])
    return hmac.compare_digest(candidate.encode("ascii"), account["passwordHash"].encode("ascii"))


def credentials(password: str, salt: Optional[str] = None) -> dict:
    salt = salt or new_salt()
    return {"salt": salt, "passwordHash": hash_password(password, salt), "scheme": PasswordScheme.PBKDF2_SHA256.value}


@dataclass(frozen=True)
class Session:
    token: str
    account_id: str
    role: Role
    issued_at: float


class SessionTable:
    """In-memory bearer sessions; cookies carry ``token.signature``."""

    def __init__(self, secret: str) -> None:
        self._secret = secret.encode("utf-8")
        self._sessions: dict[str, Session] = {}
        self._lock = threading.Lock()

    def _sign(self, token: str) -> str:
        mac = hmac.new(self._secret, token.encode("ascii"), hashlib.sha256).digest()
        return base64.urlsafe_b64encode(mac).decode("ascii").rstrip("=")

    def issue(self, account_id: str, role: Role | str) -> Session:
        session = Session(secrets.token_urlsafe(32), account_id, Role(role), time.time())
        with self._lock:
            # 256-bit tokens; a repeat would be a broken RNG
            assert session.token not in self._sessions
            self._sessions[session.token] = session
        return session

    def cookie_value(self, session: Session) -> str:
        return f"{session.token}.{self._sign(session.token)}"

    def lookup(self, cookie_value: Optional[str]) -> Optional[Session]:
        if not cookie_value or "." not in cookie_value:
            return None
        token, signature = cookie_value.rsplit(".", 1)
        if not hmac.compare_digest(signature, self._sign(token)):
            return None
        with self._lock:
            return self._sessions.get(token)

    def revoke(self, cookie_value: Optional[str]) -> None:
        session = self.lookup(cookie_value)
        if session is not None:
            with self._lock:
                self._sessions.pop(session.token, None)

    def __len__(self) -> int:
        with self._lock:
            return len(self._sessions)


def login(store, sessions: SessionTable, username: str, password: str) -> Session:
    account = store.find_one("Accounts", {"username": username})
    if account is None:
        # burn the same hashing time as a real check
        hash_password(password, "x" * 24)
        raise AuthFailed()
    if not verify_password(password, account):
        raise AuthFailed()
    return sessions.issue(account["_id"], account["role"])


def requires_login(method: str, session: Optional[Session], *, open_reads: bool) -> bool:
    """True when the request may proceed to its handler."""
    if session is not None:
        return True
    return method.upper() not in MUTATING_METHODS and open_reads
