"""Normalized engine: one table per collection, foreign keys enforced per write.

Content kinds are child tables (``content_video``, ``content_audio``,
``content_text``) holding only the id of their parent ``contents`` row; a
content with no child row is of kind Other. Goal comments live in a child
table but are exposed inline on the goal.
"""
from __future__ import annotations

import json
import os
import sqlite3
import threading
from pathlib import Path
from typing import Any, Mapping, Optional

from vrebench.model import BackendKind, Entity, collection_fields, validate_document
from vrebench.store.base import (
    DuplicateKey,
    InvalidRecord,
    NotFound,
    ReferentialViolation,
    Store,
    StoreClosed,
    as_document,
    check_collection,
    with_defaults,
)

DB_NAME = "normalized.db"

SCHEMA = """
CREATE TABLE IF NOT EXISTS accounts (
    id INTEGER PRIMARY KEY AUTOINCREMENT,
    rev INTEGER NOT NULL DEFAULT 0,
    username TEXT NOT NULL UNIQUE,
    salt TEXT NOT NULL,
    password_hash TEXT NOT NULL,
    role TEXT NOT NULL CHECK (role IN ('Administrator', 'Clinician', 'Patient')),
    scheme TEXT NOT NULL CHECK (scheme IN ('Pbkdf2Sha256', 'LegacySha256Concat'))
);
CREATE TABLE IF NOT EXISTS administrators (
    id INTEGER PRIMARY KEY AUTOINCREMENT,
    rev INTEGER NOT NULL DEFAULT 0,
    account_id INTEGER NOT NULL REFERENCES accounts(id),
    display_name TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS clinicians (
    id INTEGER PRIMARY KEY AUTOINCREMENT,
    rev INTEGER NOT NULL DEFAULT 0,
    account_id INTEGER NOT NULL REFERENCES accounts(id),
    display_name TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS patients (
    id INTEGER PRIMARY KEY AUTOINCREMENT,
    rev INTEGER NOT NULL DEFAULT 0,
    account_id INTEGER NOT NULL REFERENCES accounts(id),
    display_name TEXT NOT NULL,
    interface_config TEXT NOT NULL DEFAULT '{}'
);
CREATE TABLE IF NOT EXISTS clinicians_patients (
    id INTEGER PRIMARY KEY AUTOINCREMENT,
    rev INTEGER NOT NULL DEFAULT 0,
    clinician_id INTEGER NOT NULL REFERENCES clinicians(id),
    patient_id INTEGER NOT NULL REFERENCES patients(id),
    UNIQUE (clinician_id, patient_id)
);
CREATE TABLE IF NOT EXISTS categories (
    id INTEGER PRIMARY KEY AUTOINCREMENT,
    rev INTEGER NOT NULL DEFAULT 0,
    name TEXT NOT NULL,
    parent_id INTEGER REFERENCES categories(id)
);
CREATE TABLE IF NOT EXISTS contents (
    id INTEGER PRIMARY KEY AUTOINCREMENT,
    rev INTEGER NOT NULL DEFAULT 0,
    name TEXT NOT NULL,
    media_type TEXT NOT NULL,
    patient_description TEXT NOT NULL,
    clinician_description TEXT NOT NULL,
    category_id INTEGER NOT NULL REFERENCES categories(id),
    path TEXT NOT NULL,
    creator_id INTEGER NOT NULL REFERENCES accounts(id)
);
CREATE TABLE IF NOT EXISTS content_video (
    content_id INTEGER PRIMARY KEY REFERENCES contents(id) ON DELETE CASCADE
);
CREATE TABLE IF NOT EXISTS content_audio (
    content_id INTEGER PRIMARY KEY REFERENCES contents(id) ON DELETE CASCADE
);
CREATE TABLE IF NOT EXISTS content_text (
    content_id INTEGER PRIMARY KEY REFERENCES contents(id) ON DELETE CASCADE
);
CREATE TABLE IF NOT EXISTS goals (
    id INTEGER PRIMARY KEY AUTOINCREMENT,
    rev INTEGER NOT NULL DEFAULT 0,
    patient_id INTEGER NOT NULL REFERENCES patients(id),
    description TEXT NOT NULL,
    term TEXT NOT NULL CHECK (term IN ('Short', 'Long'))
);
CREATE TABLE IF NOT EXISTS goal_comments (
    goal_id INTEGER NOT NULL REFERENCES goals(id) ON DELETE CASCADE,
    position INTEGER NOT NULL,
    author_id INTEGER NOT NULL REFERENCES accounts(id),
    text TEXT NOT NULL,
    timestamp TEXT NOT NULL,
    PRIMARY KEY (goal_id, position)
);
CREATE TABLE IF NOT EXISTS treatments (
    id INTEGER PRIMARY KEY AUTOINCREMENT,
    rev INTEGER NOT NULL DEFAULT 0,
    patient_id INTEGER NOT NULL REFERENCES patients(id),
    title TEXT NOT NULL,
    description TEXT NOT NULL,
    repetitions_per_day INTEGER NOT NULL CHECK (repetitions_per_day >= 0)
);
CREATE TABLE IF NOT EXISTS information (
    id INTEGER PRIMARY KEY AUTOINCREMENT,
    rev INTEGER NOT NULL DEFAULT 0,
    patient_id INTEGER NOT NULL REFERENCES patients(id),
    title TEXT NOT NULL,
    body TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS treatment_content (
    id INTEGER PRIMARY KEY AUTOINCREMENT,
    rev INTEGER NOT NULL DEFAULT 0,
    treatment_id INTEGER REFERENCES treatments(id),
    information_id INTEGER REFERENCES information(id),
    content_id INTEGER NOT NULL REFERENCES contents(id),
    CHECK ((treatment_id IS NULL) <> (information_id IS NULL)),
    UNIQUE (treatment_id, content_id),
    UNIQUE (information_id, content_id)
);
"""

TABLES = {
    "Accounts": "accounts",
    "Administrators": "administrators",
    "Categories": "categories",
    "Clinicians": "clinicians",
    "CliniciansPatients": "clinicians_patients",
    "Contents": "contents",
    "Goals": "goals",
    "Information": "information",
    "Patients": "patients",
    "TreatmentContent": "treatment_content",
    "Treatments": "treatments",
}
KIND_TABLES = {"Video": "content_video", "Audio": "content_audio", "Text": "content_text"}

# columns stored on the collection's own table (child-table fields excluded)
_COLUMNS = {
    name: [s for s in collection_fields(name) if s.attr not in ("comments", "kind")]
    for name in TABLES
}
_REF_COLUMNS = {
    name: {s.wire for s in collection_fields(name) if s.ref} for name in TABLES
}


def _classify(violations: list[str]) -> Exception:
    if any(v.startswith(("dangling", "role mismatch", "category cycle")) for v in violations):
        return ReferentialViolation(violations)
    if violations == ["duplicate link"]:
        return DuplicateKey("duplicate link")
    return InvalidRecord(violations)


def _db_id(value: Any, what: str) -> int:
    if isinstance(value, str) and value.isdigit():
        return int(value)
    raise ReferentialViolation(f"dangling {what}")


class NormalizedStore(Store):
    kind = BackendKind.NORMALIZED

    def __init__(self, path: str | os.PathLike | None = None) -> None:
        if path is None:
            target = ":memory:"
        else:
            p = Path(path)
            if p.is_dir():
                p = p / DB_NAME
            p.parent.mkdir(parents=True, exist_ok=True)
            target = str(p)
        self.path = target
        self._lock = threading.RLock()
        self._conn = sqlite3.connect(target, check_same_thread=False, isolation_level=None)
        self._conn.row_factory = sqlite3.Row
        self._conn.execute("PRAGMA foreign_keys = ON")
        if target != ":memory:":
            self._conn.execute("PRAGMA journal_mode = WAL")
            self._conn.execute("PRAGMA synchronous = NORMAL")
        self._conn.executescript(SCHEMA)
        self._closed = False

    # -- row mapping ------------------------------------------------------

    def _check_open(self) -> None:
        if self._closed:
            raise StoreClosed("store is closed")

    def _row_to_doc(self, collection: str, row: sqlite3.Row, extra: Optional[dict] = None) -> dict[str, Any]:
        doc: dict[str, Any] = {"_id": str(row["id"])}
        for spec in collection_fields(collection):
            if spec.attr == "comments":
                doc["comments"] = (extra or {}).get("comments", [])
                continue
            if spec.attr == "kind":
                doc["kind"] = (extra or {}).get("kind", "Other")
                continue
            value = row[spec.attr]
            if spec.ref and value is not None:
                value = str(value)
            elif spec.attr == "interface_config":
                value = json.loads(value)
            if collection == "TreatmentContent" and value is None:
                continue
            doc[spec.wire] = value
        return doc

    def _kinds(self) -> dict[int, str]:
        kinds = {}
        for kind, table in KIND_TABLES.items():
            sql = f"SELECT content_id FROM {table}"
            for (cid,) in self._conn.execute(sql):
                kinds[cid] = kind
        return kinds

    def _comments(self, goal_id: Optional[int] = None) -> dict[int, list[dict]]:
        sql = "SELECT goal_id, author_id, text, timestamp FROM goal_comments"
        args: tuple = ()
        if goal_id is not None:
            sql += " WHERE goal_id = ?"
            args = (goal_id,)
        out: dict[int, list[dict]] = {}
        for gid, author, text, ts in self._conn.execute(sql + " ORDER BY goal_id, position", args):
            out.setdefault(gid, []).append({"authorId": str(author), "text": text, "timestamp": ts})
        return out

    def _fetch(self, collection: str, where: str = "", args: tuple = ()) -> list[dict[str, Any]]:
        table = TABLES[collection]
        rows = self._conn.execute(f"SELECT * FROM {table} {where} ORDER BY id", args).fetchall()
        if not rows:
            return []
        kinds: dict[int, str] = {}
        comments: dict[int, list[dict]] = {}
        if collection == "Contents":
            if len(rows) == 1:
                kinds = {rows[0]["id"]: self._kind_of(rows[0]["id"])}
            else:
                kinds = self._kinds()
        elif collection == "Goals":
            comments = self._comments(rows[0]["id"] if len(rows) == 1 else None)
        docs = []
        for row in rows:
            extra = {"kind": kinds.get(row["id"], "Other"), "comments": comments.get(row["id"], [])}
            docs.append(self._row_to_doc(collection, row, extra))
        return docs

    def _kind_of(self, content_id: int) -> str:
        for kind, table in KIND_TABLES.items():
            if self._conn.execute(f"SELECT 1 FROM {table} WHERE content_id = ?", (content_id,)).fetchone():
                return kind
        return "Other"

    def _columns_and_values(self, collection: str, doc: Mapping[str, Any]) -> tuple[list[str], list[Any]]:
        cols, values = [], []
        for spec in _COLUMNS[collection]:
            value = doc.get(spec.wire)
            if spec.ref and value is not None:
                value = _db_id(value, spec.wire)
            elif spec.attr == "interface_config":
                value = json.dumps(value if value is not None else {}, sort_keys=True)
            cols.append(spec.attr)
            values.append(value)
        return cols, values

    def _write_children(self, collection: str, id: int, doc: Mapping[str, Any]) -> None:
        if collection == "Contents":
            for table in KIND_TABLES.values():
                self._conn.execute(f"DELETE FROM {table} WHERE content_id = ?", (id,))
            table = KIND_TABLES.get(doc.get("kind", "Other"))
            if table is not None:
                self._conn.execute(f"INSERT INTO {table} (content_id) VALUES (?)", (id,))
        elif collection == "Goals":
            self._conn.execute("DELETE FROM goal_comments WHERE goal_id = ?", (id,))
            for pos, c in enumerate(doc.get("comments") or []):
                self._conn.execute(
                    "INSERT INTO goal_comments (goal_id, position, author_id, text, timestamp) VALUES (?, ?, ?, ?, ?)",
                    (id, pos, _db_id(c["authorId"], "comment authorId"), c["text"], c["timestamp"]),
                )

    def _validate(self, collection: str, doc: Mapping[str, Any]) -> None:
        violations = validate_document(collection, doc, self, strict=True)
        if violations:
            raise _classify(violations)

    def _run(self, fn):
        """Run ``fn`` in one transaction, mapping constraint failures to store errors."""
        self._conn.execute("BEGIN IMMEDIATE")
        try:
            result = fn()
        except sqlite3.IntegrityError as exc:
            self._conn.execute("ROLLBACK")
            msg = str(exc)
            if "UNIQUE" in msg:
                raise DuplicateKey(msg) from exc
            if "FOREIGN KEY" in msg:
                raise ReferentialViolation(msg) from exc
            raise InvalidRecord(msg) from exc
        except BaseException:
            self._conn.execute("ROLLBACK")
            raise
        self._conn.execute("COMMIT")
        return result

    # -- contract ---------------------------------------------------------

    def create(self, collection: str, record: Entity | Mapping[str, Any]) -> str:
        check_collection(collection)
        doc = with_defaults(collection, as_document(record))
        given_id = doc.pop("_id", None)
        with self._lock:
            self._check_open()
            self._validate(collection, doc)
            cols, values = self._columns_and_values(collection, doc)
            if given_id is not None:
                if not (isinstance(given_id, str) and given_id.isdigit()):
                    raise InvalidRecord("invalid _id")
                if self.exists(collection, given_id):
                    raise DuplicateKey(f"{collection}: id {given_id} exists")
                cols = ["id", *cols]
                values = [int(given_id), *values]
            marks = ", ".join("?" for _ in cols)
            sql = f"INSERT INTO {TABLES[collection]} ({', '.join(cols)}) VALUES ({marks})"

            def insert() -> int:
                new_id = self._conn.execute(sql, values).lastrowid
                self._write_children(collection, new_id, doc)
                return new_id

            return str(self._run(insert))

    def read(self, collection: str, id: str) -> dict[str, Any]:
        check_collection(collection)
        if not (isinstance(id, str) and id.isdigit()):
            raise NotFound(f"{collection}/{id}")
        with self._lock:
            self._check_open()
            docs = self._fetch(collection, "WHERE id = ?", (int(id),))
        if not docs:
            raise NotFound(f"{collection}/{id}")
        return docs[0]

    def exists(self, collection: str, id: str) -> bool:
        check_collection(collection)
        if not (isinstance(id, str) and id.isdigit()):
            return False
        with self._lock:
            self._check_open()
            row = self._conn.execute(f"SELECT 1 FROM {TABLES[collection]} WHERE id = ?", (int(id),)).fetchone()
        return row is not None

    def update(self, collection: str, id: str, patch: Mapping[str, Any]) -> dict[str, Any]:
        check_collection(collection)
        patch = dict(patch)
        if patch.get("_id", id) != id:
            raise InvalidRecord("_id cannot change")
        patch.pop("_id", None)
        with self._lock:
            current = self.read(collection, id)
            if not patch:
                return current
            merged = {**current, **patch}
            if collection == "TreatmentContent":
                merged = {k: v for k, v in merged.items() if v is not None}
            self._validate(collection, merged)
            cols, values = self._columns_and_values(collection, merged)
            assignments = ", ".join(f"{c} = ?" for c in cols)
            sql = f"UPDATE {TABLES[collection]} SET {assignments}, rev = rev + 1 WHERE id = ?"

            def apply() -> None:
                self._conn.execute(sql, [*values, int(id)])
                self._write_children(collection, int(id), merged)

            self._run(apply)
            return self.read(collection, id)

    def delete(self, collection: str, id: str) -> dict[str, Any]:
        check_collection(collection)
        with self._lock:
            current = self.read(collection, id)
            self._run(lambda: self._conn.execute(f"DELETE FROM {TABLES[collection]} WHERE id = ?", (int(id),)))
            return current

    def list(self, collection: str) -> list[dict[str, Any]]:
        check_collection(collection)
        with self._lock:
            self._check_open()
            return self._fetch(collection)

    def query(self, collection: str, predicate: Optional[Mapping[str, Any]] = None) -> list[dict[str, Any]]:
        check_collection(collection)
        predicate = dict(predicate or {})
        pushable = {s.wire: s for s in _COLUMNS[collection]}
        where, args, rest = [], [], {}
        for key, value in predicate.items():
            spec = pushable.get(key)
            if key == "_id":
                if not (isinstance(value, str) and value.isdigit()):
                    return []
                where.append("id = ?")
                args.append(int(value))
            elif spec is not None and spec.attr != "interface_config" and isinstance(value, (str, int)):
                if spec.ref:
                    if not (isinstance(value, str) and value.isdigit()):
                        return []
                    value = int(value)
                where.append(f"{spec.attr} = ?")
                args.append(value)
            else:
                rest[key] = value
        with self._lock:
            self._check_open()
            docs = self._fetch(collection, "WHERE " + " AND ".join(where) if where else "", tuple(args))
        return [d for d in docs if all(d.get(k) == v for k, v in rest.items())]

    def count(self, collection: str) -> int:
        check_collection(collection)
        with self._lock:
            self._check_open()
            return self._conn.execute(f"SELECT COUNT(*) FROM {TABLES[collection]}").fetchone()[0]

    def revision(self, collection: str, id: str) -> int:
        check_collection(collection)
        with self._lock:
            row = self._conn.execute(f"SELECT rev FROM {TABLES[collection]} WHERE id = ?", (int(id),)).fetchone()
        if row is None:
            raise NotFound(f"{collection}/{id}")
        return row[0]

    def dangling_foreign_keys(self) -> list[tuple]:
        with self._lock:
            return self._conn.execute("PRAGMA foreign_key_check").fetchall()

    def close(self) -> None:
        with self._lock:
            if not self._closed:
                self._conn.close()
                self._closed = True
