"""Flexible-schema document engine with an append-only journal.

Journal file layout: a sequence of frames, each a 4-byte big-endian length
followed by a JSON object ``{"c": collection, "op": "put"|"del", "doc": {...}}``.
Replaying the frames in order rebuilds the in-memory collections. A torn
trailing frame is dropped on recovery.

Under ``AcknowledgedUnjournaled`` writes are acknowledged once applied in
memory and staged; a background thread appends staged frames every
``flush_interval_ms``. ``crash()`` throws away whatever is still staged.
"""
from __future__ import annotations

import json
import logging
import os
import struct
import threading
from pathlib import Path
from typing import Any, Mapping, Optional

from vrebench.model import COLLECTIONS, UNIQUE_KEYS, BackendKind, Entity, id_factory, validate_document
from vrebench.store.base import (
    JOURNALED,
    DuplicateKey,
    InvalidRecord,
    NotFound,
    Store,
    StoreClosed,
    WriteConcern,
    WriteMode,
    as_document,
    check_collection,
    with_defaults,
)

logger = logging.getLogger(__name__)

_HEADER = struct.Struct(">I")
JOURNAL_NAME = "document.journal"


def encode_frame(collection: str, op: str, doc: Mapping[str, Any]) -> bytes:
    payload = json.dumps({"c": collection, "op": op, "doc": doc}, separators=(",", ":")).encode()
    return _HEADER.pack(len(payload)) + payload


def read_frames(data: bytes) -> tuple[list[dict], int]:
    """Decode frames from ``data``; returns them and the offset of the last good byte."""
    frames = []
    pos = 0
    while pos + _HEADER.size <= len(data):
        (length,) = _HEADER.unpack_from(data, pos)
        end = pos + _HEADER.size + length
        if end > len(data):
            break
        try:
            frames.append(json.loads(data[pos + _HEADER.size:end]))
        except ValueError:
            break
        pos = end
    return frames, pos


class DocumentStore(Store):
    kind = BackendKind.DOCUMENT

    def __init__(
        self,
        path: str | os.PathLike | None = None,
        write_concern: WriteConcern = JOURNALED,
        *,
        auto_flush: bool = True,
    ) -> None:
        self.path = Path(path) if path is not None else None
        if self.path is not None and self.path.is_dir():
            self.path = self.path / JOURNAL_NAME
        self.write_concern = write_concern
        self._lock = threading.RLock()
        self._new_id = id_factory(BackendKind.DOCUMENT)
        self._staged: list[bytes] = []
        self._closed = False
        self._fh = None
        self._reset()
        self._recover()
        self._stop = threading.Event()
        self._flusher: Optional[threading.Thread] = None
        if auto_flush and self.path is not None and write_concern.mode is WriteMode.ACKNOWLEDGED_UNJOURNALED:
            self._flusher = threading.Thread(target=self._flush_loop, name="journal-flusher", daemon=True)
            self._flusher.start()

    # -- state ------------------------------------------------------------

    def _reset(self) -> None:
        self._data: dict[str, dict[str, dict]] = {c: {} for c in COLLECTIONS}
        self._revs: dict[tuple[str, str], int] = {}
        self._unique: dict[tuple[str, tuple[str, ...]], dict[tuple, str]] = {
            (c, key): {} for c, keys in UNIQUE_KEYS.items() for key in keys
        }

    def _recover(self) -> None:
        if self.path is None:
            return
        self.path.parent.mkdir(parents=True, exist_ok=True)
        data = self.path.read_bytes() if self.path.exists() else b""
        frames, good = read_frames(data)
        if good < len(data):
            logger.warning("dropping %d bytes of torn journal tail in %s", len(data) - good, self.path)
            with open(self.path, "r+b") as fh:
                fh.truncate(good)
        for frame in frames:
            if frame["op"] == "put":
                self._apply_put(frame["c"], frame["doc"])
            else:
                self._apply_delete(frame["c"], frame["doc"]["_id"])
        self._fh = open(self.path, "ab")

    def _unique_values(self, collection: str, doc: Mapping[str, Any]):
        for key in UNIQUE_KEYS.get(collection, ()):
            values = tuple(doc.get(k) for k in key)
            if any(v is None for v in values):
                continue
            yield self._unique[(collection, key)], values

    def _apply_put(self, collection: str, doc: dict) -> None:
        table = self._data[collection]
        old = table.get(doc["_id"])
        if old is not None:
            for index, values in self._unique_values(collection, old):
                index.pop(values, None)
        table[doc["_id"]] = doc
        for index, values in self._unique_values(collection, doc):
            index[values] = doc["_id"]
        key = (collection, doc["_id"])
        self._revs[key] = self._revs.get(key, -1) + 1

    def _apply_delete(self, collection: str, id: str) -> None:
        old = self._data[collection].pop(id, None)
        if old is None:
            return
        for index, values in self._unique_values(collection, old):
            index.pop(values, None)
        self._revs.pop((collection, id), None)

    def _check_unique(self, collection: str, doc: Mapping[str, Any]) -> None:
        for index, values in self._unique_values(collection, doc):
            holder = index.get(values)
            if holder is not None and holder != doc["_id"]:
                raise DuplicateKey(f"{collection}: duplicate {values}")

    def _journal(self, collection: str, op: str, doc: Mapping[str, Any]) -> None:
        if self._fh is None:
            return
        frame = encode_frame(collection, op, doc)
        if self.write_concern.mode is WriteMode.JOURNALED:
            self._fh.write(frame)
            self._fh.flush()
            if self.write_concern.sync:
                os.fsync(self._fh.fileno())
        else:
            self._staged.append(frame)

    def _check_open(self) -> None:
        if self._closed:
            raise StoreClosed("store is closed")

    # -- contract ---------------------------------------------------------

    def create(self, collection: str, record: Entity | Mapping[str, Any]) -> str:
        check_collection(collection)
        doc = with_defaults(collection, as_document(record))
        violations = validate_document(collection, doc, strict=False)
        if violations:
            raise InvalidRecord(violations)
        with self._lock:
            self._check_open()
            if doc.get("_id") is None:
                doc["_id"] = self._new_id()
            elif doc["_id"] in self._data[collection]:
                raise DuplicateKey(f"{collection}: id {doc['_id']} exists")
            doc = {"_id": doc.pop("_id"), **doc}
            self._check_unique(collection, doc)
            self._apply_put(collection, doc)
            self._journal(collection, "put", doc)
            return doc["_id"]

    def read(self, collection: str, id: str) -> dict[str, Any]:
        check_collection(collection)
        with self._lock:
            self._check_open()
            doc = self._data[collection].get(id)
            if doc is None:
                raise NotFound(f"{collection}/{id}")
            return _copy(doc)

    def exists(self, collection: str, id: str) -> bool:
        check_collection(collection)
        with self._lock:
            return id in self._data[collection]

    def update(self, collection: str, id: str, patch: Mapping[str, Any]) -> dict[str, Any]:
        check_collection(collection)
        patch = dict(patch)
        if patch.get("_id", id) != id:
            raise InvalidRecord("_id cannot change")
        patch.pop("_id", None)
        with self._lock:
            self._check_open()
            current = self._data[collection].get(id)
            if current is None:
                raise NotFound(f"{collection}/{id}")
            if not patch:
                return _copy(current)
            merged = {**current, **patch}
            violations = validate_document(collection, merged, strict=False)
            if violations:
                raise InvalidRecord(violations)
            self._check_unique(collection, merged)
            self._apply_put(collection, merged)
            self._journal(collection, "put", merged)
            return _copy(merged)

    def delete(self, collection: str, id: str) -> dict[str, Any]:
        check_collection(collection)
        with self._lock:
            self._check_open()
            doc = self._data[collection].get(id)
            if doc is None:
                raise NotFound(f"{collection}/{id}")
            self._apply_delete(collection, id)
            self._journal(collection, "del", {"_id": id})
            return _copy(doc)

    def list(self, collection: str) -> list[dict[str, Any]]:
        check_collection(collection)
        with self._lock:
            self._check_open()
            return [_copy(d) for d in self._data[collection].values()]

    def query(self, collection: str, predicate: Optional[Mapping[str, Any]] = None) -> list[dict[str, Any]]:
        check_collection(collection)
        predicate = dict(predicate or {})
        with self._lock:
            self._check_open()
            if set(predicate) == {"_id"}:
                doc = self._data[collection].get(predicate["_id"])
                return [_copy(doc)] if doc is not None else []
            return [
                _copy(d)
                for d in self._data[collection].values()
                if all(d.get(k) == v for k, v in predicate.items())
            ]

    def count(self, collection: str) -> int:
        check_collection(collection)
        with self._lock:
            return len(self._data[collection])

    def revision(self, collection: str, id: str) -> int:
        with self._lock:
            if (collection, id) not in self._revs:
                raise NotFound(f"{collection}/{id}")
            return self._revs[(collection, id)]

    # -- durability hooks -------------------------------------------------

    @property
    def staged_count(self) -> int:
        with self._lock:
            return len(self._staged)

    def flush(self) -> int:
        """Append every staged frame to the journal; returns how many were written."""
        with self._lock:
            if self._fh is None or not self._staged:
                return 0
            n = len(self._staged)
            self._fh.write(b"".join(self._staged))
            self._fh.flush()
            if self.write_concern.sync:
                os.fsync(self._fh.fileno())
            self._staged.clear()
            return n

    def crash(self, torn_tail: bytes = b"") -> None:
        """Simulate a process crash: lose staged writes and recover from the journal.

        ``torn_tail`` is appended to the journal first, as a half-written frame
        would be.
        """
        with self._lock:
            self._staged.clear()
            if self._fh is not None:
                if torn_tail:
                    self._fh.write(torn_tail)
                self._fh.close()
                self._fh = None
            self._reset()
            self._recover()

    def _flush_loop(self) -> None:
        interval = self.write_concern.flush_interval_ms / 1000
        while not self._stop.wait(interval):
            try:
                self.flush()
            except (OSError, ValueError):
                logger.exception("journal flush failed")

    def close(self) -> None:
        if self._closed:
            return
        self._stop.set()
        if self._flusher is not None:
            self._flusher.join()
        with self._lock:
            self.flush()
            if self._fh is not None:
                self._fh.close()
                self._fh = None
            self._closed = True


def _copy(doc: Mapping[str, Any]) -> dict[str, Any]:
    # one level of nesting is all the entities carry
    return {
        k: [dict(x) if isinstance(x, dict) else x for x in v] if isinstance(v, list)
        else dict(v) if isinstance(v, dict) else v
        for k, v in doc.items()
    }
