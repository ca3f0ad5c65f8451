from __future__ import annotations

import dataclasses
from abc import ABC, abstractmethod
from dataclasses import dataclass
from enum import Enum
from typing import Any, Iterator, Mapping, Optional

from vrebench.model import (
    COLLECTIONS,
    BackendKind,
    Entity,
    collection_fields,
    entity_type,
    to_doc,
)


class StoreError(Exception):
    pass


class NotFound(StoreError):
    pass


class ReferentialViolation(StoreError):
    def __init__(self, violations: list[str] | str):
        self.violations = [violations] if isinstance(violations, str) else list(violations)
        super().__init__("; ".join(self.violations))


class DuplicateKey(StoreError):
    pass


class InvalidRecord(StoreError):
    def __init__(self, violations: list[str] | str):
        self.violations = [violations] if isinstance(violations, str) else list(violations)
        super().__init__("; ".join(self.violations))


class StoreClosed(StoreError):
    pass


class WriteMode(str, Enum):
    JOURNALED = "Journaled"
    ACKNOWLEDGED_UNJOURNALED = "AcknowledgedUnjournaled"


@dataclass(frozen=True)
class WriteConcern:
    mode: WriteMode = WriteMode.JOURNALED
    flush_interval_ms: int = 100
    # fsync after each journal write; off by default, a simulated crash only
    # discards what never reached the journal file
    sync: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "mode", WriteMode(self.mode))
        if self.flush_interval_ms <= 0:
            raise ValueError("flush_interval_ms must be positive")


JOURNALED = WriteConcern()
UNJOURNALED = WriteConcern(WriteMode.ACKNOWLEDGED_UNJOURNALED)


def check_collection(collection: str) -> None:
    if collection not in COLLECTIONS:
        raise NotFound(f"unknown collection {collection!r}")


def as_document(record: Entity | Mapping[str, Any]) -> dict[str, Any]:
    if isinstance(record, Entity):
        return to_doc(record)
    return dict(record)


def with_defaults(collection: str, doc: dict[str, Any]) -> dict[str, Any]:
    """Fill absent optional fields with the entity defaults, schema-default style."""
    if collection == "TreatmentContent":
        return doc
    cls = entity_type(collection)
    defaults = {f.name: f for f in dataclasses.fields(cls)}
    for spec in collection_fields(collection):
        if spec.required or spec.wire in doc:
            continue
        f = defaults[spec.attr]
        value = f.default_factory() if f.default_factory is not dataclasses.MISSING else f.default
        if isinstance(value, Enum):
            value = value.value
        elif isinstance(value, tuple):
            value = list(value)
        doc[spec.wire] = value
    return doc


def matches(doc: Mapping[str, Any], predicate: Mapping[str, Any]) -> bool:
    return all(doc.get(k) == v for k, v in predicate.items())


class Store(ABC):
    """CRUD and equality queries over the eleven collections."""

    kind: BackendKind

    @abstractmethod
    def create(self, collection: str, record: Entity | Mapping[str, Any]) -> str: ...

    @abstractmethod
    def read(self, collection: str, id: str) -> dict[str, Any]: ...

    @abstractmethod
    def update(self, collection: str, id: str, patch: Mapping[str, Any]) -> dict[str, Any]: ...

    @abstractmethod
    def delete(self, collection: str, id: str) -> dict[str, Any]: ...

    @abstractmethod
    def list(self, collection: str) -> list[dict[str, Any]]: ...

    @abstractmethod
    def revision(self, collection: str, id: str) -> int: ...

    @abstractmethod
    def close(self) -> None: ...

    def exists(self, collection: str, id: str) -> bool:
        try:
            self.read(collection, id)
        except NotFound:
            return False
        return True

    def query(self, collection: str, predicate: Optional[Mapping[str, Any]] = None) -> list[dict[str, Any]]:
        predicate = predicate or {}
        return [d for d in self.list(collection) if matches(d, predicate)]

    def count(self, collection: str) -> int:
        return len(self.list(collection))

    def find_one(self, collection: str, predicate: Mapping[str, Any]) -> Optional[dict[str, Any]]:
        found = self.query(collection, predicate)
        return found[0] if found else None

    def dump(self) -> Iterator[tuple[str, dict[str, Any]]]:
        for name in COLLECTIONS:
            for doc in self.list(name):
                yield name, doc

    def __enter__(self):
        return self

    def __exit__(self, *exc) -> None:
        self.close()
