"""Domain entities shared by both storage backends, the API and the seeder.

Entities are frozen dataclasses. Their wire form is a flat document: the id
travels as ``_id``, references and most fields are camelCase, and the two
content description fields keep the snake_case names the upload form uses.
"""
from __future__ import annotations

import dataclasses
import itertools
import os
import secrets
import struct
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Iterator, Mapping, Optional, Protocol


class Role(str, Enum):
    ADMINISTRATOR = "Administrator"
    CLINICIAN = "Clinician"
    PATIENT = "Patient"


class Term(str, Enum):
    # extend here if longer-running goals need their own bucket
    SHORT = "Short"
    LONG = "Long"


class ContentKind(str, Enum):
    VIDEO = "Video"
    AUDIO = "Audio"
    TEXT = "Text"
    OTHER = "Other"


class PasswordScheme(str, Enum):
    PBKDF2_SHA256 = "Pbkdf2Sha256"
    LEGACY_SHA256_CONCAT = "LegacySha256Concat"


class BackendKind(str, Enum):
    DOCUMENT = "document"
    NORMALIZED = "normalized"


COLLECTIONS = (
    "Accounts",
    "Administrators",
    "Categories",
    "Clinicians",
    "CliniciansPatients",
    "Contents",
    "Goals",
    "Information",
    "Patients",
    "TreatmentContent",
    "Treatments",
)

# kept snake_case on the wire, as posted by the repository upload form
_SNAKE_WIRE = frozenset({"patient_description", "clinician_description"})
PRIVATE_ACCOUNT_FIELDS = frozenset({"salt", "passwordHash", "scheme"})


def wire_name(attr: str) -> str:
    if attr == "id":
        return "_id"
    if attr in _SNAKE_WIRE:
        return attr
    head, *rest = attr.split("_")
    return head + "".join(part.title() for part in rest)


def _f(
    *,
    ref: Optional[str] = None,
    nonempty: bool = False,
    enum: Optional[type[Enum]] = None,
    type: type = str,
    default: Any = dataclasses.MISSING,
    default_factory: Any = dataclasses.MISSING,
) -> Any:
    meta = {"ref": ref, "nonempty": nonempty, "enum": enum, "type": type}
    if default_factory is not dataclasses.MISSING:
        return field(default_factory=default_factory, metadata=meta)
    return field(default=default, metadata=meta)


@dataclass(frozen=True, kw_only=True)
class Entity:
    id: Optional[str] = field(default=None, compare=True)


@dataclass(frozen=True, kw_only=True)
class Account(Entity):
    username: str = _f(nonempty=True)
    salt: str = _f()
    password_hash: str = _f(nonempty=True)
    role: Role = _f(enum=Role)
    scheme: PasswordScheme = _f(enum=PasswordScheme, default=PasswordScheme.PBKDF2_SHA256)


@dataclass(frozen=True, kw_only=True)
class Administrator(Entity):
    account_id: str = _f(ref="Accounts")
    display_name: str = _f(nonempty=True)


@dataclass(frozen=True, kw_only=True)
class Clinician(Entity):
    account_id: str = _f(ref="Accounts")
    display_name: str = _f(nonempty=True)


@dataclass(frozen=True, kw_only=True)
class Patient(Entity):
    """Minimal personal data only: no address, phone or date of birth."""

    account_id: str = _f(ref="Accounts")
    display_name: str = _f(nonempty=True)
    interface_config: dict = _f(type=dict, default_factory=dict)


@dataclass(frozen=True, kw_only=True)
class ClinicianPatientLink(Entity):
    clinician_id: str = _f(ref="Clinicians")
    patient_id: str = _f(ref="Patients")


@dataclass(frozen=True, kw_only=True)
class Category(Entity):
    name: str = _f(nonempty=True)
    parent_id: Optional[str] = _f(ref="Categories", default=None)


@dataclass(frozen=True, kw_only=True)
class Content(Entity):
    name: str = _f(nonempty=True)
    media_type: str = _f()
    patient_description: str = _f(default="")
    clinician_description: str = _f(default="")
    category_id: str = _f(ref="Categories")
    path: str = _f(nonempty=True)
    creator_id: str = _f(ref="Accounts")
    kind: ContentKind = _f(enum=ContentKind, default=ContentKind.OTHER)


@dataclass(frozen=True)
class GoalComment:
    author_id: str
    text: str
    timestamp: str

    def to_doc(self) -> dict:
        return {"authorId": self.author_id, "text": self.text, "timestamp": self.timestamp}

    @classmethod
    def from_doc(cls, doc: Mapping[str, Any]) -> "GoalComment":
        return cls(author_id=doc["authorId"], text=doc["text"], timestamp=doc["timestamp"])


@dataclass(frozen=True, kw_only=True)
class Goal(Entity):
    patient_id: str = _f(ref="Patients")
    description: str = _f(nonempty=True)
    term: Term = _f(enum=Term, default=Term.SHORT)
    comments: tuple = _f(type=list, default=())


@dataclass(frozen=True, kw_only=True)
class Treatment(Entity):
    patient_id: str = _f(ref="Patients")
    title: str = _f(nonempty=True)
    description: str = _f(default="")
    repetitions_per_day: int = _f(type=int, default=0)


@dataclass(frozen=True, kw_only=True)
class Information(Entity):
    patient_id: str = _f(ref="Patients")
    title: str = _f(nonempty=True)
    body: str = _f(default="")


@dataclass(frozen=True, kw_only=True)
class TreatmentContentLink(Entity):
    treatment_id: str = _f(ref="Treatments")
    content_id: str = _f(ref="Contents")


@dataclass(frozen=True, kw_only=True)
class InformationContentLink(Entity):
    information_id: str = _f(ref="Information")
    content_id: str = _f(ref="Contents")


ENTITY_TYPES: dict[str, type[Entity]] = {
    "Accounts": Account,
    "Administrators": Administrator,
    "Categories": Category,
    "Clinicians": Clinician,
    "CliniciansPatients": ClinicianPatientLink,
    "Contents": Content,
    "Goals": Goal,
    "Information": Information,
    "Patients": Patient,
    "TreatmentContent": TreatmentContentLink,
    "Treatments": Treatment,
}
ROLE_PROFILES = {
    Role.ADMINISTRATOR: "Administrators",
    Role.CLINICIAN: "Clinicians",
    Role.PATIENT: "Patients",
}
PROFILE_ROLES = {v: k for k, v in ROLE_PROFILES.items()}


def collection_of(entity: Entity) -> str:
    if isinstance(entity, InformationContentLink):
        return "TreatmentContent"
    for name, cls in ENTITY_TYPES.items():
        if type(entity) is cls:
            return name
    raise TypeError(f"not a domain entity: {entity!r}")


def entity_type(collection: str, doc: Optional[Mapping[str, Any]] = None) -> type[Entity]:
    if collection not in ENTITY_TYPES:
        raise KeyError(f"unknown collection {collection!r}")
    if collection == "TreatmentContent" and doc is not None and doc.get("informationId") is not None:
        return InformationContentLink
    return ENTITY_TYPES[collection]


@dataclass(frozen=True)
class FieldSpec:
    attr: str
    wire: str
    ref: Optional[str]
    required: bool
    nonempty: bool
    enum: Optional[type[Enum]]
    type: type


def field_specs(cls: type[Entity]) -> list[FieldSpec]:
    specs = []
    for f in dataclasses.fields(cls):
        if f.name == "id":
            continue
        required = f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING
        specs.append(
            FieldSpec(
                attr=f.name,
                wire=wire_name(f.name),
                ref=f.metadata.get("ref"),
                required=required,
                nonempty=f.metadata.get("nonempty", False),
                enum=f.metadata.get("enum"),
                type=f.metadata.get("type", str),
            )
        )
    return specs


def collection_fields(collection: str) -> list[FieldSpec]:
    """Every wire field a collection may carry (both link variants for TreatmentContent)."""
    if collection == "TreatmentContent":
        seen: dict[str, FieldSpec] = {}
        for cls in (TreatmentContentLink, InformationContentLink):
            for spec in field_specs(cls):
                seen.setdefault(spec.wire, dataclasses.replace(spec, required=spec.wire == "contentId"))
        return list(seen.values())
    return field_specs(entity_type(collection))


# unique constraints besides the id, checked by both backends
UNIQUE_KEYS: dict[str, list[tuple[str, ...]]] = {
    "Accounts": [("username",)],
    "CliniciansPatients": [("clinicianId", "patientId")],
    "TreatmentContent": [("treatmentId", "contentId"), ("informationId", "contentId")],
}


def to_doc(entity: Entity, *, public: bool = False) -> dict[str, Any]:
    doc: dict[str, Any] = {}
    if entity.id is not None:
        doc["_id"] = entity.id
    for f in dataclasses.fields(entity):
        if f.name == "id":
            continue
        value = getattr(entity, f.name)
        if isinstance(value, Enum):
            value = value.value
        elif f.name == "comments":
            value = [c.to_doc() for c in value]
        elif isinstance(value, dict):
            value = dict(value)
        doc[wire_name(f.name)] = value
    if public and isinstance(entity, Account):
        for key in PRIVATE_ACCOUNT_FIELDS:
            doc.pop(key, None)
    return doc


def from_doc(collection: str, doc: Mapping[str, Any]) -> Entity:
    cls = entity_type(collection, doc)
    kwargs: dict[str, Any] = {}
    if "_id" in doc:
        kwargs["id"] = doc["_id"]
    for spec in field_specs(cls):
        if spec.wire not in doc:
            continue
        value = doc[spec.wire]
        if spec.enum is not None and value is not None:
            value = spec.enum(value)
        elif spec.attr == "comments":
            value = tuple(GoalComment.from_doc(c) for c in value)
        kwargs[spec.attr] = value
    return cls(**kwargs)


def public_doc(collection: str, doc: Mapping[str, Any]) -> dict[str, Any]:
    """Strip credential fields before a document leaves the service."""
    if collection != "Accounts":
        return dict(doc)
    return {k: v for k, v in doc.items() if k not in PRIVATE_ACCOUNT_FIELDS}


# -- ids --------------------------------------------------------------------

class _ObjectIds:
    """12-byte ids: seconds, per-process random, counter. Hex encoded."""

    def __init__(self) -> None:
        self._random = os.urandom(5)
        self._counter = itertools.count(int.from_bytes(os.urandom(3), "big"))
        self._lock = threading.Lock()

    def __call__(self) -> str:
        with self._lock:
            n = next(self._counter) & 0xFFFFFF
        raw = struct.pack(">I", int(time.time()) & 0xFFFFFFFF) + self._random + n.to_bytes(3, "big")
        return raw.hex()


class SequenceIds:
    """Monotone decimal ids, as an identity column would hand out."""

    def __init__(self, start: int = 1) -> None:
        self._next = start
        self._lock = threading.Lock()

    def bump_past(self, value: int) -> None:
        with self._lock:
            self._next = max(self._next, value + 1)

    def __call__(self) -> str:
        with self._lock:
            value = self._next
            self._next += 1
        return str(value)


_object_ids = _ObjectIds()


def id_factory(kind: BackendKind | str) -> Callable[[], str]:
    kind = BackendKind(kind)
    if kind is BackendKind.DOCUMENT:
        return _object_ids
    return SequenceIds()


def new_entity_id(kind: BackendKind | str) -> str:
    """A fresh id in the backend's format.

    Normalized ids come from a per-table sequence; calling this for the
    normalized kind starts a throwaway sequence, so tables should hold their
    own ``id_factory``.
    """
    return id_factory(kind)()


def random_token(nbytes: int = 18) -> str:
    return secrets.token_urlsafe(nbytes)


# -- validation -------------------------------------------------------------

class Lookup(Protocol):
    def exists(self, collection: str, id: str) -> bool: ...
    def read(self, collection: str, id: str) -> dict: ...
    def list(self, collection: str) -> list[dict]: ...


def _type_ok(spec: FieldSpec, value: Any) -> bool:
    if spec.enum is not None:
        return value in {m.value for m in spec.enum}
    if spec.type is int:
        return isinstance(value, int) and not isinstance(value, bool) and value >= 0
    if spec.type is list:
        return isinstance(value, (list, tuple)) and all(
            isinstance(c, Mapping) and {"authorId", "text", "timestamp"} <= set(c) for c in value
        )
    return isinstance(value, spec.type)


def validate_document(
    collection: str,
    doc: Mapping[str, Any],
    store: Optional[Lookup] = None,
    *,
    strict: bool = True,
    content_root: Optional[str] = None,
) -> list[str]:
    """Every violated invariant of ``doc``; empty when the record is valid.

    Without ``strict`` only field presence is checked, which is all the
    document backend asks of a write.
    """
    violations: list[str] = []
    specs = collection_fields(collection)
    for spec in specs:
        value = doc.get(spec.wire)
        if value is None:
            if spec.required:
                violations.append(f"missing {spec.wire}")
            continue
        if not strict:
            continue
        if not _type_ok(spec, value):
            violations.append(f"invalid {spec.wire}")
        elif spec.nonempty and not value:
            violations.append(f"empty {spec.wire}")
    if not strict:
        return violations

    known = {s.wire for s in specs} | {"_id"}
    violations.extend(f"unknown field {k}" for k in doc if k not in known)

    if collection == "TreatmentContent":
        owners = [k for k in ("treatmentId", "informationId") if doc.get(k) is not None]
        if len(owners) != 1:
            violations.append("link needs exactly one of treatmentId, informationId")
    if collection == "Contents" and content_root and isinstance(doc.get("path"), str):
        if not doc["path"].startswith(content_root):
            violations.append("path outside content root")

    if store is None:
        return violations

    for spec in specs:
        value = doc.get(spec.wire)
        if spec.ref and isinstance(value, str) and not store.exists(spec.ref, value):
            violations.append(f"dangling {spec.wire}")
    if collection == "Goals":
        for comment in doc.get("comments") or ():
            author = comment.get("authorId") if isinstance(comment, Mapping) else None
            if author is not None and not store.exists("Accounts", author):
                violations.append("dangling comment authorId")

    if collection in PROFILE_ROLES and isinstance(doc.get("accountId"), str):
        if store.exists("Accounts", doc["accountId"]):
            role = store.read("Accounts", doc["accountId"]).get("role")
            if role != PROFILE_ROLES[collection].value:
                violations.append("role mismatch accountId")

    if collection == "Categories" and doc.get("parentId") is not None and doc.get("_id") is not None:
        if _has_cycle(doc["_id"], doc["parentId"], store):
            violations.append("category cycle")

    for key in UNIQUE_KEYS.get(collection, ()):
        if len(key) < 2 or any(doc.get(k) is None for k in key):
            continue
        pair = tuple(doc[k] for k in key)
        for other in store.list(collection):
            if other.get("_id") != doc.get("_id") and tuple(other.get(k) for k in key) == pair:
                violations.append("duplicate link")
                break
    return violations


def _has_cycle(start: str, parent: str, store: Lookup) -> bool:
    seen = {start}
    current: Optional[str] = parent
    while current is not None:
        if current in seen:
            return True
        seen.add(current)
        if not store.exists("Categories", current):
            return False
        current = store.read("Categories", current).get("parentId")
    return False


def validate_entity(record: Entity | Mapping[str, Any], store: Lookup, collection: Optional[str] = None) -> list[str]:
    if isinstance(record, Entity):
        collection = collection or collection_of(record)
        doc = to_doc(record)
    else:
        if collection is None:
            raise ValueError("collection is required for raw documents")
        doc = dict(record)
    return validate_document(collection, doc, store)


def iter_store(store: Lookup) -> Iterator[tuple[str, dict]]:
    for name in COLLECTIONS:
        for doc in store.list(name):
            yield name, doc
