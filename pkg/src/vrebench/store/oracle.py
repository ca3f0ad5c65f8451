"""Replay one operation sequence on both engines and diff what a client would see."""
from __future__ import annotations

import random
import tempfile
from dataclasses import dataclass, field
from typing import Any, Iterable, Optional

from vrebench.model import COLLECTIONS, collection_fields
from vrebench.store.base import JOURNALED, InvalidRecord, ReferentialViolation, Store, StoreError
from vrebench.store.document import DocumentStore
from vrebench.store.normalized import NormalizedStore


@dataclass(frozen=True)
class Ref:
    """The id produced by the create at position ``op`` of the sequence."""

    op: int


@dataclass(frozen=True)
class Op:
    action: str  # create | read | update | delete | list
    collection: str
    target: Optional[Ref] = None
    record: Optional[dict] = None


@dataclass
class Divergence:
    index: int
    op: Op
    results: dict[str, Any]
    expected_by_design: bool


@dataclass
class Verdict:
    divergences: list[Divergence] = field(default_factory=list)
    ops: int = 0

    @property
    def equivalent(self) -> bool:
        return not self.divergences

    @property
    def unexpected(self) -> list[Divergence]:
        return [d for d in self.divergences if not d.expected_by_design]


_ID_FIELDS = {
    name: {"_id": name, **{s.wire: s.ref for s in collection_fields(name) if s.ref}} for name in COLLECTIONS
}


class _Replayer:
    def __init__(self, store: Store):
        self.store = store
        self.ids: dict[int, str] = {}
        self.labels: dict[tuple[str, str], str] = {}

    def resolve(self, value: Any) -> Any:
        if isinstance(value, Ref):
            # a create that failed here leaves its ref dangling on purpose
            return self.ids.get(value.op, f"missing-{value.op}")
        if isinstance(value, dict):
            return {k: self.resolve(v) for k, v in value.items()}
        if isinstance(value, list):
            return [self.resolve(v) for v in value]
        return value

    def label(self, collection: str, doc: dict) -> dict:
        out = {}
        for key, value in doc.items():
            target = _ID_FIELDS[collection].get(key)
            if target is not None and isinstance(value, str):
                value = self.labels.get((target, value), "?")
            elif key == "comments" and isinstance(value, list):
                value = [
                    {**c, "authorId": self.labels.get(("Accounts", c.get("authorId")), "?")}
                    if isinstance(c, dict) else c
                    for c in value
                ]
            out[key] = value
        return out

    def apply(self, index: int, op: Op) -> tuple[str, Any]:
        try:
            if op.action == "create":
                new_id = self.store.create(op.collection, self.resolve(op.record))
                self.ids[index] = new_id
                self.labels[(op.collection, new_id)] = f"#{index}"
                return "ok", f"#{index}"
            if op.action == "list":
                return "ok", [self.label(op.collection, d) for d in self.store.list(op.collection)]
            target = self.resolve(op.target)
            if op.action == "read":
                return "ok", self.label(op.collection, self.store.read(op.collection, target))
            if op.action == "update":
                doc = self.store.update(op.collection, target, self.resolve(op.record or {}))
                return "ok", self.label(op.collection, doc)
            if op.action == "delete":
                return "ok", self.label(op.collection, self.store.delete(op.collection, target))
        except StoreError as exc:
            return "error", type(exc).__name__
        raise ValueError(f"unknown action {op.action!r}")


def _by_design(results: dict[str, tuple[str, Any]]) -> bool:
    normalized = results.get("normalized")
    document = results.get("document")
    if normalized is None or document is None:
        return False
    return (
        normalized[0] == "error"
        and normalized[1] in (ReferentialViolation.__name__, InvalidRecord.__name__)
        and document[0] == "ok"
    )


def equivalence_oracle(
    ops: Iterable[Op],
    document: Optional[Store] = None,
    normalized: Optional[Store] = None,
) -> Verdict:
    """Replay ``ops`` on both engines; report every observable difference.

    Fresh in-memory engines (journaled) are used unless given. A divergence
    where only the normalized engine refused the write is marked
    expected-by-design: that is the referential-integrity contrast.
    """
    owned = []
    if document is None:
        document = DocumentStore(None, JOURNALED)
        owned.append(document)
    if normalized is None:
        normalized = NormalizedStore(None)
        owned.append(normalized)
    replayers = {"document": _Replayer(document), "normalized": _Replayer(normalized)}
    verdict = Verdict()
    try:
        for index, op in enumerate(ops):
            results = {name: r.apply(index, op) for name, r in replayers.items()}
            verdict.ops += 1
            if results["document"] != results["normalized"]:
                verdict.divergences.append(Divergence(index, op, results, _by_design(results)))
    finally:
        for store in owned:
            store.close()
    return verdict


# -- workload generation ----------------------------------------------------

_REFS = {
    "Administrators": {"accountId": "Accounts"},
    "Clinicians": {"accountId": "Accounts"},
    "Patients": {"accountId": "Accounts"},
    "CliniciansPatients": {"clinicianId": "Clinicians", "patientId": "Patients"},
    "Categories": {"parentId": "Categories"},
    "Contents": {"categoryId": "Categories", "creatorId": "Accounts"},
    "Goals": {"patientId": "Patients"},
    "Treatments": {"patientId": "Patients"},
    "Information": {"patientId": "Patients"},
    "TreatmentContent": {"treatmentId": "Treatments", "informationId": "Information", "contentId": "Contents"},
}
_PROFILE_ROLE = {"Administrators": "Administrator", "Clinicians": "Clinician", "Patients": "Patient"}


class _Model:
    """Live records of the generated workload, as Refs, for producing only valid ops."""

    def __init__(self, rng: random.Random):
        self.rng = rng
        self.live: dict[str, dict[int, dict]] = {c: {} for c in COLLECTIONS}
        self.counter = 0

    def pick(self, collection: str, **where: Any) -> Optional[int]:
        choices = [k for k, d in self.live[collection].items() if all(d.get(f) == v for f, v in where.items())]
        return self.rng.choice(choices) if choices else None

    def referenced(self, collection: str, key: int) -> bool:
        ref = Ref(key)
        for coll, fields in _REFS.items():
            for fname, target in fields.items():
                if target != collection:
                    continue
                if any(d.get(fname) == ref for d in self.live[coll].values()):
                    return True
        if collection == "Accounts":
            for goal in self.live["Goals"].values():
                if any(c["authorId"] == ref for c in goal.get("comments", [])):
                    return True
        return False

    def fresh(self, prefix: str) -> str:
        self.counter += 1
        return f"{prefix}-{self.counter}"

    def new_record(self, collection: str) -> Optional[dict]:
        rng = self.rng
        if collection == "Accounts":
            role = rng.choice(["Administrator", "Clinician", "Patient"])
            return {"username": self.fresh("user"), "salt": "c2FsdA==", "passwordHash": "aGFzaA==", "role": role}
        if collection in _PROFILE_ROLE:
            acct = self.pick("Accounts", role=_PROFILE_ROLE[collection])
            if acct is None:
                return None
            rec = {"accountId": Ref(acct), "displayName": self.fresh("name")}
            if collection == "Patients" and rng.random() < 0.5:
                rec["interfaceConfig"] = {"fontScale": rng.choice([1, 2]), "theme": rng.choice(["dark", "light"])}
            return rec
        if collection == "CliniciansPatients":
            c, p = self.pick("Clinicians"), self.pick("Patients")
            if c is None or p is None:
                return None
            pair = (Ref(c), Ref(p))
            if any((d["clinicianId"], d["patientId"]) == pair for d in self.live[collection].values()):
                return None
            return {"clinicianId": pair[0], "patientId": pair[1]}
        if collection == "Categories":
            parent = self.pick("Categories") if rng.random() < 0.5 else None
            return {"name": self.fresh("cat"), "parentId": Ref(parent) if parent is not None else None}
        if collection == "Contents":
            cat, creator = self.pick("Categories"), self.pick("Accounts")
            if cat is None or creator is None:
                return None
            return {
                "name": self.fresh("content"),
                "mediaType": "video/mp4",
                "patient_description": "for patients",
                "clinician_description": "for clinicians",
                "categoryId": Ref(cat),
                "path": "/repo/" + self.fresh("file") + ".mp4",
                "creatorId": Ref(creator),
                "kind": rng.choice(["Video", "Audio", "Text", "Other"]),
            }
        if collection in ("Goals", "Treatments", "Information"):
            patient = self.pick("Patients")
            if patient is None:
                return None
            if collection == "Goals":
                rec = {"patientId": Ref(patient), "description": self.fresh("walk"), "term": rng.choice(["Short", "Long"])}
                author = self.pick("Accounts")
                if author is not None and rng.random() < 0.3:
                    rec["comments"] = [{"authorId": Ref(author), "text": "good", "timestamp": "2015-08-01T10:00:00Z"}]
                return rec
            if collection == "Treatments":
                return {
                    "patientId": Ref(patient),
                    "title": self.fresh("treatment"),
                    "description": "stretch",
                    "repetitionsPerDay": rng.randint(0, 5),
                }
            return {"patientId": Ref(patient), "title": self.fresh("info"), "body": "advice"}
        if collection == "TreatmentContent":
            content = self.pick("Contents")
            owner_field, owner_coll = rng.choice([("treatmentId", "Treatments"), ("informationId", "Information")])
            owner = self.pick(owner_coll)
            if content is None or owner is None:
                return None
            pair = (Ref(owner), Ref(content))
            if any((d.get(owner_field), d["contentId"]) == pair for d in self.live[collection].values()):
                return None
            return {owner_field: pair[0], "contentId": pair[1]}
        raise KeyError(collection)

    def patch_for(self, collection: str) -> dict:
        rng = self.rng
        options = {
            "Accounts": lambda: {"username": self.fresh("renamed")},
            "Administrators": lambda: {"displayName": self.fresh("name")},
            "Clinicians": lambda: {"displayName": self.fresh("name")},
            "Patients": lambda: {"interfaceConfig": {"fontScale": rng.randint(1, 3)}},
            "CliniciansPatients": lambda: {},
            "Categories": lambda: {"name": self.fresh("cat")},
            "Contents": lambda: {"name": self.fresh("renamed"), "kind": rng.choice(["Video", "Audio", "Text", "Other"])},
            "Goals": lambda: {"description": self.fresh("walk"), "term": rng.choice(["Short", "Long"])},
            "Treatments": lambda: {"repetitionsPerDay": rng.randint(0, 9)},
            "Information": lambda: {"body": self.fresh("body")},
            "TreatmentContent": lambda: {},
        }
        return options[collection]()


_CREATE_WEIGHTS = {
    "Accounts": 6,
    "Administrators": 1,
    "Clinicians": 2,
    "Patients": 4,
    "CliniciansPatients": 2,
    "Categories": 2,
    "Contents": 3,
    "Goals": 4,
    "Treatments": 3,
    "Information": 2,
    "TreatmentContent": 3,
}


def random_valid_ops(n: int, seed: int = 0) -> list[Op]:
    """``n`` referentially valid CRUD operations, reproducible from ``seed``."""
    rng = random.Random(seed)
    model = _Model(rng)
    ops: list[Op] = []
    deleted: list[tuple[str, int]] = []
    names = list(_CREATE_WEIGHTS)
    weights = [_CREATE_WEIGHTS[c] for c in names]
    while len(ops) < n:
        action = rng.choices(["create", "read", "update", "delete", "list"], [45, 20, 20, 8, 7])[0]
        if action == "create":
            collection = rng.choices(names, weights)[0]
            record = model.new_record(collection)
            if record is None:
                continue
            model.live[collection][len(ops)] = record
            ops.append(Op("create", collection, record=record))
            continue
        if action == "list":
            ops.append(Op("list", rng.choice(names)))
            continue
        populated = [c for c in names if model.live[c]]
        if not populated:
            continue
        collection = rng.choice(populated)
        key = rng.choice(list(model.live[collection]))
        if action == "read":
            if deleted and rng.random() < 0.1:
                gone_coll, gone_key = rng.choice(deleted)
                ops.append(Op("read", gone_coll, Ref(gone_key)))
            else:
                ops.append(Op("read", collection, Ref(key)))
        elif action == "update":
            patch = model.patch_for(collection)
            model.live[collection][key] = {**model.live[collection][key], **patch}
            ops.append(Op("update", collection, Ref(key), patch))
        elif action == "delete":
            if model.referenced(collection, key):
                continue
            del model.live[collection][key]
            deleted.append((collection, key))
            ops.append(Op("delete", collection, Ref(key)))
    return ops


def temporary_stores(journal_dir: Optional[str] = None) -> tuple[DocumentStore, NormalizedStore]:
    """File-backed journaled pair, for replays that should touch disk."""
    root = journal_dir or tempfile.mkdtemp(prefix="vre-oracle-")
    return DocumentStore(root, JOURNALED), NormalizedStore(root)


def canonical_dump(store: Store) -> list[tuple[str, dict[str, Any]]]:
    """Every document with ids replaced by ``Collection#n`` in listing order, for diffing stores."""
    labels: dict[tuple[str, str], str] = {}
    docs = list(store.dump())
    counters: dict[str, int] = {}
    for collection, doc in docs:
        n = counters.get(collection, 0)
        counters[collection] = n + 1
        labels[(collection, str(doc["_id"]))] = f"{collection}#{n}"
    out = []
    for collection, doc in docs:
        fields_ = _ID_FIELDS[collection]
        item: dict[str, Any] = {}
        for key, value in doc.items():
            target = fields_.get(key)
            if target is not None and isinstance(value, str):
                value = labels.get((target, value), "?")
            elif key == "comments" and isinstance(value, list):
                value = [{**c, "authorId": labels.get(("Accounts", c.get("authorId")), "?")} for c in value]
            item[key] = value
        out.append((collection, item))
    return out
