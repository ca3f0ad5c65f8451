from pathlib import Path

from vrebench.store.base import (
    JOURNALED,
    UNJOURNALED,
    DuplicateKey,
    InvalidRecord,
    NotFound,
    ReferentialViolation,
    Store,
    StoreClosed,
    StoreError,
    WriteConcern,
    WriteMode,
)
from vrebench.store.document import DocumentStore
from vrebench.store.normalized import NormalizedStore
from vrebench.store.oracle import Op, Ref, Verdict, canonical_dump, equivalence_oracle, random_valid_ops


def open_store(backend: str, data_dir=None, write_concern: WriteConcern = JOURNALED) -> Store:
    """Open the named engine under ``data_dir`` (in memory when None)."""
    if data_dir is not None:
        Path(data_dir).mkdir(parents=True, exist_ok=True)
    if backend == "document":
        return DocumentStore(data_dir, write_concern)
    if backend == "normalized":
        return NormalizedStore(data_dir)
    raise ValueError(f"unknown backend {backend!r}; expected 'document' or 'normalized'")


__all__ = [
    "JOURNALED",
    "UNJOURNALED",
    "DocumentStore",
    "DuplicateKey",
    "InvalidRecord",
    "NormalizedStore",
    "NotFound",
    "Op",
    "ReferentialViolation",
    "Ref",
    "Store",
    "StoreClosed",
    "StoreError",
    "Verdict",
    "canonical_dump",
    "WriteConcern",
    "WriteMode",
    "equivalence_oracle",
    "open_store",
    "random_valid_ops",
]
