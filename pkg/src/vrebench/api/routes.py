from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional

from vrebench.model import COLLECTIONS

SEGMENTS = {
    "Accounts": "account",
    "Administrators": "administrator",
    "Categories": "category",
    "Clinicians": "clinician",
    "CliniciansPatients": "clinicianpatient",
    "Contents": "repository",
    "Goals": "goal",
    "Information": "information",
    "Patients": "patient",
    "TreatmentContent": "treatmentcontent",
    "Treatments": "treatment",
}
COLLECTION_OF_SEGMENT = {v: k for k, v in SEGMENTS.items()}


@dataclass(frozen=True)
class Route:
    method: str
    pattern: str
    guarded: bool
    handler: str
    collection: str


def build_route_table() -> list[Route]:
    """Five routes per collection: list/create on the root, read/update/delete on the item."""
    table = []
    for collection in COLLECTIONS:
        seg = SEGMENTS[collection]
        root = f"/api/{seg}"
        item = f"{root}/:{seg}Id"
        table += [
            Route("GET", root, False, f"{seg}.list", collection),
            Route("POST", root, True, f"{seg}.create", collection),
            Route("GET", item, False, f"{seg}.read", collection),
            Route("PUT", item, True, f"{seg}.update", collection),
            Route("DELETE", item, True, f"{seg}.delete", collection),
        ]
    return table


ROUTES = build_route_table()
_ITEM = re.compile(r"^/api/([a-z]+)(?:/([^/]+))?/?$")


def match(method: str, path: str) -> Optional[tuple[Route, Optional[str]]]:
    """Resolve a request path to its route and the item id, if any."""
    m = _ITEM.match(path.split("?", 1)[0])
    if not m or m.group(1) not in COLLECTION_OF_SEGMENT:
        return None
    collection = COLLECTION_OF_SEGMENT[m.group(1)]
    item_id = m.group(2)
    for route in ROUTES:
        if route.collection != collection or route.method != method:
            continue
        if (":" in route.pattern) == (item_id is not None):
            return route, item_id
    return None
