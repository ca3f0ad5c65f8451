"""Deterministic fixture data for benchmarks: same records, in the same order, on either engine."""
from __future__ import annotations

import base64
import hashlib
import logging
from dataclasses import dataclass, field

from vrebench.auth import credentials
from vrebench.store import Store

logger = logging.getLogger(__name__)

# (name, parent index or None)
CATEGORY_TREE = (
    ("Exercises", None),
    ("Upper limb", 0),
    ("Lower limb", 0),
    ("Advice", None),
    ("Daily living", 3),
)
_MEDIA = (("video/mp4", ".mp4", "Video"), ("audio/mpeg", ".mp3", "Audio"), ("application/pdf", ".pdf", "Text"))


@dataclass(frozen=True)
class SeedProfile:
    administrators: int = 1
    clinicians: int = 10
    patients: int = 150
    contents: int = 150
    goals_per_patient: int = 1
    treatments_per_patient: int = 1
    admin_password: str = "admin-password"
    clinician_password: str = "clinician-password"
    patient_password: str = "patient-password"

    def admin_username(self, i: int = 0) -> str:
        return f"admin{i:02d}"

    def clinician_username(self, i: int) -> str:
        return f"clinician{i:02d}"

    def patient_username(self, i: int) -> str:
        return f"patient{i:03d}"


PROFILES = {
    "default": SeedProfile(),
    "small": SeedProfile(clinicians=2, patients=5, contents=5),
}


@dataclass
class SeedReport:
    counts: dict[str, int] = field(default_factory=dict)

    def bump(self, collection: str) -> None:
        self.counts[collection] = self.counts.get(collection, 0) + 1


def fixture_salt(username: str) -> str:
    """Salt derived from the username, so seeded stores are byte-identical run to run."""
    return base64.b64encode(hashlib.sha256(b"vre-seed:" + username.encode()).digest()[:16]).decode("ascii")


def seed(store: Store, profile: SeedProfile | str = "default", content_root: str = "/VRE_REPOS") -> SeedReport:
    if isinstance(profile, str):
        profile = PROFILES[profile]
    report = SeedReport()

    def create(collection: str, record: dict) -> str:
        new_id = store.create(collection, record)
        report.bump(collection)
        return new_id

    def account(username: str, password: str, role: str, display: str) -> tuple[str, str]:
        acct = create("Accounts", {"username": username, "role": role,
                                   **credentials(password, fixture_salt(username))})
        profile_coll = {"Administrator": "Administrators", "Clinician": "Clinicians", "Patient": "Patients"}[role]
        return acct, create(profile_coll, {"accountId": acct, "displayName": display})

    admin_accounts = []
    for i in range(profile.administrators):
        acct, _ = account(profile.admin_username(i), profile.admin_password, "Administrator", f"Administrator {i:02d}")
        admin_accounts.append(acct)

    clinicians = []
    clinician_accounts = []
    for i in range(profile.clinicians):
        acct, cid = account(profile.clinician_username(i), profile.clinician_password, "Clinician", f"Clinician {i:02d}")
        clinicians.append(cid)
        clinician_accounts.append(acct)

    patients = []
    for i in range(profile.patients):
        _, pid = account(profile.patient_username(i), profile.patient_password, "Patient", f"Patient {i:03d}")
        patients.append(pid)
        if clinicians:
            create("CliniciansPatients", {"clinicianId": clinicians[i % len(clinicians)], "patientId": pid})

    categories: list[str] = []
    for name, parent in CATEGORY_TREE:
        categories.append(create("Categories", {"name": name, "parentId": categories[parent] if parent is not None else None}))

    leaf_categories = [categories[i] for i, (_, parent) in enumerate(CATEGORY_TREE) if parent is not None]
    creator = admin_accounts[0] if admin_accounts else clinician_accounts[0]
    contents = []
    sep = "\\" if "\\" in content_root and "/" not in content_root else "/"
    for i in range(profile.contents):
        media_type, ext, kind = _MEDIA[i % len(_MEDIA)]
        contents.append(create("Contents", {
            "name": f"Content {i:04d}",
            "mediaType": media_type,
            "patient_description": f"Patient notes for item {i:04d}",
            "clinician_description": f"Clinician notes for item {i:04d}",
            "categoryId": leaf_categories[i % len(leaf_categories)],
            "path": content_root.rstrip("/\\") + sep + f"seed{i:020d}{ext}",
            "creatorId": creator,
            "kind": kind,
        }))

    for p, pid in enumerate(patients):
        author = clinician_accounts[p % len(clinician_accounts)] if clinician_accounts else creator
        for g in range(profile.goals_per_patient):
            create("Goals", {
                "patientId": pid,
                "description": f"Walk {10 + g} minutes each day",
                "term": "Short" if g % 2 == 0 else "Long",
                "comments": [{"authorId": author, "text": "Baseline goal", "timestamp": "2015-06-01T09:00:00Z"}],
            })
        for t in range(profile.treatments_per_patient):
            tid = create("Treatments", {
                "patientId": pid,
                "title": f"Treatment {t + 1}",
                "description": "Repeat the exercise shown in the video",
                "repetitionsPerDay": 3,
            })
            if contents:
                create("TreatmentContent", {"treatmentId": tid, "contentId": contents[(p + t) % len(contents)]})
        info = create("Information", {"patientId": pid, "title": "Getting started", "body": "Rest between sets."})
        if contents:
            create("TreatmentContent", {"informationId": info, "contentId": contents[p % len(contents)]})
    logger.info("seeded %s", report.counts)
    return report
