"""Declarative virtual-user scripts and the four recorded users.

A script is a tuple of actions. Only ``PageLoad`` produces page events; its
shell sub-requests and data requests are logged as requests of that page.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from typing import Any, Mapping, Optional, Union

from vrebench.seed import PROFILES, SeedProfile


class TemplateError(KeyError):
    pass


# {name}, {name[3]}, {name[i]}, {name%10}, {name:03d} and combinations
_PLACEHOLDER = re.compile(r"\{(\w+)(?:%(\d+))?(?:\[(\w+)\])?(?::([^{}]+))?\}")


def render(template: str, variables: Mapping[str, Any]) -> str:
    def sub(m: re.Match) -> str:
        name, mod, index, fmt = m.groups()
        if name not in variables:
            raise TemplateError(f"unknown variable {name!r}")
        value = variables[name]
        if mod is not None:
            value = int(value) % int(mod)
        if index is not None:
            pos = int(index) if index.isdigit() else variables.get(index)
            try:
                value = value[pos]
            except (IndexError, KeyError, TypeError) as exc:
                raise TemplateError(f"{name}[{index}] is not available") from exc
        return format(value, fmt) if fmt else str(value)

    return _PLACEHOLDER.sub(sub, template)


def render_value(value: Any, variables: Mapping[str, Any]) -> Any:
    if isinstance(value, str):
        return render(value, variables)
    if isinstance(value, dict):
        return {k: render_value(v, variables) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [render_value(v, variables) for v in value]
    return value


def extract(payload: Any, spec: str) -> Any:
    """Tiny path language: ``_id`` on an object, ``*._id`` over an array."""
    parts = spec.split(".")

    def walk(node: Any, rest: list[str]) -> Any:
        if not rest:
            return node
        head, tail = rest[0], rest[1:]
        if head == "*":
            if not isinstance(node, list):
                raise TemplateError(f"{spec}: expected an array")
            return [walk(item, tail) for item in node]
        if not isinstance(node, dict) or head not in node:
            raise TemplateError(f"{spec}: missing {head!r}")
        return walk(node[head], tail)

    return walk(payload, parts)


@dataclass(frozen=True)
class Multipart:
    fields: Mapping[str, str]
    filename: str
    size: int
    media_type: str = "application/octet-stream"


@dataclass(frozen=True)
class Login:
    username: str
    password: str


@dataclass(frozen=True)
class Logout:
    pass


@dataclass(frozen=True)
class Request:
    method: str
    path: str
    body: Any = None
    extract: Mapping[str, str] = field(default_factory=dict)
    label: str = ""
    # an extraction failure or unexpected status aborts the iteration when set
    required: bool = False

    @property
    def mutation(self) -> bool:
        return self.method.upper() in ("POST", "PUT", "DELETE", "PATCH")


@dataclass(frozen=True)
class PageLoad:
    name: str
    data: tuple[Request, ...] = ()
    shell: bool = True


@dataclass(frozen=True)
class Loop:
    count: int
    actions: tuple["Action", ...]
    var: str = "i"


@dataclass(frozen=True)
class Think:
    ms: float


Action = Union[Login, Logout, Request, PageLoad, Loop, Think]


@dataclass(frozen=True)
class VirtualUserScript:
    name: str
    actions: tuple[Action, ...]
    # page re-rendered after each mutation when refreshing
    view: Optional[PageLoad] = None
    requires: Mapping[str, int] = field(default_factory=dict)  # seed minimums: collection segment -> count


def count_mutations(actions: tuple[Action, ...]) -> int:
    total = 0
    for action in actions:
        if isinstance(action, Request) and action.mutation:
            total += 1
        elif isinstance(action, PageLoad):
            total += sum(r.mutation for r in action.data)
        elif isinstance(action, Loop):
            total += action.count * count_mutations(action.actions)
    return total


def _with_refresh(actions: tuple[Action, ...], view: PageLoad) -> tuple[Action, ...]:
    out: list[Action] = []
    for action in actions:
        if isinstance(action, Loop):
            out.append(replace(action, actions=_with_refresh(action.actions, view)))
            continue
        out.append(action)
        if isinstance(action, Request) and action.mutation:
            out.append(view)
    return tuple(out)


def refresh_mode(script: VirtualUserScript, mode: str) -> VirtualUserScript:
    """Refresh re-renders the script's view page after every mutation; NoRefresh leaves it alone."""
    if mode == "NoRefresh":
        return script
    if mode != "Refresh":
        raise ValueError(f"unknown mode {mode!r}")
    view = script.view or PageLoad("refresh")
    return replace(script, actions=_with_refresh(script.actions, view))


# -- the recorded users ---------------------------------------------------

def add100(profile: SeedProfile = PROFILES["default"], count: int = 100) -> VirtualUserScript:
    clinicians = PageLoad("clinicians", (Request("GET", "/api/clinician", label="List clinicians"),))
    return VirtualUserScript(
        "Add100",
        (
            PageLoad("login"),
            Login(profile.admin_username(0), profile.admin_password),
            clinicians,
            Loop(count, (
                Request("POST", "/api/account", {
                    "username": "c{run}u{user:02d}n{i:03d}",
                    "password": "clinician-password",
                    "role": "Clinician",
                    "displayName": "Clinician {user:02d}-{i:03d}",
                }, label="Add clinician"),
            )),
            Logout(),
        ),
        view=clinicians,
    )


def goal100(profile: SeedProfile = PROFILES["default"], count: int = 100) -> VirtualUserScript:
    patient = PageLoad("patient", (Request("GET", "/api/patient/{patientIds[0]}", label="View patient"),))
    return VirtualUserScript(
        "Goal100",
        (
            PageLoad("login"),
            Login(f"clinician{{user%{max(profile.clinicians, 1)}:02d}}", profile.clinician_password),
            PageLoad("patients", (
                Request("GET", "/api/patient", extract={"patientIds": "*._id"}, label="List patients", required=True),
            )),
            patient,
            Loop(count, (
                Request("POST", "/api/goal", {
                    "patientId": "{patientIds[0]}",
                    "description": "Goal {user:02d}-{i:03d}",
                    "term": "Short",
                }, label="Add goal"),
            )),
            Logout(),
        ),
        view=patient,
        requires={"patient": 1},
    )


def view100(profile: SeedProfile = PROFILES["default"], count: int = 100) -> VirtualUserScript:
    patients = PageLoad("patients", (
        Request("GET", "/api/patient", extract={"patientIds": "*._id"}, label="List patients", required=True),
    ))
    return VirtualUserScript(
        "View100",
        (
            PageLoad("login"),
            Login(f"clinician{{user%{max(profile.clinicians, 1)}:02d}}", profile.clinician_password),
            patients,
            Loop(count, (
                # viewing a patient and clicking back reloads both pages
                PageLoad("patient", (Request("GET", "/api/patient/{patientIds[i]}", label="View patient"),)),
                patients,
            )),
            Logout(),
        ),
        view=patients,
        requires={"patient": count},
    )


def update_rep100(profile: SeedProfile = PROFILES["default"], count: int = 100) -> VirtualUserScript:
    repository = PageLoad("repository", (
        Request("GET", "/api/repository", extract={"contentIds": "*._id"}, label="List repository", required=True),
    ))
    return VirtualUserScript(
        "UpdateRep100",
        (
            PageLoad("login"),
            Login(profile.admin_username(0), profile.admin_password),
            repository,
            Loop(count, (
                Request("PUT", "/api/repository/{contentIds[i]}", {"name": "rep-u{user:02d}-i{i:03d}"},
                        label="Rename repository item"),
            )),
            Logout(),
        ),
        view=repository,
        requires={"repository": count},
    )


def operations(profile: SeedProfile = PROFILES["default"], upload_bytes: int = 11_000_000) -> VirtualUserScript:
    """One of each operation in the time-decomposition table."""
    return VirtualUserScript(
        "Operations",
        (
            Login(profile.admin_username(0), profile.admin_password),
            Request("GET", "/api/patient", extract={"patientIds": "*._id"}, required=True),
            Request("GET", "/api/category", extract={"categoryIds": "*._id"}, required=True),
            Request("POST", "/api/treatment", {
                "patientId": "{patientIds[0]}", "title": "Stretch", "description": "Hold for ten seconds",
                "repetitionsPerDay": 3,
            }, extract={"treatmentId": "_id"}, label="Create treatment", required=True),
            Request("GET", "/api/treatment/{treatmentId}", label="View treatment"),
            Request("PUT", "/api/treatment/{treatmentId}", {"repetitionsPerDay": 4}, label="Update treatment"),
            Request("POST", "/api/repository", Multipart(
                {"name": "Upload {user:02d}", "pat_desc": "Video", "clin_desc": "Video", "category": "{categoryIds[0]}"},
                "exercise.mp4", upload_bytes, "video/mp4",
            ), extract={"contentId": "_id"}, label="Upload Repository", required=True),
            Request("POST", "/api/treatmentcontent", {"treatmentId": "{treatmentId}", "contentId": "{contentId}"},
                    extract={"linkId": "_id"}, label="Assign Content", required=True),
            Request("DELETE", "/api/treatmentcontent/{linkId}", label="Unassign Content"),
            Request("DELETE", "/api/treatment/{treatmentId}", label="Delete treatment"),
            Logout(),
        ),
    )


BUILTINS = {
    "Add100": add100,
    "Goal100": goal100,
    "View100": view100,
    "UpdateRep100": update_rep100,
    "Operations": operations,
}


def builtin(name: str, profile: SeedProfile = PROFILES["default"], **kwargs) -> VirtualUserScript:
    try:
        factory = BUILTINS[name]
    except KeyError:
        raise KeyError(f"unknown virtual user {name!r}; choose from {', '.join(BUILTINS)}") from None
    return factory(profile, **kwargs)
