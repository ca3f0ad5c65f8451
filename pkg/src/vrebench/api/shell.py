"""Inert static bundle served under /app/, standing in for the single-page client.

Only its byte cost matters: a page refresh re-requests every file, and a
client holding the entity tag gets a 304 back instead of the bytes.
"""
from __future__ import annotations

import hashlib
import json
from functools import cached_property

SHELL_FILES = ("index.html", "app.js", "vendor.js", "app.css")
# share of the total bundle size per file
_WEIGHTS = (0.05, 0.30, 0.55, 0.10)
MANIFEST = "manifest.json"


class Shell:
    def __init__(self, total_bytes: int) -> None:
        self.total_bytes = total_bytes

    @cached_property
    def sizes(self) -> dict[str, int]:
        sizes = {name: int(self.total_bytes * w) for name, w in zip(SHELL_FILES, _WEIGHTS)}
        sizes[SHELL_FILES[0]] += self.total_bytes - sum(sizes.values())
        return sizes

    @cached_property
    def _files(self) -> dict[str, tuple[bytes, str]]:
        files = {}
        for name, size in self.sizes.items():
            seed = hashlib.sha256(name.encode()).hexdigest().encode()
            body = (seed * (size // len(seed) + 1))[:size]
            files[name] = (body, '"' + hashlib.sha1(body).hexdigest() + '"')
        manifest = json.dumps({"files": ["/app/" + n for n in SHELL_FILES]}).encode()
        files[MANIFEST] = (manifest, '"' + hashlib.sha1(manifest).hexdigest() + '"')
        return files

    def get(self, name: str) -> tuple[bytes, str] | None:
        return self._files.get(name)

    @property
    def paths(self) -> list[str]:
        return ["/app/" + n for n in SHELL_FILES]
