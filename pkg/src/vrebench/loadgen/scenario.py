from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

MODES = ("Refresh", "NoRefresh")


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class Population:
    mix: tuple[tuple[str, float], ...]

    def __post_init__(self) -> None:
        if not self.mix:
            raise ScenarioError("population is empty")
        total = sum(w for _, w in self.mix)
        if abs(total - 100.0) > 1e-9:
            raise ScenarioError(f"population percentages sum to {total:g}, not 100")
        if any(w < 0 for _, w in self.mix):
            raise ScenarioError("population percentages must be non-negative")

    @classmethod
    def single(cls, script: str) -> "Population":
        return cls(((script, 100.0),))

    @classmethod
    def parse(cls, text: str) -> "Population":
        mix = []
        for part in text.split(","):
            part = part.strip()
            if not part:
                continue
            name, _, weight = part.partition(":")
            try:
                mix.append((name.strip(), float(weight) if weight else 100.0))
            except ValueError:
                raise ScenarioError(f"bad population entry {part!r}") from None
        return cls(tuple(mix))

    def assign(self, users: int) -> list[str]:
        """Script name per user index; largest remainder, so 90/10 over 10 users is exactly 9 and 1."""
        quotas = [(name, users * w / 100.0) for name, w in self.mix]
        counts = [int(q) for _, q in quotas]
        leftovers = sorted(range(len(quotas)), key=lambda i: (-(quotas[i][1] - counts[i]), i))
        for i in leftovers[: users - sum(counts)]:
            counts[i] += 1
        out: list[str] = []
        for (name, _), n in zip(self.mix, counts):
            out.extend([name] * n)
        return out

    def describe(self) -> str:
        return ", ".join(f"{name}:{w:g}" for name, w in self.mix)


@dataclass(frozen=True)
class Scenario:
    id: str
    population: Population
    concurrent_users: int = 10
    iterations_per_user: int = 1
    mode: str = "NoRefresh"
    think_ms: float = 0.0
    description: str = ""
    # per-script overrides of the loop count, used for scaled-down runs
    loop_count: Optional[int] = None

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ScenarioError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.concurrent_users < 0 or self.iterations_per_user < 0:
            raise ScenarioError("users and iterations must be non-negative")

    def with_mode(self, mode: str) -> "Scenario":
        return replace(self, mode=mode)


# Scenario 5: the results report 10 users launched, so 10 (5/5) rather than the 50 in the scenario list.
PRESETS: dict[str, Scenario] = {
    "1": Scenario("1", Population.single("Add100"), 10, 1, "Refresh",
                  description="10 concurrent Add100 users, 1000 new clinicians"),
    "2": Scenario("2", Population.single("Goal100"), 10, 1, "NoRefresh",
                  description="10 concurrent Goal100 users, 1000 goals on one patient"),
    "3": Scenario("3", Population((("View100", 90.0), ("Goal100", 10.0))), 10, 1, "NoRefresh",
                  description="read heavy: 90% View100, 10% Goal100"),
    "4": Scenario("4", Population.single("UpdateRep100"), 10, 1, "Refresh",
                  description="10 concurrent UpdateRep100 users"),
    "5": Scenario("5", Population((("Goal100", 50.0), ("View100", 50.0))), 10, 1, "NoRefresh",
                  description="write heavy: 50% Goal100, 50% View100 over 10 users"),
}


def preset(scenario_id: str) -> Scenario:
    try:
        return PRESETS[str(scenario_id)]
    except KeyError:
        raise ScenarioError(f"unknown scenario {scenario_id!r}; presets are {', '.join(PRESETS)}") from None


def parse_scenario(text: str, default_id: str = "custom") -> Scenario:
    """``key = value`` lines: name, script or population, users, iterations, mode, think, loop."""
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ScenarioError(f"line {lineno}: expected key = value")
        values[key.strip().lower()] = value.strip()
    known = {"name", "script", "population", "users", "iterations", "mode", "think", "loop", "description"}
    unknown = set(values) - known
    if unknown:
        raise ScenarioError(f"unknown keys: {', '.join(sorted(unknown))}")
    if "population" in values:
        population = Population.parse(values["population"])
    elif "script" in values:
        population = Population.single(values["script"])
    else:
        raise ScenarioError("scenario needs a script or a population")
    try:
        return Scenario(
            id=values.get("name", default_id),
            population=population,
            concurrent_users=int(values.get("users", 10)),
            iterations_per_user=int(values.get("iterations", 1)),
            mode=values.get("mode", "NoRefresh"),
            think_ms=float(values.get("think", 0)),
            description=values.get("description", ""),
            loop_count=int(values["loop"]) if "loop" in values else None,
        )
    except ValueError as exc:
        if isinstance(exc, ScenarioError):
            raise
        raise ScenarioError(f"bad number in scenario: {exc}") from None


def load_scenario(ref: str) -> Scenario:
    """A preset id or a path to a scenario file."""
    if ref in PRESETS:
        return PRESETS[ref]
    path = Path(ref)
    if path.is_file():
        return parse_scenario(path.read_text(), default_id=path.stem)
    raise ScenarioError(f"unknown scenario {ref!r}; presets are {', '.join(PRESETS)} or pass a scenario file")

