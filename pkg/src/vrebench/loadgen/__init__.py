from vrebench.loadgen.log import Event, RawRunLog, RunMeta, Sample
from vrebench.loadgen.runner import (
    ActionError,
    HttpClient,
    SeedMissing,
    TargetUnreachable,
    build_scripts,
    run_scenario,
)
from vrebench.loadgen.sampler import ResourceSampler, SamplerUnavailable
from vrebench.loadgen.scenario import PRESETS, Population, Scenario, ScenarioError, load_scenario, parse_scenario
from vrebench.loadgen.scripts import (
    BUILTINS,
    Login,
    Logout,
    Loop,
    Multipart,
    PageLoad,
    Request,
    Think,
    VirtualUserScript,
    builtin,
    refresh_mode,
)

__all__ = [
    "BUILTINS",
    "PRESETS",
    "ActionError",
    "Event",
    "HttpClient",
    "Login",
    "Logout",
    "Loop",
    "Multipart",
    "PageLoad",
    "Population",
    "RawRunLog",
    "Request",
    "ResourceSampler",
    "RunMeta",
    "Sample",
    "SamplerUnavailable",
    "Scenario",
    "ScenarioError",
    "SeedMissing",
    "TargetUnreachable",
    "Think",
    "VirtualUserScript",
    "build_scripts",
    "builtin",
    "load_scenario",
    "parse_scenario",
    "refresh_mode",
    "run_scenario",
]
