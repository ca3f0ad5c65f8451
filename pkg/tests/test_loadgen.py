import socket
from collections import Counter

import pytest

from conftest import make_server
from vrebench.loadgen import (
    PRESETS,
    Login,
    Logout,
    PageLoad,
    Population,
    RawRunLog,
    Request,
    ResourceSampler,
    Scenario,
    ScenarioError,
    SeedMissing,
    TargetUnreachable,
    VirtualUserScript,
    builtin,
    load_scenario,
    parse_scenario,
    refresh_mode,
    run_scenario,
)
from vrebench.loadgen.scripts import TemplateError, count_mutations, extract, render
from vrebench.seed import PROFILES

SMALL = PROFILES["small"]
SHELL = ("/app/index.html", "/app/app.js", "/app/vendor.js", "/app/app.css")


@pytest.fixture
def live(tmp_path):
    handle = make_server(tmp_path)
    yield handle
    handle.stop()


def _run(handle, script="Goal100", users=2, loop=3, mode="NoRefresh", **kw):
    scenario = Scenario("t", Population.single(script), users, 1, mode, loop_count=loop)
    return run_scenario(scenario, handle.url, profile=SMALL, sample_interval_ms=kw.pop("sample_interval_ms", None), **kw)


def _shape(log: RawRunLog):
    return Counter((e.kind, e.method, e.label, e.status) for e in log.events)


# -- scripts ------------------------------------------------------------------

def test_render_placeholders():
    v = {"user": 13, "i": 7, "ids": ["a", "b", "c"], "run": "x1"}
    assert render("c{run}u{user:02d}n{i:03d}", v) == "cx1u13n007"
    assert render("clinician{user%10:02d}", v) == "clinician03"
    assert render("/api/patient/{ids[1]}", v) == "/api/patient/b"
    assert render("/api/patient/{ids[i]}", {**v, "i": 2}) == "/api/patient/c"
    with pytest.raises(TemplateError):
        render("{nope}", v)
    with pytest.raises(TemplateError):
        render("{ids[5]}", v)


def test_extract_paths():
    assert extract([{"_id": "a"}, {"_id": "b"}], "*._id") == ["a", "b"]
    assert extract({"_id": "z"}, "_id") == "z"


def test_builtins_have_documented_semantics():
    add = builtin("Add100")
    assert count_mutations(add.actions) == 100
    assert [type(a).__name__ for a in add.actions][-1] == "Logout"
    assert count_mutations(builtin("Goal100").actions) == 100
    assert count_mutations(builtin("View100").actions) == 0
    assert count_mutations(builtin("UpdateRep100").actions) == 100
    assert builtin("View100").requires == {"patient": 100}
    with pytest.raises(KeyError):
        builtin("Nope")


def test_refresh_inserts_view_after_each_mutation():
    script = builtin("UpdateRep100", count=4)
    refreshed = refresh_mode(script, "Refresh")
    loop = refreshed.actions[3]
    assert [type(a).__name__ for a in loop.actions] == ["Request", "PageLoad"]
    assert loop.actions[1] is script.view
    assert refresh_mode(script, "NoRefresh") is script
    with pytest.raises(ValueError):
        refresh_mode(script, "Sometimes")


# -- populations and scenarios ---------------------------------------------------

@pytest.mark.parametrize("mix,users,expected", [
    ((("View100", 90.0), ("Goal100", 10.0)), 10, {"View100": 9, "Goal100": 1}),
    ((("Goal100", 50.0), ("View100", 50.0)), 10, {"Goal100": 5, "View100": 5}),
    ((("A", 33.4), ("B", 33.3), ("C", 33.3)), 10, {"A": 4, "B": 3, "C": 3}),
    ((("A", 100.0),), 0, {}),
])
def test_population_assign_is_exact(mix, users, expected):
    got = Population(mix).assign(users)
    assert len(got) == users
    assert dict(Counter(got)) == expected


def test_population_must_sum_to_100():
    with pytest.raises(ScenarioError):
        Population((("A", 60.0), ("B", 30.0)))
    assert Population.parse("View100:90, Goal100:10").mix == (("View100", 90.0), ("Goal100", 10.0))


def test_presets_match_the_scenario_table():
    assert {k: (s.concurrent_users, s.population.describe(), s.mode) for k, s in PRESETS.items()} == {
        "1": (10, "Add100:100", "Refresh"),
        "2": (10, "Goal100:100", "NoRefresh"),
        "3": (10, "View100:90, Goal100:10", "NoRefresh"),
        "4": (10, "UpdateRep100:100", "Refresh"),
        "5": (10, "Goal100:50, View100:50", "NoRefresh"),
    }


def test_scenario_file(tmp_path):
    path = tmp_path / "mix.scn"
    path.write_text("name = mix\npopulation = Goal100:50, View100:50\nusers = 4\nmode = Refresh  # comment\nloop = 2\n")
    scenario = load_scenario(str(path))
    assert (scenario.id, scenario.concurrent_users, scenario.mode, scenario.loop_count) == ("mix", 4, "Refresh", 2)
    with pytest.raises(ScenarioError):
        parse_scenario("script = Goal100\nmode = Sideways\n")
    with pytest.raises(ScenarioError):
        load_scenario("99")


# -- live runs ---------------------------------------------------------------------

def test_no_refresh_goal100_counts_by_construction(live):
    log = _run(live, users=1, loop=100)
    reqs = log.requests
    api = [e for e in reqs if not e.path.startswith("/app/")]
    labels = Counter(e.label for e in api)
    assert labels == {"Login": 1, "List patients": 1, "View patient": 1, "Add goal": 100, "Logout": 1}
    # three scripted page loads, four shell files each
    assert len(reqs) - len(api) == 3 * len(SHELL)
    assert all(e.status == 200 for e in api)


def test_zero_iterations_gives_empty_log(live):
    scenario = Scenario("z", Population.single("Goal100"), 3, 0)
    log = run_scenario(scenario, live.url, profile=SMALL, sample_interval_ms=None)
    assert log.events == []
    assert log.meta.users_launched == 3 and log.meta.iterations_completed == 0


def test_counts_are_deterministic(live):
    a, b = _run(live, users=3, loop=4, mode="Refresh"), _run(live, users=3, loop=4, mode="Refresh")
    assert _shape(a) == _shape(b)
    assert sum(e.bytes_up for e in a.requests) == sum(e.bytes_up for e in b.requests)


def test_users_overlap_in_time(live):
    log = _run(live, users=4, loop=20)
    spans = {u: (min(e.start_ms for e in ev), max(e.end_ms for e in ev)) for u, ev in log.by_user().items()}
    overlapping = {u for u, (s, e) in spans.items() for v, (s2, e2) in spans.items() if u != v and s < e2 and s2 < e}
    assert len(overlapping) >= 2


def test_log_invariants(live):
    log = _run(live, script="View100", users=3, loop=5)
    for user_events in log.by_user().values():
        starts = [e.start_ms for e in user_events]
        assert starts == sorted(starts)
    for page in log.pages:
        members = [e for e in log.requests if e.user_idx == page.user_idx and e.page_seq == page.page_seq]
        assert page.requests == len(members) >= 1
        assert page.bytes_down == sum(e.bytes_down for e in members)
        assert not page.error_flag


def test_refresh_vs_no_refresh_direction(live):
    no = _run(live, script="UpdateRep100", users=2, loop=5)
    yes = _run(live, script="UpdateRep100", users=2, loop=5, mode="Refresh")
    assert len(yes.requests) > len(no.requests)
    assert sum(e.bytes_down for e in yes.events) > sum(e.bytes_down for e in no.events)


def test_empty_shell_refresh_differs_only_in_headers(tmp_path):
    handle = make_server(tmp_path, shell_bytes=0)
    try:
        cat = handle.store.list("Categories")[0]["_id"]
        script = VirtualUserScript("Touch", (
            Login("admin00", SMALL.admin_password),
            Request("PUT", f"/api/category/{cat}", {"name": "same"}),
            Logout(),
        ), view=PageLoad("shell-only"))
        scenario = Scenario("e", Population.single("Touch"), 1, 1)
        runs = {mode: run_scenario(scenario.with_mode(mode), handle.url, scripts={"Touch": script},
                                   sample_interval_ms=None) for mode in ("NoRefresh", "Refresh")}
    finally:
        handle.stop()
    no, yes = runs["NoRefresh"], runs["Refresh"]
    assert len(yes.requests) == len(no.requests) + len(SHELL)
    extra = [e for e in yes.requests if e.path.startswith("/app/")]
    assert {e.path for e in extra} == set(SHELL)
    # every shell reply is headers only: a 304, or a 200 with an empty body
    assert all(e.status in (200, 304) for e in extra)
    assert all(e.bytes_down < 300 for e in extra)
    shared = lambda log: sorted((e.method, e.path, e.status, e.bytes_up, e.bytes_down)
                                for e in log.requests if not e.path.startswith("/app/"))
    assert shared(yes) == shared(no)


def test_error_responses_flag_once(live):
    script = VirtualUserScript("Bad", (
        Request("GET", "/api/goal/does-not-exist"),
        Request("POST", "/api/goal", {"description": "x"}),
        Request("GET", "/api/goal"),
    ))
    scenario = Scenario("b", Population.single("Bad"), 2, 2)
    log = run_scenario(scenario, live.url, scripts={"Bad": script}, sample_interval_ms=None)
    assert sum(e.error_flag for e in log.events) == sum(e.status >= 400 for e in log.requests) == 8


def test_login_failure_aborts_iteration(live):
    script = VirtualUserScript("Locked", (Login("admin00", "wrong"), Request("GET", "/api/goal")))
    scenario = Scenario("l", Population.single("Locked"), 1, 3)
    log = run_scenario(scenario, live.url, scripts={"Locked": script}, sample_interval_ms=None)
    assert log.meta.action_errors == 3 and log.meta.iterations_completed == 0
    assert [e.path for e in log.requests] == ["/api/auth/login"] * 3


def test_seed_missing(live):
    with pytest.raises(SeedMissing):
        _run(live, script="View100", users=1, loop=50)


def test_target_unreachable():
    with socket.socket() as sock:
        sock.bind(("127.0.0.1", 0))
        port = sock.getsockname()[1]
    with pytest.raises(TargetUnreachable):
        run_scenario(PRESETS["2"], f"http://127.0.0.1:{port}", sample_interval_ms=None)


def test_sampler_order_and_disable(live):
    log = _run(live, users=2, loop=30, sample_interval_ms=20)
    assert log.meta.samples
    for series in log.meta.resources.values():
        assert series["min"] <= series["avg"] <= series["max"]
    off = _run(live, users=1, loop=1)
    assert off.meta.samples is None and off.meta.resources is None


def test_idle_sampler_stays_low():
    import time

    sampler = ResourceSampler(50).start()
    time.sleep(0.5)
    samples = sampler.stop()
    assert sum(s.cpu_percent for s in samples) / len(samples) < 90.0


def test_log_round_trip(live, tmp_path):
    log = _run(live, users=2, loop=3, sample_interval_ms=50)
    path = log.save(tmp_path / "run.jsonl")
    back = RawRunLog.load(path)
    assert back.meta.scenario == log.meta.scenario and back.meta.assignments == {"Goal100": 2}
    assert [e.to_json() for e in back.events] == [e.to_json() for e in log.events]
    assert len(back.meta.samples) == len(log.meta.samples)
