import json
import subprocess
import sys

import pytest

from published_tables import SCENARIO_1
from vrebench.cli import main
from vrebench.metrics import StatsTable, render_stats
from vrebench.model import iter_store, validate_entity
from vrebench.store import open_store


def _run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_seed_refuses_non_empty_dir(tmp_path, capsys):
    data = tmp_path / "d"
    code, out, _ = _run(capsys, "seed", "--db", f"document:{data}", "--profile", "small")
    assert code == 0 and "Accounts" in out
    code, _, err = _run(capsys, "seed", "--db", f"document:{data}", "--profile", "small")
    assert code == 2 and "DirNotEmpty" in err
    assert _run(capsys, "seed", "--db", f"document:{data}", "--profile", "small", "--force")[0] == 0


def test_default_seed_validates(tmp_path, capsys):
    assert _run(capsys, "seed", "--backend", "normalized", "--data-dir", str(tmp_path))[0] == 0
    with open_store("normalized", tmp_path) as store:
        assert store.count("Patients") == 150 and store.count("Clinicians") == 10
        assert store.count("Contents") == 150 and store.count("Administrators") == 1
        assert [r for c, d in iter_store(store) if (r := validate_entity(d, store, c))] == []


def test_dump_is_deterministic_and_backend_neutral(tmp_path, capsys):
    dumps = {}
    for name, backend in (("a", "document"), ("b", "document"), ("c", "normalized")):
        db = f"{backend}:{tmp_path / name}"
        _run(capsys, "seed", "--db", db, "--profile", "small")
        assert _run(capsys, "dump", "--db", db, "--out", str(tmp_path / f"{name}.jsonl"))[0] == 0
        code, out, _ = _run(capsys, "dump", "--db", db, "--canonical")
        assert code == 0
        # content paths embed the data directory; ids are replaced by the canonical form
        dumps[name] = out.replace(str(tmp_path / name), "ROOT")
    assert dumps["a"] == dumps["b"] == dumps["c"]
    raw = (tmp_path / "a.jsonl").read_text().splitlines()
    assert len(raw) == len(dumps["a"].splitlines())
    first = json.loads(dumps["a"].splitlines()[0])
    assert first["collection"] == "Accounts" and first["doc"]["_id"] == "Accounts#0"


def test_loadtest_writes_artifacts_and_counts_repeat(tmp_path, capsys):
    totals = []
    for run in ("r1", "r2"):
        out = tmp_path / run
        code, text, err = _run(capsys, "loadtest", "2", "--profile", "small", "--users", "2", "--loop", "5",
                               "--shell-bytes", "20000", "--no-sample", "--out", str(out))
        assert code == 0, err
        assert "Total requests" in text
        for name in ("run.jsonl", "stats.txt", "stats.csv", "stats.json", "access.log", "decomposition.txt"):
            assert (out / name).is_file(), name
        stats = json.loads((out / "stats.json").read_text())["rows"]
        totals.append((stats["Total requests"], stats["Total pages"], stats["Total request errors"]))
    assert totals[0] == totals[1]
    assert totals[0][2] == 0


def test_report_and_compare_run_logs(tmp_path, capsys):
    out = tmp_path / "run"
    _run(capsys, "loadtest", "4", "--profile", "small", "--users", "1", "--loop", "3", "--shell-bytes", "1000",
         "--no-sample", "--out", str(out))
    code, text, _ = _run(capsys, "report", str(out / "run.jsonl"), "--access-log", str(out / "access.log"),
                         "--format", "all", "--out", str(tmp_path / "rep"))
    assert code == 0 and "Rename repository item" in text
    assert (tmp_path / "rep" / "stats.csv").is_file()
    code, text, _ = _run(capsys, "compare", str(out / "run.jsonl"), str(out / "stats.json"))
    assert code == 0
    rows = [l for l in text.splitlines()[1:] if l.strip()]
    assert len(rows) == 14 and all(l.split()[-1] == "+0%" for l in rows)


def test_compare_published_fixture(tmp_path, capsys):
    for side in ("relational", "document"):
        (tmp_path / f"{side}.json").write_text(render_stats(StatsTable.from_labels(SCENARIO_1[side]), "json"))
    code, text, _ = _run(capsys, "compare", str(tmp_path / "relational.json"), str(tmp_path / "document.json"),
                         "--names", "SQL,MEAN", "--format", "all", "--out", str(tmp_path / "cmp"))
    assert code == 0
    row = next(l for l in text.splitlines() if l.startswith("Average requests/s"))
    assert row.split()[-1] == "+42.1%"
    assert (tmp_path / "cmp" / "comparison.csv").read_text().splitlines()[-1].startswith("%,-57.3%,+42.1%")


def test_compare_schema_mismatch(tmp_path, capsys):
    good = tmp_path / "a.json"
    good.write_text(render_stats(StatsTable(), "json"))
    old = tmp_path / "b.json"
    old.write_text(good.read_text().replace("vre-stats/1", "vre-stats/0"))
    code, _, err = _run(capsys, "compare", str(good), str(old))
    assert code == 2 and "SchemaMismatch" in err


def test_shardsim_command(tmp_path, capsys):
    spec = tmp_path / "cluster.spec"
    spec.write_text("shardCount = 3\nrouterCount = 2\nkeySpace = 15000\n")
    code, text, _ = _run(capsys, "shardsim", "--spec", str(spec), "--records", "2000", "--queries", "100",
                         "--add-shard", "12000", "--kill-router", "1", "--out", str(tmp_path / "o"))
    assert code == 0 and "all checks passed" in text
    assert "routers alive 1/2" in text
    saved = json.loads((tmp_path / "o" / "shardsim.json").read_text())
    assert saved["failures"] == []


@pytest.mark.parametrize("argv,code", [
    (["loadtest", "9"], 1),
    (["frobnicate"], 1),
    (["loadtest"], 1),
    (["compare", "missing.json", "other.json"], 1),
    (["serve", "--db", "oracle:/x"], 1),
])
def test_exit_codes(argv, code, capsys):
    got, _, err = _run(capsys, *argv)
    assert got == code
    assert err.strip()


def test_unreachable_target_is_runtime_failure(tmp_path, capsys):
    code, _, err = _run(capsys, "loadtest", "2", "--target", "http://127.0.0.1:9", "--no-sample",
                        "--out", str(tmp_path))
    assert code == 2 and "TargetUnreachable" in err


def test_module_entry_point():
    result = subprocess.run([sys.executable, "-m", "vrebench", "--version"], capture_output=True, text=True)
    assert result.returncode == 0 and result.stdout.startswith("vrebench")


@pytest.mark.parametrize("command", [[], ["serve"], ["seed"], ["loadtest"], ["report"], ["compare"], ["shardsim"],
                                     ["dump"]])
def test_help_renders(command, capsys):
    with pytest.raises(SystemExit) as exc:
        main([*command, "--help"])
    assert exc.value.code == 0
    assert "usage: vrebench" in capsys.readouterr().out
