"""Command line entry point: serve, seed, loadtest, report, compare, shardsim, dump.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

from vrebench import __version__
from vrebench.api import BadConfig, PortInUse, load_config, serve
from vrebench.loadgen import (
    RawRunLog,
    ScenarioError,
    SeedMissing,
    TargetUnreachable,
    load_scenario,
    run_scenario,
)
from vrebench.metrics import (
    SchemaMismatch,
    StatsTable,
    UnwritablePath,
    compare,
    compute_stats,
    decompose,
    load_stats,
    render_comparison,
    render_decomposition,
    render_stats,
    write_report,
)
from vrebench.metrics.report import FORMATS
from vrebench.seed import PROFILES, seed
from vrebench.shardsim import (
    ClusterSpec,
    ShardError,
    build_oracle,
    check_against_oracle,
    generate_queries,
    generate_records,
    load_cluster_spec,
)
from vrebench.store import StoreError, canonical_dump, open_store

logger = logging.getLogger("vrebench")

STORE_FILES = ("document.journal", "normalized.db", "normalized.db-wal", "normalized.db-shm")


class UsageError(Exception):
    pass


class DirNotEmpty(RuntimeError):
    pass


class CheckFailed(RuntimeError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:
        self.print_usage(sys.stderr)
        raise UsageError(message)


# -- helpers --------------------------------------------------------------

def _db_spec(args: argparse.Namespace) -> Optional[str]:
    if getattr(args, "db", None):
        return args.db
    if getattr(args, "backend", None) and getattr(args, "data_dir", None):
        return f"{args.backend}:{args.data_dir}"
    return None


def _clear_store(data_dir: Path) -> None:
    for name in STORE_FILES:
        (data_dir / name).unlink(missing_ok=True)
    shutil.rmtree(data_dir / "VRE_REPOS", ignore_errors=True)


def _formats(choice: str) -> tuple[str, ...]:
    return FORMATS if choice == "all" else (choice,)


def _read_stats(path: str) -> StatsTable:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"no such report: {path}")
    if p.suffix == ".jsonl":
        return compute_stats(RawRunLog.load(p))
    return load_stats(p)


# -- commands -------------------------------------------------------------

def cmd_serve(args: argparse.Namespace) -> int:
    overrides = {"db": _db_spec(args), "port": args.port, "host": args.host, "write_concern": args.write_concern,
                 "access_log": args.access_log, "shell_bytes": args.shell_bytes}
    config = load_config(args.config, overrides=overrides)
    handle = serve(config, start=False)
    if args.seed and handle.store.count("Accounts") == 0:
        seed(handle.store, PROFILES[args.seed], config.content_root)
    print(f"listening on {handle.url} ({config.backend} backend, data in {config.data_dir})", flush=True)
    try:
        handle.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        handle.httpd.server_close()
        handle.app.close()
        handle.access_log.close()
    return 0


def cmd_seed(args: argparse.Namespace) -> int:
    config = load_config(args.config, overrides={"db": _db_spec(args)})
    data_dir = Path(config.data_dir)
    if data_dir.exists() and any(data_dir.iterdir()):
        if not args.force:
            raise DirNotEmpty(f"{data_dir} is not empty; pass --force to reset it")
        _clear_store(data_dir)
    profile = PROFILES[args.profile]
    with open_store(config.backend, data_dir, config.write_concern_spec) as store:
        report = seed(store, profile, config.content_root)
    for collection, n in report.counts.items():
        print(f"{collection:20s} {n}")
    return 0


def cmd_loadtest(args: argparse.Namespace) -> int:
    scenario = load_scenario(args.scenario)
    changes = {}
    if args.mode:
        changes["mode"] = args.mode
    if args.users is not None:
        changes["concurrent_users"] = args.users
    if args.iterations is not None:
        changes["iterations_per_user"] = args.iterations
    if args.loop is not None:
        changes["loop_count"] = args.loop
    if changes:
        scenario = replace(scenario, **changes)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    profile = PROFILES[args.profile]
    access_lines: Optional[list[str]] = None

    if args.target:
        log = run_scenario(scenario, args.target, profile=profile, backend=args.backend or "",
                           sample_interval_ms=None if args.no_sample else args.sample_ms)
        if args.access_log:
            access_lines = Path(args.access_log).read_text().splitlines()
    else:
        backend = args.backend or "document"
        data_dir = Path(args.data_dir or out / f"data-{backend}")
        if not args.keep_data:
            _clear_store(data_dir)
        access_path = out / "access.log"
        access_path.unlink(missing_ok=True)
        overrides = {"db": f"{backend}:{data_dir}", "port": 0, "echo_access_log": False,
                     "access_log": str(access_path), "shell_bytes": args.shell_bytes,
                     "write_concern": args.write_concern}
        config = load_config(args.config, overrides=overrides)
        with serve(config) as handle:
            if handle.store.count("Accounts") == 0:
                seed(handle.store, profile, config.content_root)
            log = run_scenario(scenario, handle.url, profile=profile, backend=backend,
                               sample_interval_ms=None if args.no_sample else args.sample_ms)
            access_lines = list(handle.access_log.lines)

    # reports derive from the persisted log so that re-running report on it gives the same table
    log = RawRunLog.load(log.save(out / "run.jsonl"))
    stats = compute_stats(log)
    title = f"Scenario {scenario.id} ({scenario.mode}, {log.meta.backend or 'remote'} backend)"
    for fmt in FORMATS:
        write_report(stats, out / f"stats.{fmt}", fmt, title)
    if access_lines is not None:
        write_report(decompose(log.events, access_lines), out / "decomposition.txt")
    print(render_stats(stats, "txt", title), end="")
    if log.meta.resources:
        for key, series in log.meta.resources.items():
            print(f"{key}: min {series['min']:.1f} avg {series['avg']:.1f} max {series['max']:.1f}")
    print(f"artifacts in {out}")
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    path = Path(args.log)
    if not path.is_file():
        raise UsageError(f"no such run log: {path}")
    log = RawRunLog.load(path)
    stats = compute_stats(log)
    title = f"Scenario {log.meta.scenario} ({log.meta.mode}, {log.meta.backend or 'remote'} backend)"
    if args.out:
        for fmt in _formats(args.format):
            write_report(stats, Path(args.out) / f"stats.{fmt}", fmt, title)
    print(render_stats(stats, "txt" if args.format == "all" else args.format, title), end="")
    if args.access_log:
        result = decompose(log.events, Path(args.access_log).read_text().splitlines())
        if args.out:
            write_report(result, Path(args.out) / "decomposition.txt")
        print(render_decomposition(result), end="")
    return 0


def cmd_compare(args: argparse.Namespace) -> int:
    a, b = _read_stats(args.a), _read_stats(args.b)
    name_a, name_b = args.names.split(",", 1) if args.names else ("A", "B")
    table = compare(a, b, name_a, name_b)
    if args.out:
        for fmt in _formats(args.format):
            write_report(table, Path(args.out) / f"comparison.{fmt}", fmt)
    print(render_comparison(table, "txt" if args.format == "all" else args.format), end="")
    return 0


def cmd_shardsim(args: argparse.Namespace) -> int:
    spec = load_cluster_spec(args.spec) if args.spec else ClusterSpec()
    records = generate_records(args.records, args.key_space, args.seed, spec.field_name)
    queries = generate_queries(records, args.queries, args.seed + 1, spec.field_name)
    lines = []
    failures = []
    with spec.build() as cluster:
        for router_id in args.kill_router or ():
            cluster.fail_router(router_id)
        for record in records:
            cluster.insert(record)
        oracle = build_oracle(records)
        report = check_against_oracle(cluster, oracle, queries)
        lines.append(f"shards {len(cluster.shards)}, routers alive "
                     f"{sum(r.alive for r in cluster.routers)}/{len(cluster.routers)}, records {cluster.total()}")
        lines.append("shardsContacted histogram: " + ", ".join(
            f"{k}: {v}" for k, v in sorted(report.contacted.items())))
        if not report.ok:
            failures.append(f"{len(report.mismatches)} result mismatches, {report.keyed_wrong} keyed and "
                            f"{report.keyless_wrong} keyless routing errors")
        for split in args.add_shard or ():
            before = cluster.total()
            new_id = cluster.add_shard(split)
            after = check_against_oracle(cluster, oracle, queries)
            lines.append(f"addShard {split}: shard {new_id}, records {before} -> {cluster.total()}, "
                         f"histogram " + ", ".join(f"{k}: {v}" for k, v in sorted(after.contacted.items())))
            if cluster.total() != before or cluster.misplaced() or not after.ok:
                failures.append(f"addShard {split} broke conservation or results")
        histogram = dict(cluster.contacted)
        oracle.close()
    print("\n".join(lines))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "shardsim.json").write_text(json.dumps(
            {"lines": lines, "failures": failures, "shardsContacted": histogram}, indent=2) + "\n")
    if failures:
        raise CheckFailed("; ".join(failures))
    print("all checks passed")
    return 0


def cmd_dump(args: argparse.Namespace) -> int:
    config = load_config(args.config, overrides={"db": _db_spec(args)})
    with open_store(config.backend, config.data_dir, config.write_concern_spec) as store:
        rows = canonical_dump(store) if args.canonical else list(store.dump())
    text = "".join(json.dumps({"collection": c, "doc": d}, sort_keys=True) + "\n" for c, d in rows)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


# -- parser ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="vrebench", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def store_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--db", help="backend and data directory, e.g. document:./vre-data")
        p.add_argument("--backend", choices=("document", "normalized"))
        p.add_argument("--data-dir")

    p = sub.add_parser("serve", help="run the HTTP service")
    store_flags(p)
    p.add_argument("--port", type=int)
    p.add_argument("--host")
    p.add_argument("--write-concern", choices=("Journaled", "AcknowledgedUnjournaled"))
    p.add_argument("--access-log")
    p.add_argument("--shell-bytes", type=int)
    p.add_argument("--seed", choices=sorted(PROFILES), help="seed an empty store on start")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("seed", help="populate a data directory with the benchmark fixture")
    store_flags(p)
    p.add_argument("--profile", choices=sorted(PROFILES), default="default")
    p.add_argument("--force", action="store_true", help="reset a non-empty data directory")
    p.set_defaults(func=cmd_seed)

    p = sub.add_parser("loadtest", help="run a scenario and write the log and report")
    p.add_argument("scenario", help="preset id 1-5 or a scenario file")
    p.add_argument("--backend", choices=("document", "normalized"))
    p.add_argument("--mode", choices=("Refresh", "NoRefresh"))
    p.add_argument("--users", type=int)
    p.add_argument("--iterations", type=int)
    p.add_argument("--loop", type=int, help="override the 100-step loop of the built-in users")
    p.add_argument("--target", help="base URL of a running service (default: start one in process)")
    p.add_argument("--access-log", help="service access log when using --target")
    p.add_argument("--config")
    p.add_argument("--data-dir")
    p.add_argument("--keep-data", action="store_true", help="reuse the data directory instead of reseeding")
    p.add_argument("--profile", choices=sorted(PROFILES), default="default")
    p.add_argument("--shell-bytes", type=int)
    p.add_argument("--write-concern", choices=("Journaled", "AcknowledgedUnjournaled"))
    p.add_argument("--sample-ms", type=float, default=250.0)
    p.add_argument("--no-sample", action="store_true")
    p.add_argument("--out", default="vre-out")
    p.set_defaults(func=cmd_loadtest)

    p = sub.add_parser("report", help="statistics table from a run log")
    p.add_argument("log")
    p.add_argument("--access-log", help="also decompose time using the service access log")
    p.add_argument("--format", choices=(*FORMATS, "all"), default="txt")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("compare", help="A/B/%% table from two reports or run logs")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("--names", help="column names, e.g. SQL,MEAN")
    p.add_argument("--format", choices=(*FORMATS, "all"), default="txt")
    p.add_argument("--out")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("shardsim", help="exercise the range-sharded cluster against an unsharded oracle")
    p.add_argument("--spec", help="cluster spec file")
    p.add_argument("--records", type=int, default=10000)
    p.add_argument("--queries", type=int, default=200)
    p.add_argument("--key-space", type=int, default=15000)
    p.add_argument("--add-shard", type=int, action="append", help="split point; repeatable")
    p.add_argument("--kill-router", type=int, action="append", help="router id to fail before the run")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_shardsim)

    p = sub.add_parser("dump", help="line-delimited documents of a store")
    store_flags(p)
    p.add_argument("--canonical", action="store_true", help="replace ids with per-collection ordinals")
    p.add_argument("--out")
    p.set_defaults(func=cmd_dump)
    return parser


USAGE_ERRORS = (UsageError, ScenarioError, BadConfig)
RUNTIME_ERRORS = (DirNotEmpty, CheckFailed, TargetUnreachable, SeedMissing, SchemaMismatch, UnwritablePath,
                  PortInUse, StoreError, ShardError, OSError, ValueError, KeyError)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"vrebench: error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except USAGE_ERRORS as exc:
        print(f"vrebench {args.command}: error: {exc}", file=sys.stderr)
        print(f"see 'vrebench {args.command} --help'", file=sys.stderr)
        return 1
    except RUNTIME_ERRORS as exc:
        message = str(exc).strip().splitlines()[0] if str(exc).strip() else type(exc).__name__
        print(f"vrebench {args.command}: {type(exc).__name__}: {message}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
