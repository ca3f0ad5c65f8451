"""Range-sharded document storage behind routers, simulated in process.

Each shard is a document-store instance; routers share one routing table held
by the cluster and swapped atomically when a shard is added. Keys that are
decimal strings (the relational id format) compare as integers.
"""
from __future__ import annotations

import bisect
import itertools
import json
import logging
import random
import threading
import time
from collections import Counter
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Optional

from vrebench.model import BackendKind, id_factory
from vrebench.store import JOURNALED, DocumentStore, DuplicateKey

logger = logging.getLogger(__name__)

DEFAULT_COLLECTION = "Goals"


class ShardError(RuntimeError):
    pass


class MissingShardKey(ShardError):
    pass


class NoLiveRouter(ShardError):
    pass


class InvalidSplitPoint(ShardError):
    pass


class RouterDown(ShardError):
    """The router failed while handling a request; the caller may retry elsewhere."""


def key_value(value: Any) -> Any:
    if isinstance(value, bool):
        raise MissingShardKey("shard key must not be a boolean")
    if isinstance(value, int):
        return value
    if isinstance(value, str) and value.isdigit():
        return int(value)
    return value


@dataclass(frozen=True)
class ShardKeySpec:
    field_name: str = "patientId"
    bounds: tuple[Any, ...] = ()

    def __post_init__(self) -> None:
        keys = [key_value(b) for b in self.bounds]
        if any(b >= a for a, b in zip(keys[1:], keys)):
            raise InvalidSplitPoint("split points must be strictly increasing")
        object.__setattr__(self, "bounds", tuple(keys))

    @property
    def shard_count(self) -> int:
        return len(self.bounds) + 1

    def range_index(self, key: Any) -> int:
        try:
            return bisect.bisect_right(self.bounds, key_value(key))
        except TypeError as exc:
            raise MissingShardKey(f"shard key {key!r} is not comparable with the split points") from exc

    def ranges(self) -> list[tuple[Optional[Any], Optional[Any]]]:
        edges = [None, *self.bounds, None]
        return list(zip(edges[:-1], edges[1:]))

    def key_of(self, record: Mapping[str, Any]) -> Any:
        if record.get(self.field_name) is None:
            raise MissingShardKey(f"record has no {self.field_name}")
        return record[self.field_name]


@dataclass
class RoutingTable:
    spec: ShardKeySpec
    shard_ids: tuple[int, ...]  # shard id per range, in range order
    version: int = 1

    def owner(self, key: Any) -> int:
        return self.shard_ids[self.spec.range_index(key)]


class Shard:
    def __init__(self, shard_id: int, replica_count: int = 0) -> None:
        self.id = shard_id
        self.store = DocumentStore(None, JOURNALED)
        self.replicas = [DocumentStore(None, JOURNALED) for _ in range(replica_count)]
        self._write_lock = threading.Lock()

    def insert(self, collection: str, doc: Mapping[str, Any]) -> bool:
        """Store ``doc``; returns False when an identical copy is already present (a retried insert)."""
        with self._write_lock:
            try:
                self.store.create(collection, doc)
            except DuplicateKey:
                # the stored copy carries defaults the caller did not send
                if self.store.exists(collection, doc["_id"]):
                    existing = self.store.read(collection, doc["_id"])
                    if all(existing.get(k) == v for k, v in doc.items()):
                        return False
                raise
            for replica in self.replicas:
                replica.create(collection, doc)
            return True

    def remove(self, collection: str, doc_id: str) -> None:
        with self._write_lock:
            self.store.delete(collection, doc_id)
            for replica in self.replicas:
                replica.delete(collection, doc_id)

    def query(self, collection: str, predicate: Mapping[str, Any]) -> list[dict[str, Any]]:
        return self.store.query(collection, predicate)

    def count(self, collection: str) -> int:
        return self.store.count(collection)

    def close(self) -> None:
        self.store.close()
        for replica in self.replicas:
            replica.close()


class _RWLock:
    def __init__(self) -> None:
        self._cond = threading.Condition()
        self._readers = 0
        self._writer = False

    def acquire_read(self) -> None:
        with self._cond:
            while self._writer:
                self._cond.wait()
            self._readers += 1

    def release_read(self) -> None:
        with self._cond:
            self._readers -= 1
            if not self._readers:
                self._cond.notify_all()

    def acquire_write(self) -> None:
        with self._cond:
            while self._writer:
                self._cond.wait()
            self._writer = True
            while self._readers:
                self._cond.wait()

    def release_write(self) -> None:
        with self._cond:
            self._writer = False
            self._cond.notify_all()


@dataclass
class QueryResult:
    records: list[dict[str, Any]]
    shards_contacted: int
    shard_ids: tuple[int, ...] = ()


class Router:
    def __init__(self, router_id: int, cluster: "Cluster") -> None:
        self.id = router_id
        self.cluster = cluster
        self.alive = True
        # after this many more requests the router dies mid-request, having applied the write
        self.fail_after: Optional[int] = None
        self.handled = 0

    @property
    def table_version(self) -> int:
        return self.cluster.table.version

    def _maybe_fail(self) -> None:
        if self.fail_after is None:
            return
        if self.fail_after <= 0:
            self.alive = False
            raise RouterDown(f"router {self.id} went down")
        self.fail_after -= 1

    def insert(self, collection: str, doc: Mapping[str, Any]) -> int:
        if not self.alive:
            raise RouterDown(f"router {self.id} is down")
        cluster = self.cluster
        key = cluster.table.spec.key_of(doc)
        with cluster.dispatch():
            shard = cluster.shards[cluster.table.owner(key)]
            cluster.hop()
            shard.insert(collection, doc)
        self.handled += 1
        self._maybe_fail()
        return shard.id

    def query(self, collection: str, predicate: Mapping[str, Any]) -> QueryResult:
        if not self.alive:
            raise RouterDown(f"router {self.id} is down")
        cluster = self.cluster
        with cluster.dispatch():
            table = cluster.table
            field_name = table.spec.field_name
            if predicate.get(field_name) is not None:
                targets = (table.owner(predicate[field_name]),)
            else:
                targets = table.shard_ids
            records: list[dict[str, Any]] = []
            for shard_id in targets:
                cluster.hop()
                records.extend(cluster.shards[shard_id].query(collection, predicate))
        self.handled += 1
        self._maybe_fail()
        cluster.contacted[len(targets)] += 1
        return QueryResult(records, len(targets), tuple(targets))


class Cluster:
    def __init__(self, spec: ShardKeySpec = ShardKeySpec(bounds=(5000, 10000)), routers: int = 2,
                 replicas: int = 0, hop_latency_ms: float = 0.0) -> None:
        if routers < 1:
            raise ShardError("a cluster needs at least one router")
        self.replica_count = replicas
        self.shards: dict[int, Shard] = {i + 1: Shard(i + 1, replicas) for i in range(spec.shard_count)}
        self.table = RoutingTable(spec, tuple(range(1, spec.shard_count + 1)))
        self.routers = [Router(i + 1, self) for i in range(routers)]
        self.hop_latency_ms = hop_latency_ms
        self.contacted: Counter[int] = Counter()
        self._lock = _RWLock()
        self._rr = itertools.count()
        self._new_id = id_factory(BackendKind.DOCUMENT)

    # -- plumbing ---------------------------------------------------------

    @contextmanager
    def dispatch(self):
        self._lock.acquire_read()
        try:
            yield
        finally:
            self._lock.release_read()

    def hop(self) -> None:
        if self.hop_latency_ms:
            time.sleep(self.hop_latency_ms / 1000)

    def close(self) -> None:
        for shard in self.shards.values():
            shard.close()

    def __enter__(self) -> "Cluster":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    # -- routers ----------------------------------------------------------

    def fail_router(self, router_id: int) -> None:
        self._router(router_id).alive = False

    def revive_router(self, router_id: int) -> None:
        router = self._router(router_id)
        router.alive = True
        router.fail_after = None

    def _router(self, router_id: int) -> Router:
        for router in self.routers:
            if router.id == router_id:
                return router
        raise ShardError(f"no router {router_id}")

    def route_with_failover(self, call: Callable[[Router], Any]) -> Any:
        """Run ``call`` on a live router, moving on to the next one when a router goes down."""
        start = next(self._rr)
        n = len(self.routers)
        for k in range(n):
            router = self.routers[(start + k) % n]
            if not router.alive:
                continue
            try:
                return call(router)
            except RouterDown:
                logger.info("router %d down, failing over", router.id)
        raise NoLiveRouter("no live router")

    def insert(self, record: Mapping[str, Any], collection: str = DEFAULT_COLLECTION) -> str:
        doc = dict(record)
        self.table.spec.key_of(doc)  # reject before anything is routed
        # the id is fixed before the first attempt so a retry on another router is idempotent
        doc.setdefault("_id", self._new_id())
        self.route_with_failover(lambda r: r.insert(collection, doc))
        return doc["_id"]

    def query(self, predicate: Mapping[str, Any], collection: str = DEFAULT_COLLECTION) -> QueryResult:
        return self.route_with_failover(lambda r: r.query(collection, predicate))

    # -- topology ---------------------------------------------------------

    def add_shard(self, split_point: Any, collections: tuple[str, ...] = (DEFAULT_COLLECTION,)) -> int:
        """Split the range holding ``split_point``; records at or above it move to a new shard.

        Stop the world: dispatch is blocked until the move and the table swap are done.
        """
        self._lock.acquire_write()
        try:
            old = self.table
            split = key_value(split_point)
            try:
                idx = old.spec.range_index(split)
            except MissingShardKey as exc:
                raise InvalidSplitPoint(f"{split_point!r} is not comparable with the shard keys") from exc
            lo, hi = old.spec.ranges()[idx]
            try:
                inside = (lo is None or lo < split) and (hi is None or split < hi)
            except TypeError:
                inside = False
            if not inside:
                raise InvalidSplitPoint(f"{split_point!r} is not strictly inside an existing range")
            source = self.shards[old.shard_ids[idx]]
            new_id = max(self.shards) + 1
            target = Shard(new_id, self.replica_count)
            field_name = old.spec.field_name
            for collection in collections:
                for doc in source.query(collection, {}):
                    if key_value(doc[field_name]) >= split:
                        target.insert(collection, doc)
                        source.remove(collection, doc["_id"])
            bounds = list(old.spec.bounds)
            bounds.insert(idx, split)
            ids = list(old.shard_ids)
            ids.insert(idx + 1, new_id)
            self.shards[new_id] = target
            self.table = RoutingTable(ShardKeySpec(field_name, tuple(bounds)), tuple(ids), old.version + 1)
            return new_id
        finally:
            self._lock.release_write()

    # -- inspection -------------------------------------------------------

    def total(self, collection: str = DEFAULT_COLLECTION) -> int:
        return sum(s.count(collection) for s in self.shards.values())

    def misplaced(self, collection: str = DEFAULT_COLLECTION) -> list[tuple[int, str]]:
        """Records sitting on a shard other than their key's owner."""
        out = []
        for shard in self.shards.values():
            for doc in shard.query(collection, {}):
                if self.table.owner(doc[self.table.spec.field_name]) != shard.id:
                    out.append((shard.id, doc["_id"]))
        return out

    def replicas_consistent(self, collection: str = DEFAULT_COLLECTION) -> bool:
        for shard in self.shards.values():
            primary = sorted(d["_id"] for d in shard.query(collection, {}))
            for replica in shard.replicas:
                if sorted(d["_id"] for d in replica.query(collection, {})) != primary:
                    return False
        return True


# -- cluster spec files ---------------------------------------------------

@dataclass(frozen=True)
class ClusterSpec:
    field_name: str = "patientId"
    split_points: tuple[Any, ...] = (5000, 10000)
    replica_count: int = 0
    router_count: int = 2
    hop_latency_ms: float = 0.0

    @property
    def shard_count(self) -> int:
        return len(self.split_points) + 1

    def build(self) -> Cluster:
        return Cluster(ShardKeySpec(self.field_name, self.split_points), self.router_count, self.replica_count,
                       self.hop_latency_ms)


def parse_cluster_spec(text: str, key_space: int = 15000) -> ClusterSpec:
    """``key = value`` lines: fieldName, splitPoints, shardCount, replicaCount, routerCount, hopLatencyMs."""
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ShardError(f"line {lineno}: expected key = value")
        values[key.strip()] = value.strip()
    known = {"fieldName", "splitPoints", "shardCount", "replicaCount", "routerCount", "hopLatencyMs", "keySpace"}
    unknown = set(values) - known
    if unknown:
        raise ShardError(f"unknown cluster keys: {', '.join(sorted(unknown))}")
    try:
        key_space = int(values.get("keySpace", key_space))
        if "splitPoints" in values:
            splits = tuple(key_value(p.strip()) for p in values["splitPoints"].split(",") if p.strip())
        else:
            n = int(values.get("shardCount", 3))
            splits = tuple(key_space * i // n for i in range(1, n))
        if "shardCount" in values and int(values["shardCount"]) != len(splits) + 1:
            raise ShardError(f"shardCount {values['shardCount']} disagrees with {len(splits)} split points")
        return ClusterSpec(
            field_name=values.get("fieldName", "patientId"),
            split_points=splits,
            replica_count=int(values.get("replicaCount", 0)),
            router_count=int(values.get("routerCount", 2)),
            hop_latency_ms=float(values.get("hopLatencyMs", 0)),
        )
    except ValueError as exc:
        raise ShardError(f"bad cluster spec: {exc}") from None


def load_cluster_spec(path: str | Path) -> ClusterSpec:
    return parse_cluster_spec(Path(path).read_text())


# -- workloads and the unsharded oracle -------------------------------------

def generate_records(n: int, key_space: int = 15000, seed: int = 0, field_name: str = "patientId") -> list[dict]:
    rng = random.Random(seed)
    new_id = id_factory(BackendKind.DOCUMENT)
    return [
        {
            "_id": new_id(),
            field_name: str(rng.randrange(key_space)),
            "description": f"Goal {i:05d}",
            "term": rng.choice(("Short", "Long")),
            "comments": [],
        }
        for i in range(n)
    ]


def generate_queries(records: list[dict], count: int = 200, seed: int = 1,
                     field_name: str = "patientId") -> list[dict[str, Any]]:
    """Keyed and keyless equality predicates; about half carry the shard key."""
    rng = random.Random(seed)
    out: list[dict[str, Any]] = [{"term": "Short"}, {"term": "Long"}, {}]
    for _ in range(count - len(out)):
        pick = rng.choice(records)
        roll = rng.random()
        if roll < 0.4:
            out.append({field_name: pick[field_name]})
        elif roll < 0.55:
            out.append({field_name: pick[field_name], "term": pick["term"]})
        elif roll < 0.8:
            out.append({"description": pick["description"]})
        else:
            out.append({field_name: str(rng.randrange(20000))})
    return out


@dataclass
class OracleReport:
    queries: int = 0
    mismatches: list[dict[str, Any]] = field(default_factory=list)
    contacted: Counter = field(default_factory=Counter)
    keyed_wrong: int = 0
    keyless_wrong: int = 0

    @property
    def ok(self) -> bool:
        return not self.mismatches and not self.keyed_wrong and not self.keyless_wrong


def check_against_oracle(cluster: Cluster, oracle: DocumentStore, queries: list[dict[str, Any]],
                         collection: str = DEFAULT_COLLECTION) -> OracleReport:
    report = OracleReport()
    field_name = cluster.table.spec.field_name
    n = len(cluster.shards)
    for predicate in queries:
        result = cluster.query(predicate, collection)
        expected = oracle.query(collection, predicate)
        report.queries += 1
        report.contacted[result.shards_contacted] += 1
        if sorted(map(_canonical, result.records)) != sorted(map(_canonical, expected)):
            report.mismatches.append(predicate)
        if field_name in predicate:
            report.keyed_wrong += result.shards_contacted != 1
        else:
            report.keyless_wrong += result.shards_contacted != n
    return report


def _canonical(doc: Mapping[str, Any]) -> str:
    return json.dumps(doc, sort_keys=True)


def build_oracle(records: list[dict], collection: str = DEFAULT_COLLECTION) -> DocumentStore:
    store = DocumentStore(None, JOURNALED)
    for record in records:
        store.create(collection, record)
    return store
