import threading

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vrebench.shardsim import (
    Cluster,
    ClusterSpec,
    InvalidSplitPoint,
    MissingShardKey,
    NoLiveRouter,
    ShardError,
    ShardKeySpec,
    build_oracle,
    check_against_oracle,
    generate_queries,
    generate_records,
    parse_cluster_spec,
)

SPEC = ShardKeySpec("patientId", (5000, 10000))


@pytest.fixture
def cluster():
    with Cluster(SPEC, routers=2) as c:
        yield c


def _goal(pid, **extra):
    return {"patientId": pid, "description": "d", "term": "Short", **extra}


def test_insert_lands_on_owner_only(cluster):
    gid = cluster.insert(_goal(7421))
    assert [s.count("Goals") for s in cluster.shards.values()] == [0, 1, 0]
    result = cluster.query({"patientId": 7421})
    assert result.shards_contacted == 1 and result.shard_ids == (2,)
    assert [r["_id"] for r in result.records] == [gid]


def test_range_edges():
    assert [SPEC.range_index(k) for k in (0, 4999, 5000, 9999, 10000, 10**9)] == [0, 0, 1, 1, 2, 2]
    assert SPEC.range_index("7421") == 1
    assert SPEC.ranges() == [(None, 5000), (5000, 10000), (10000, None)]
    with pytest.raises(InvalidSplitPoint):
        ShardKeySpec("patientId", (10, 5))


def test_missing_shard_key(cluster):
    with pytest.raises(MissingShardKey):
        cluster.insert({"description": "no key", "term": "Short"})
    with pytest.raises(MissingShardKey):
        cluster.insert(_goal(None))
    assert cluster.total() == 0


def test_keyless_query_scatters(cluster):
    for pid in (1, 6000, 12000):
        cluster.insert(_goal(pid, term="Long"))
    result = cluster.query({"term": "Long"})
    assert result.shards_contacted == 3 and len(result.records) == 3
    assert cluster.contacted == {3: 1}


def test_failover_keeps_every_request(cluster):
    cluster.fail_router(1)
    for i in range(100):
        cluster.insert(_goal(i * 150))
    assert cluster.total() == 100
    cluster.fail_router(2)
    with pytest.raises(NoLiveRouter):
        cluster.insert(_goal(1))
    with pytest.raises(NoLiveRouter):
        cluster.query({})
    cluster.revive_router(1)
    assert len(cluster.query({}).records) == 100


def test_router_dying_mid_request_causes_no_duplicate(cluster):
    cluster.routers[0].fail_after = 3
    cluster.routers[1].fail_after = None
    ids = [cluster.insert(_goal(i * 100)) for i in range(50)]
    assert not cluster.routers[0].alive
    assert cluster.total() == 50
    assert sorted(r["_id"] for r in cluster.query({}).records) == sorted(ids)


def test_add_shard_splits_and_conserves(cluster):
    records = generate_records(3000, seed=3)
    for r in records:
        cluster.insert(r)
    queries = generate_queries(records, 150, seed=4)
    before = {i: sorted(r["_id"] for r in cluster.query(q).records) for i, q in enumerate(queries)}
    new_id = cluster.add_shard(12000)
    assert new_id == 4 and cluster.table.version == 2
    assert cluster.table.owner(12000) == 4 and cluster.table.owner(11999) == 3
    assert cluster.total() == 3000
    assert cluster.misplaced() == []
    after = {i: sorted(r["_id"] for r in cluster.query(q).records) for i, q in enumerate(queries)}
    assert after == before
    assert cluster.query({"term": "Short"}).shards_contacted == 4


@pytest.mark.parametrize("split", [5000, 10000, "x"])
def test_add_shard_rejects_boundary(cluster, split):
    with pytest.raises(InvalidSplitPoint):
        cluster.add_shard(split)


def test_add_shard_during_traffic():
    with Cluster(SPEC, routers=2) as cluster:
        records = generate_records(2000, seed=9)
        errors = []

        def writer(chunk):
            try:
                for r in chunk:
                    cluster.insert(r)
            except Exception as exc:  # pragma: no cover - surfaced below
                errors.append(exc)

        threads = [threading.Thread(target=writer, args=(records[i::4],)) for i in range(4)]
        for t in threads:
            t.start()
        cluster.add_shard(12000)
        cluster.add_shard(2500)
        for t in threads:
            t.join()
        assert errors == []
        assert cluster.total() == 2000
        assert cluster.misplaced() == []


def test_replicas_follow_primary():
    with Cluster(SPEC, routers=1, replicas=2) as cluster:
        for r in generate_records(300, seed=2):
            cluster.insert(r)
        cluster.add_shard(12000)
        assert cluster.replicas_consistent()


def test_oracle_over_ten_thousand_records():
    records = generate_records(10_000, seed=0)
    oracle = build_oracle(records)
    with Cluster(SPEC) as cluster:
        for r in records:
            cluster.insert(r)
        report = check_against_oracle(cluster, oracle, generate_queries(records, 200, seed=1))
    oracle.close()
    assert report.ok
    assert set(report.contacted) == {1, 3}


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(0, 20_000), min_size=1, max_size=60), st.integers(1, 19_999))
def test_partition_invariant_holds_across_split(keys, split):
    with Cluster(SPEC, routers=1) as cluster:
        for k in keys:
            cluster.insert(_goal(k))
        try:
            cluster.add_shard(split)
        except InvalidSplitPoint:
            assert split in (5000, 10000)
        assert cluster.misplaced() == []
        assert cluster.total() == len(keys)


def test_cluster_spec_file():
    spec = parse_cluster_spec("fieldName = patientId\nshardCount = 3\nrouterCount = 2\nkeySpace = 15000\n")
    assert spec == ClusterSpec("patientId", (5000, 10000), 0, 2, 0.0)
    spec = parse_cluster_spec("splitPoints = 100, 200\nreplicaCount = 1\n")
    assert spec.shard_count == 3 and spec.replica_count == 1
    with pytest.raises(ShardError):
        parse_cluster_spec("splitPoints = 100\nshardCount = 4\n")
    with pytest.raises(ShardError):
        parse_cluster_spec("colour = blue\n")
