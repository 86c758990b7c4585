from dataclasses import replace

import numpy as np
import pytest

from sieve_fgac.src.sieve.cost_model import CostConstants, ExecMode, Strategy
from sieve_fgac.src.sieve.engine import INDEX_SCAN, TABLE_SCAN, Engine, EngineCounters
from sieve_fgac.src.sieve.errors import DataLoadError
from sieve_fgac.src.sieve.guard_generation import IndexCatalog
from sieve_fgac.src.sieve.guard_selection import GeKey
from sieve_fgac.src.sieve.middleware import Sieve
from sieve_fgac.src.sieve.policy import QueryMetadata
from sieve_fgac.src.sieve.rewriter import HINTED, PLAIN
from sieve_fgac.src.sieve.store import PolicyStore
from sieve_fgac.src.sieve.workload import (
    ATTENDANCE,
    SPACE_USAGE,
    TEMPLATES,
    UserProfile,
    generate_policies,
    generate_queries,
    generate_wifi_events,
)

from .utils import FACULTY, PURPOSE, STUDENT_QUERIER

QUERIES = [
    "SELECT * FROM wifi",
    "SELECT * FROM wifi AS W WHERE W.ts_date BETWEEN '2018-02-01' AND '2018-02-03'",
    "SELECT W.location_id, COUNT(*) FROM wifi AS W WHERE W.ts_time >= '09:00:00' "
    "GROUP BY W.location_id",
    "SELECT W.id FROM wifi AS W WHERE W.owner IN (1, 3) AND W.location_id = 0",
    "SELECT A.id, B.id FROM wifi AS A JOIN wifi AS B ON A.location_id = B.location_id "
    "WHERE A.owner = 1 AND B.ts_date = '2018-02-02'",
    "SELECT COUNT(*) FROM wifi AS W WHERE W.location_id = 2",
]
STRATEGIES = [None] + list(Strategy)


@pytest.mark.parametrize("querier", [FACULTY, STUDENT_QUERIER, 999])
@pytest.mark.parametrize("strategy", STRATEGIES, ids=lambda s: s.value if s else "auto")
@pytest.mark.parametrize("sql", QUERIES)
def test_every_strategy_matches_the_oracle(engine, store, sql, strategy, querier):
    sieve = Sieve(engine, store=store)
    qm = QueryMetadata(querier, PURPOSE)
    outcome = sieve.query(sql, qm, strategy)
    expected = sieve.oracle(sieve.parse(sql), qm)
    assert outcome.result.columns == expected.columns
    assert outcome.result.as_multiset() == expected.as_multiset()


@pytest.mark.parametrize("caps", [PLAIN, HINTED], ids=["plain", "hinted"])
def test_dialects_do_not_change_results(engine, store, caps):
    qm = QueryMetadata(FACULTY, PURPOSE)
    sieve = Sieve(engine, store=store, caps=caps)
    for sql in QUERIES:
        outcome = sieve.query(sql, qm)
        assert outcome.result.as_multiset() == sieve.oracle(sieve.parse(sql), qm).as_multiset()


def test_delta_partitions_match_the_oracle(engine, store):
    sieve = Sieve(engine, store=store, k=CostConstants(udf_inv=1.0, udf_exec=0.1))
    qm = QueryMetadata(FACULTY, PURPOSE)
    ge = sieve.guarded_expression(GeKey(FACULTY, PURPOSE, "wifi"))
    assert all(g.exec_mode is ExecMode.DELTA for g in ge.guards if len(g.policies) > 1)
    for sql in QUERIES:
        outcome = sieve.query(sql, qm, Strategy.INDEX_GUARDS)
        assert outcome.result.as_multiset() == sieve.oracle(sieve.parse(sql), qm).as_multiset()


def test_empty_aggregate_counts_zero(engine, store):
    sieve = Sieve(engine, store=store)
    sql = "SELECT COUNT(*) FROM wifi AS W WHERE W.location_id = 2"
    assert sieve.query(sql, QueryMetadata(999, PURPOSE)).result.rows == ((0,),)


def test_counters_follow_the_access_path(engine, store):
    sieve = Sieve(engine, store=store)
    qm = QueryMetadata(FACULTY, PURPOSE)
    scan = sieve.query("SELECT * FROM wifi", qm, Strategy.LINEAR_SCAN).counters
    assert scan.rows_read_sequential == 60
    assert scan.rows_read_random == 0
    guarded = sieve.query("SELECT * FROM wifi", qm, Strategy.INDEX_GUARDS).counters
    assert guarded.rows_read_sequential == 0
    assert guarded.rows_read_random > 0
    flat = sieve.query("SELECT * FROM wifi", qm, Strategy.BASELINE_U).counters
    assert flat.delta_invocations == 60
    assert flat.cost_units(CostConstants()) > guarded.cost_units(CostConstants())


def test_query_outcome_reports_timings(engine, store):
    outcome = Sieve(engine, store=store).query("SELECT * FROM wifi", QueryMetadata(FACULTY, PURPOSE))
    assert set(outcome.timings) == {"acquire", "rewrite", "execute"}
    assert outcome.lookups == []
    assert outcome.rewrite.sql.startswith("WITH wifi_guarded AS (")


def test_explain_picks_indexed_predicates(engine):
    sieve = Sieve(engine)
    [indexed] = engine.explain(sieve.parse("SELECT * FROM wifi AS W WHERE W.location_id = 2"))
    assert (indexed.path, indexed.attribute, indexed.alias) == (INDEX_SCAN, "location_id", "W")
    [scan] = engine.explain(sieve.parse("SELECT * FROM wifi WHERE id = 3"))
    assert scan.path == TABLE_SCAN
    assert scan.estimated_rows == 60.0
    assert scan.to_dict()["access_path"] == "table-scan"


def test_counters_add_up():
    total = EngineCounters(rows_read_random=2)
    total.add(EngineCounters(rows_read_random=1, policy_evals=4))
    assert total.to_dict()["rows_read_random"] == 3
    assert total.cost_units(CostConstants()) == 3 * 9.0 + 4 * 1.0


@pytest.mark.parametrize(
    "records",
    [
        [{"floor": 1}],
        [{"owner": 1, "floor": 1}, {"owner": 2, "floor": "one"}],
        [{"owner": 1, "floor": 1}, {"owner": 2}],
        [{"owner": True}],
    ],
)
def test_load_rejects_bad_rows(records):
    with pytest.raises(DataLoadError):
        Engine().load("rooms", records)


def test_load_rejects_indexes_outside_the_schema():
    engine = Engine(IndexCatalog({"rooms": ["floor", "wing"]}))
    with pytest.raises(DataLoadError, match="wing"):
        engine.load("rooms", [{"owner": 1, "floor": 2}])
    with pytest.raises(DataLoadError):
        engine.relation("rooms")

    engine = Engine(IndexCatalog({"rooms": ["floor"]}))
    assert engine.load("rooms", [{"owner": 1, "floor": 2}]).index("floor") is not None


def test_missing_relations_and_files(tmp_path):
    engine = Engine()
    with pytest.raises(DataLoadError):
        engine.relation("rooms")
    with pytest.raises(DataLoadError):
        engine.load_jsonl("rooms", str(tmp_path / "missing.jsonl"))
    broken = tmp_path / "rooms.jsonl"
    broken.write_text('{"owner": 1}\n{owner\n')
    with pytest.raises(DataLoadError):
        engine.load_jsonl("rooms", str(broken))
    listed = tmp_path / "list.jsonl"
    listed.write_text("[1, 2]\n")
    with pytest.raises(DataLoadError):
        engine.load_jsonl("rooms", str(listed))


def test_load_jsonl_decodes_tagged_values(tmp_path):
    path = tmp_path / "wifi.jsonl"
    path.write_text('{"owner": 1, "ts_date": {"date": "2018-02-01"}}\n\n{"owner": 2, "ts_date": {"date": "2018-02-02"}}\n')
    relation = Engine().load_jsonl("wifi", str(path))
    assert len(relation) == 2
    assert relation.schema["ts_date"].value == "date"


SMALL_SPACE_USAGE = replace(
    SPACE_USAGE,
    profiles=tuple(UserProfile(p.name, max(2, p.count // 100)) for p in SPACE_USAGE.profiles),
)


@pytest.mark.parametrize("spec", [ATTENDANCE.desk(), SMALL_SPACE_USAGE], ids=lambda s: s.name)
def test_generated_workloads_match_the_oracle(spec):
    templates = set()
    checked = 0
    for seed in range(9):
        rng = np.random.default_rng(seed)
        policies = generate_policies(spec, rng)[:200]
        engine = Engine(IndexCatalog({spec.relation: ["location_id", "ts_date", "ts_time"]}))
        engine.load(spec.relation, generate_wifi_events(spec, policies, 200, rng))
        store = PolicyStore()
        for policy in policies:
            store.insert_policy(policy)
        sieve = Sieve(engine, store=store)
        for query in generate_queries(spec, policies, rng, count=12):
            qm = QueryMetadata(query.querier, query.purpose)
            outcome = sieve.query(query.sql, qm)
            expected = sieve.oracle(sieve.parse(query.sql), qm)
            assert outcome.result.as_multiset() == expected.as_multiset(), query.sql
            templates.add(query.template)
            checked += 1
    assert checked >= 108
    assert templates == set(TEMPLATES)
