import csv
import json
from dataclasses import replace

import numpy as np
import pytest

from sieve_fgac.src.sieve.cache import RefreshStrategy
from sieve_fgac.src.sieve.cost_model import Strategy
from sieve_fgac.src.sieve.engine import Engine, ResultSet
from sieve_fgac.src.sieve.errors import OracleMismatchError
from sieve_fgac.src.sieve.guard_generation import IndexCatalog
from sieve_fgac.src.sieve.harness import (
    SIEVE,
    BaselineRow,
    BenchConfig,
    RunReport,
    distinct_queriers,
    run_baselines,
    run_workload,
)
from sieve_fgac.src.sieve.middleware import Sieve
from sieve_fgac.src.sieve.policy import QueryMetadata
from sieve_fgac.src.sieve.store import PolicyStore
from sieve_fgac.src.sieve.workload import (
    ATTENDANCE,
    EventKind,
    GeneratedQuery,
    WorkloadConfig,
    WorkloadEvent,
    WorkloadMode,
    generate_wifi_events,
    generate_workload,
)

from .utils import FACULTY, PURPOSE, WIFI_INDEXES, make_policy, wifi_rows

DESK = ATTENDANCE.desk()


@pytest.fixture(scope="module")
def workload():
    return generate_workload(DESK, WorkloadConfig(x=10, y=2, seed=1))


@pytest.fixture(scope="module")
def wifi_engine(workload):
    engine = Engine(IndexCatalog({"wifi": WIFI_INDEXES}))
    engine.load("wifi", generate_wifi_events(DESK, workload.policies, 400, np.random.default_rng(2)))
    return engine


def first_epochs(events, count):
    return [e for e in events if e.epoch <= count]


def test_bench_config():
    cfg = BenchConfig()
    assert cfg.capacity_for(38) == 31
    assert cfg.capacity_for(0) == 0
    assert cfg.verify_for(9_999) and not cfg.verify_for(10_000)
    assert BenchConfig(verify=False).verify_for(5) is False
    assert cfg.to_dict()["refresh_strategy"] == "o1"


@pytest.mark.parametrize("strategy", list(RefreshStrategy))
def test_replay_matches_the_oracle(workload, wifi_engine, strategy):
    events = first_epochs(workload.events, 12)
    cfg = BenchConfig(refresh_strategy=strategy, verify=True)
    seen = []
    report = run_workload(events, wifi_engine, cfg, on_event=seen.append)
    queries = sum(1 for e in events if e.kind is EventKind.QUERY)
    assert seen == events
    assert report.queries == report.verified == queries
    assert report.mismatches == 0
    assert sum(e.queries for e in report.epochs) == queries
    cache = report.cache
    assert cache["hits"] + cache["soft_hits"] + cache["misses"] == queries
    assert cache["capacity"] == cfg.capacity_for(distinct_queriers(events))
    assert report.cost_units["total"] == pytest.approx(
        report.cost_units["build"] + report.cost_units["execute"]
    )


def test_replay_with_deletions(wifi_engine):
    workload = generate_workload(DESK, WorkloadConfig(mode=WorkloadMode.DELETION, x=10, y=3, z=2, seed=4))
    events = first_epochs(workload.events, 10)
    report = run_workload(events, wifi_engine, BenchConfig(verify=True, refresh_strategy=RefreshStrategy.B2))
    assert report.mismatches == 0
    assert report.verified == 30


def test_forced_strategy_is_recorded(workload, wifi_engine):
    events = first_epochs(workload.events, 5)
    report = run_workload(events, wifi_engine, BenchConfig(strategy=Strategy.LINEAR_SCAN, verify=True))
    assert set(report.policy_evals) == {"LinearScan"}
    assert report.config["strategy"] == "LinearScan"


def test_mismatch_writes_a_repro(workload, wifi_engine, tmp_path, monkeypatch):
    monkeypatch.setattr(Sieve, "oracle", lambda self, parsed, qm: ResultSet(("x",), ((1,),)))
    events = first_epochs(workload.events, 3)
    with pytest.raises(OracleMismatchError) as caught:
        run_workload(events, wifi_engine, BenchConfig(verify=True, repro_dir=str(tmp_path)))
    first_query = next(e for e in events if e.kind is EventKind.QUERY)
    assert caught.value.repro_path == str(tmp_path / f"mismatch-{first_query.seq}.json")
    record = json.loads((tmp_path / f"mismatch-{first_query.seq}.json").read_text())
    assert record["query"] == first_query.query.sql
    assert record["missing_rows"] == [[1]]


def test_baselines_agree_with_sieve(workload, wifi_engine):
    queries = workload.queries[:12]
    rows = run_baselines(queries, workload.policies[:300], wifi_engine)
    assert [r.strategy for r in rows] == [SIEVE, "Baseline_P", "Baseline_I", "Baseline_U"]
    assert all(r.queries == 12 for r in rows)
    assert all(r.differing == 0 for r in rows)
    by_name = {r.strategy: r for r in rows}
    assert by_name["Baseline_U"].delta_invocations > 0


def test_report_outputs(workload, wifi_engine, tmp_path):
    report = run_workload(first_epochs(workload.events, 6), wifi_engine, BenchConfig(verify=False))
    report.baselines = [
        BaselineRow(SIEVE, queries=2, policy_evals=25),
        BaselineRow("Baseline_P", queries=2, policy_evals=100),
    ]
    assert report.savings() == pytest.approx(0.75)

    json_path = tmp_path / "report.json"
    report.write_json(str(json_path))
    restored = RunReport.from_dict(json.loads(json_path.read_text()))
    assert restored == report

    csv_path = tmp_path / "epochs.csv"
    assert report.write_epochs_csv(str(csv_path)) == len(report.epochs) == 6
    with open(csv_path) as f:
        lines = list(csv.reader(f))
    assert lines[0] == ["epoch", "queries", "hits", "soft_hits", "misses", "hit_rate"]
    assert [int(line[0]) for line in lines[1:]] == list(range(1, 7))

    html = report.to_html("desk run")
    assert "<title>desk run</title>" in html
    assert "policy checks saved" in html
    assert "Baseline_P" in html
    assert "Hit rate" in report.hit_rate_chart()
    assert report.summary_table().row_count > 0
    assert report.baseline_table().row_count == 2


def test_savings_needs_both_rows():
    report = RunReport(config={}, seed=1)
    assert report.savings() is None
    report.baselines = [BaselineRow(SIEVE, policy_evals=5), BaselineRow("Baseline_P")]
    assert report.savings() is None


def test_multi_relation_queries_are_counted_once():
    engine = Engine(IndexCatalog({"wifi": WIFI_INDEXES, "rooms": ["location_id"]}))
    engine.load("wifi", wifi_rows())
    engine.load("rooms", [{"id": i, "owner": i % 4 + 1, "location_id": i % 5} for i in range(20)])
    policies = [make_policy(owner) for owner in range(1, 5)]
    policies += [replace(make_policy(owner), relation="rooms") for owner in (1, 2)]
    sql = "SELECT W.id, R.id FROM wifi AS W JOIN rooms AS R ON W.location_id = R.location_id"
    events = [
        WorkloadEvent(seq, 1, EventKind.INSERT_POLICY, policy=policy)
        for seq, policy in enumerate(policies, start=1)
    ]
    events.append(
        WorkloadEvent(
            len(events) + 1, 1, EventKind.QUERY, query=GeneratedQuery(sql, FACULTY, PURPOSE, "Q1")
        )
    )
    report = run_workload(events, engine, BenchConfig(strategy=Strategy.LINEAR_SCAN, verify=True))

    store = PolicyStore()
    for policy in policies:
        store.insert_policy(policy)
    outcome = Sieve(engine, store=store).query(sql, QueryMetadata(FACULTY, PURPOSE), Strategy.LINEAR_SCAN)
    assert outcome.counters.policy_evals > 0
    assert report.policy_evals == {"LinearScan": outcome.counters.policy_evals}


def test_sieve_saves_most_policy_checks(workload, wifi_engine):
    rows = run_baselines(
        workload.queries[:30], workload.policies, wifi_engine, strategies=(None, Strategy.BASELINE_P)
    )
    by_name = {r.strategy: r for r in rows}
    assert by_name["Baseline_P"].policy_evals > 0
    assert by_name[SIEVE].policy_evals <= 0.1 * by_name["Baseline_P"].policy_evals
    assert all(r.differing == 0 for r in rows)


# cache behaviour over whole runs


@pytest.fixture(scope="module")
def one_query_per_epoch():
    return generate_workload(DESK, WorkloadConfig(x=10, y=1, seed=1))


def miss_rate(report):
    cache = report.cache
    return cache["misses"] / (cache["hits"] + cache["soft_hits"] + cache["misses"])


def test_smaller_caches_miss_more(one_query_per_epoch, wifi_engine):
    events = one_query_per_epoch.events
    large = run_workload(events, wifi_engine, BenchConfig(cache_size_pct=80, verify=False))
    small = run_workload(events, wifi_engine, BenchConfig(cache_size_pct=20, verify=False))
    assert large.cache["hits"] + large.cache["soft_hits"] > large.cache["misses"]
    assert miss_rate(small) >= 2 * miss_rate(large)


def test_skewed_queriers_hit_the_cache_more(wifi_engine):
    rates = []
    for alpha in (1.0, 0.5, 0.0):
        workload = generate_workload(
            DESK, WorkloadConfig(x=10, y=10, zipf_alpha=alpha, seed=1, max_queries=1000)
        )
        report = run_workload(workload.events, wifi_engine, BenchConfig(verify=False))
        rates.append(report.cache["hit_rate"])
    assert rates[0] >= 0.6
    assert rates[1] <= rates[0] + 0.03
    assert rates[2] <= rates[1] + 0.03


def test_refresh_strategies_trade_regenerations_for_cost(one_query_per_epoch, wifi_engine):
    # one access path for every run, so only the refresh policy changes the cost
    reports = {
        strategy: run_workload(
            one_query_per_epoch.events,
            wifi_engine,
            BenchConfig(refresh_strategy=strategy, strategy=Strategy.INDEX_GUARDS, verify=False),
        )
        for strategy in RefreshStrategy
    }
    regenerations = {s: r.cache["regenerations"] for s, r in reports.items()}
    assert regenerations[RefreshStrategy.B1] >= regenerations[RefreshStrategy.O2]
    assert regenerations[RefreshStrategy.O2] >= regenerations[RefreshStrategy.O1]
    assert regenerations[RefreshStrategy.B1] == reports[RefreshStrategy.B1].cache["soft_hits"] > 0
    total = {s: r.cost_units["total"] for s, r in reports.items()}
    assert total[RefreshStrategy.O1] <= total[RefreshStrategy.B1]
    assert total[RefreshStrategy.O1] <= total[RefreshStrategy.B2]


def test_bursty_runs_warm_up(wifi_engine):
    cfg = WorkloadConfig(
        mode=WorkloadMode.BURSTY,
        seed=1,
        bursty_start=(100, 1),
        bursty_step=(-4, 1),
        bursty_stop=(1, 250),
    )
    workload = generate_workload(DESK, cfg)
    report = run_workload(workload.events, wifi_engine, BenchConfig(verify=False))
    assert len(report.epochs) == 25
    quarter = len(report.epochs) // 4
    first = np.mean([e.hit_rate for e in report.epochs[:quarter]])
    last = np.mean([e.hit_rate for e in report.epochs[-quarter:]])
    assert last - first >= 0.3


def test_more_deletions_mean_more_regenerations(wifi_engine):
    reports = {}
    for deletions in (2, 10):
        workload = generate_workload(
            DESK,
            WorkloadConfig(mode=WorkloadMode.DELETION, x=10, y=5, z=deletions, seed=1, max_queries=300),
        )
        reports[deletions] = run_workload(
            workload.events, wifi_engine, BenchConfig(verify=deletions == 10)
        )
    assert reports[10].mismatches == 0
    assert reports[10].verified == 300
    assert reports[10].cache["soft_hits"] > reports[2].cache["soft_hits"]
    assert reports[10].cache["regenerations"] > reports[2].cache["regenerations"]
