"""
Workload replay and reporting.

A run replays a workload event by event: inserts and deletes go to the policy
store, queries go through cache → rewriter → engine. Optionally every query is
cross-checked against the oracle pipeline.
"""

import csv
import json
import math
import os
import time
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional, Sequence

import plotille
import plotly.graph_objects as go
from rich.table import Table

from sieve_fgac.src.sieve.cache import LookupOutcome, RefreshStrategy
from sieve_fgac.src.sieve.cost_model import CostConstants, Strategy
from sieve_fgac.src.sieve.engine import Engine, EngineCounters, ResultSet
from sieve_fgac.src.sieve.errors import OracleMismatchError
from sieve_fgac.src.sieve.guard_selection import GeKey
from sieve_fgac.src.sieve.middleware import Sieve
from sieve_fgac.src.sieve.policy import Policy, QueryMetadata
from sieve_fgac.src.sieve.rewriter import BASELINES, EMBEDDED, DialectCapabilities, execute_rewritten
from sieve_fgac.src.sieve.sql import ParsedQuery
from sieve_fgac.src.sieve.store import PolicyStore
from sieve_fgac.src.sieve.utils import jinja_env
from sieve_fgac.src.sieve.values import encode_value
from sieve_fgac.src.sieve.workload import EventKind, GeneratedQuery, WorkloadEvent

SIEVE = "Sieve"
DEFAULT_VERIFY_THRESHOLD = 10_000


@dataclass(frozen=True)
class BenchConfig:
    """
    :var verify: ``None`` verifies only when the data has fewer rows than
        ``verify_threshold``
    :var strategy: force one execution strategy instead of the cost-based choice
    """

    cache_size_pct: float = 80.0
    refresh_strategy: RefreshStrategy = RefreshStrategy.O1
    window_size: int = 10
    verify: Optional[bool] = None
    verify_threshold: int = DEFAULT_VERIFY_THRESHOLD
    repro_dir: str = "."
    seed: int = 42
    update_limit: int = 10
    strategy: Optional[Strategy] = None

    def capacity_for(self, queriers: int) -> int:
        return math.ceil(self.cache_size_pct / 100 * queriers)

    def verify_for(self, rows: int) -> bool:
        return self.verify if self.verify is not None else rows < self.verify_threshold

    def to_dict(self) -> dict:
        return {
            "cache_size_pct": self.cache_size_pct,
            "refresh_strategy": self.refresh_strategy.value,
            "window_size": self.window_size,
            "verify": self.verify,
            "verify_threshold": self.verify_threshold,
            "seed": self.seed,
            "update_limit": self.update_limit,
            "strategy": self.strategy.value if self.strategy else None,
        }


@dataclass
class EpochStats:
    epoch: int
    queries: int = 0
    hits: int = 0
    soft_hits: int = 0
    misses: int = 0

    @property
    def hit_rate(self) -> float:
        lookups = self.hits + self.soft_hits + self.misses
        return self.hits / lookups if lookups else 0.0

    def record(self, outcome: LookupOutcome) -> None:
        if outcome is LookupOutcome.HIT:
            self.hits += 1
        elif outcome is LookupOutcome.SOFT_HIT:
            self.soft_hits += 1
        else:
            self.misses += 1


@dataclass
class BaselineRow:
    strategy: str
    queries: int = 0
    policy_evals: int = 0
    predicate_evals: int = 0
    rows_read_random: int = 0
    rows_read_sequential: int = 0
    delta_invocations: int = 0
    cost_units: float = 0.0
    seconds: float = 0.0
    differing: int = 0

    def add(self, counters: EngineCounters, k: CostConstants, seconds: float) -> None:
        self.queries += 1
        self.policy_evals += counters.policy_evals
        self.predicate_evals += counters.predicate_evals
        self.rows_read_random += counters.rows_read_random
        self.rows_read_sequential += counters.rows_read_sequential
        self.delta_invocations += counters.delta_invocations
        self.cost_units += counters.cost_units(k)
        self.seconds += seconds


@dataclass
class RunReport:
    config: dict
    seed: int
    queries: int = 0
    verified: int = 0
    timings: dict = field(default_factory=lambda: {"ge_build": 0.0, "rewrite": 0.0, "execute": 0.0})
    cost_units: dict = field(default_factory=lambda: {"build": 0.0, "execute": 0.0, "total": 0.0})
    cache: dict = field(default_factory=dict)
    policy_evals: dict = field(default_factory=dict)
    baselines: list[BaselineRow] = field(default_factory=list)
    epochs: list[EpochStats] = field(default_factory=list)
    mismatches: int = 0

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "seed": self.seed,
            "queries": self.queries,
            "verified": self.verified,
            "timings": self.timings,
            "cost_units": self.cost_units,
            "cache": self.cache,
            "policy_evals": self.policy_evals,
            "baselines": [asdict(row) for row in self.baselines],
            "epochs": [asdict(e) for e in self.epochs],
            "mismatches": self.mismatches,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "RunReport":
        return cls(
            config=raw["config"],
            seed=raw["seed"],
            queries=raw["queries"],
            verified=raw.get("verified", 0),
            timings=raw["timings"],
            cost_units=raw["cost_units"],
            cache=raw["cache"],
            policy_evals=raw["policy_evals"],
            baselines=[BaselineRow(**row) for row in raw.get("baselines", [])],
            epochs=[EpochStats(**e) for e in raw.get("epochs", [])],
            mismatches=raw.get("mismatches", 0),
        )

    def savings(self) -> Optional[float]:
        """Fraction of Baseline_P policy checks Sieve avoided, when both were run."""
        rows = {row.strategy: row for row in self.baselines}
        if SIEVE not in rows or Strategy.BASELINE_P.value not in rows:
            return None
        baseline = rows[Strategy.BASELINE_P.value].policy_evals
        if not baseline:
            return None
        return 1 - rows[SIEVE].policy_evals / baseline

    # outputs

    def write_json(self, path: str) -> None:
        with open(os.path.expanduser(path), "w") as f:
            json.dump(self.to_dict(), f, indent=2)

    def write_epochs_csv(self, path: str) -> int:
        with open(os.path.expanduser(path), "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["epoch", "queries", "hits", "soft_hits", "misses", "hit_rate"])
            for e in self.epochs:
                writer.writerow(
                    [e.epoch, e.queries, e.hits, e.soft_hits, e.misses, f"{e.hit_rate:.4f}"]
                )
        return len(self.epochs)

    def summary_table(self) -> Table:
        table = Table(
            title="\n[bold white]Workload run\n",
            show_footer=False,
            show_edge=False,
            header_style="bold white",
            border_style="bright_black",
            style="bold",
            title_justify="center",
            show_lines=False,
            pad_edge=True,
        )
        table.add_column("[bold white]Metric", style="dark_orange")
        table.add_column("[bold white]Value", style="gold1", justify="right")
        rows = [
            ("queries", self.queries),
            ("verified", self.verified),
            ("mismatches", self.mismatches),
            ("ge_build (s)", f"{self.timings['ge_build']:.4f}"),
            ("rewrite (s)", f"{self.timings['rewrite']:.4f}"),
            ("execute (s)", f"{self.timings['execute']:.4f}"),
            ("cost units: build", f"{self.cost_units['build']:.1f}"),
            ("cost units: execute", f"{self.cost_units['execute']:.1f}"),
            ("cost units: total", f"{self.cost_units['total']:.1f}"),
        ]
        rows += [(f"cache: {k}", _fmt(v)) for k, v in self.cache.items()]
        rows += [(f"policy_evals: {k}", v) for k, v in sorted(self.policy_evals.items())]
        for name, value in rows:
            table.add_row(name, str(value))
        return table

    def baseline_table(self) -> Table:
        table = Table(
            title="\n[bold white]Strategy comparison\n",
            show_edge=False,
            header_style="bold white",
            border_style="bright_black",
            style="bold",
            title_justify="center",
            pad_edge=True,
        )
        for name in ("Strategy", "Queries", "Policy evals", "Random reads", "Seq reads", "Cost units", "Seconds", "Differing"):
            table.add_column(f"[bold white]{name}", justify="left" if name == "Strategy" else "right")
        for row in self.baselines:
            table.add_row(
                row.strategy,
                str(row.queries),
                str(row.policy_evals),
                str(row.rows_read_random),
                str(row.rows_read_sequential),
                f"{row.cost_units:.1f}",
                f"{row.seconds:.4f}",
                str(row.differing),
            )
        return table

    def hit_rate_chart(self, width: int = 60, height: int = 15) -> str:
        fig = plotille.Figure()
        fig.width = width
        fig.height = height
        fig.color_mode = "rgb"
        fig.x_label = "Epoch"
        fig.y_label = "Hit rate"
        fig.set_y_limits(min_=0, max_=1)
        if self.epochs:
            xs = [e.epoch for e in self.epochs]
            fig.set_x_limits(min_=min(xs), max_=max(xs) if max(xs) > min(xs) else min(xs) + 1)
            fig.plot(xs, [e.hit_rate for e in self.epochs], label="hit rate", lc=(186, 233, 143))
        return fig.show(legend=True)

    def to_html(self, title: str = "Sieve workload run") -> str:
        xs = [e.epoch for e in self.epochs]
        fig = go.Figure()
        for name, series in (
            ("hits", [e.hits for e in self.epochs]),
            ("soft hits", [e.soft_hits for e in self.epochs]),
            ("misses", [e.misses for e in self.epochs]),
        ):
            fig.add_trace(go.Scatter(x=xs, y=series, mode="lines", name=name, stackgroup="one"))
        fig.update_layout(
            template="plotly_dark",
            paper_bgcolor="#000000",
            plot_bgcolor="#000000",
            font=dict(color="white"),
            margin=dict(t=60, r=50, b=50, l=50),
            height=500,
        )
        fig.update_xaxes(title="Epoch", gridcolor="rgba(128,128,128,0.2)")
        fig.update_yaxes(title="Lookups", gridcolor="rgba(128,128,128,0.2)")
        template = jinja_env.get_template("bench-report.j2")
        return template.render(
            title=title,
            fig_json=fig.to_json(),
            report=self.to_dict(),
            savings=self.savings(),
        )


def _fmt(value) -> str:
    return f"{value:.4f}" if isinstance(value, float) else str(value)


def _encode_row(row: tuple) -> list:
    return [encode_value(v) for v in row]


def write_repro(
    sieve: Sieve,
    event: WorkloadEvent,
    parsed: ParsedQuery,
    actual: ResultSet,
    expected: ResultSet,
    repro_dir: str,
) -> str:
    """Writes the query, its metadata, the relevant policies and the differing rows."""
    query = event.query
    relevant = [
        p.to_dict()
        for relation in parsed.relations()
        for p in sieve.store.fetch_policies(query.querier, query.purpose, relation)
    ]
    got, want = actual.as_multiset(), expected.as_multiset()
    record = {
        "seq": event.seq,
        "query": query.sql,
        "querier": query.querier,
        "purpose": query.purpose,
        "columns": list(expected.columns),
        "policies": relevant,
        "unexpected_rows": [_encode_row(r) for r in sorted((got - want).elements(), key=repr)],
        "missing_rows": [_encode_row(r) for r in sorted((want - got).elements(), key=repr)],
    }
    os.makedirs(os.path.expanduser(repro_dir), exist_ok=True)
    path = os.path.join(os.path.expanduser(repro_dir), f"mismatch-{event.seq}.json")
    with open(path, "w") as f:
        json.dump(record, f, indent=2)
    return path


def distinct_queriers(events: Iterable[WorkloadEvent]) -> int:
    return len({(e.query.querier, e.query.purpose) for e in events if e.kind is EventKind.QUERY})


def run_workload(
    events: Sequence[WorkloadEvent],
    engine: Engine,
    cfg: BenchConfig,
    k: Optional[CostConstants] = None,
    caps: DialectCapabilities = EMBEDDED,
    store: Optional[PolicyStore] = None,
    on_event=None,
) -> RunReport:
    """
    Replays ``events`` in order.

    :param on_event: called with each event after it was applied (progress display)
    :raises OracleMismatchError: on the first query whose result differs from the
        oracle, after writing a repro file
    """
    k = k or CostConstants()
    sieve = Sieve.with_cache(
        engine,
        store=store,
        capacity=cfg.capacity_for(distinct_queriers(events)),
        strategy=cfg.refresh_strategy,
        caps=caps,
        update_limit=cfg.update_limit,
        k=k,
    )
    verify = cfg.verify_for(sum(len(r) for r in engine.relations.values()))
    report = RunReport(config=cfg.to_dict(), seed=cfg.seed)
    epochs: dict[int, EpochStats] = {}
    policy_evals: Counter = Counter()

    for event in events:
        if event.kind is EventKind.INSERT_POLICY:
            sieve.insert_policy(event.policy)
        elif event.kind is EventKind.DELETE_POLICY:
            sieve.delete_policy(event.policy_id)
        else:
            qm = QueryMetadata(event.query.querier, event.query.purpose)
            parsed = sieve.parse(event.query.sql)
            outcome = sieve.query(event.query.sql, qm, strategy=cfg.strategy, parsed=parsed)
            report.queries += 1
            report.timings["rewrite"] += outcome.timings["rewrite"]
            report.timings["execute"] += outcome.timings["execute"]
            report.cost_units["execute"] += outcome.counters.cost_units(k)
            # one bucket per query; relations run on different strategies share a joined label
            label = "+".join(sorted(set(outcome.rewrite.strategies.values())))
            policy_evals[label] += outcome.counters.policy_evals
            stats = epochs.setdefault(event.epoch, EpochStats(event.epoch))
            stats.queries += 1
            for lookup in outcome.lookups:
                stats.record(lookup.outcome)
            if verify:
                expected = sieve.oracle(parsed, qm)
                report.verified += 1
                if outcome.result.as_multiset() != expected.as_multiset():
                    report.mismatches += 1
                    path = write_repro(sieve, event, parsed, outcome.result, expected, cfg.repro_dir)
                    raise OracleMismatchError(
                        f"Query {event.seq} for {qm.querier}/{qm.purpose} differs from the oracle",
                        path,
                    )
        if on_event is not None:
            on_event(event)

    report.timings["ge_build"] = sieve.build_stats.seconds
    report.cost_units["build"] = sieve.build_stats.cost_units(k)
    report.cost_units["total"] = report.cost_units["build"] + report.cost_units["execute"]
    report.cache = {
        **sieve.cache.metrics.to_dict(),
        "capacity": sieve.cache.capacity,
        "strategy": sieve.cache.strategy.value,
    }
    report.policy_evals = dict(policy_evals)
    report.epochs = [epochs[e] for e in sorted(epochs)]
    return report


def run_baselines(
    queries: Sequence[GeneratedQuery],
    policies: Sequence[Policy],
    engine: Engine,
    k: Optional[CostConstants] = None,
    caps: DialectCapabilities = EMBEDDED,
    strategies: Sequence[Optional[Strategy]] = (None,) + BASELINES,
) -> list[BaselineRow]:
    """
    Runs every query under each strategy over the same static policy set.

    ``None`` in ``strategies`` stands for Sieve's own cost-based choice; its row
    is the reference the ``differing`` counts compare against.
    """
    k = k or CostConstants()
    store = PolicyStore()
    for policy in policies:
        store.insert_policy(policy)
    sieve = Sieve(engine, store=store, caps=caps, k=k)
    rows = {s: BaselineRow(s.value if s else SIEVE) for s in strategies}
    ges: dict[GeKey, object] = {}
    for query in queries:
        qm = QueryMetadata(query.querier, query.purpose)
        parsed = sieve.parse(query.sql)
        per_relation = {}
        for relation in parsed.relations():
            key = GeKey(qm.querier, qm.purpose, relation)
            if key not in ges:
                ges[key] = sieve.guarded_expression(key)
            per_relation[relation] = ges[key]
        results = {}
        for strategy in strategies:
            counters = EngineCounters()
            start = time.perf_counter()
            rewritten = sieve.rewrite_parsed(parsed, per_relation, strategy)
            result = execute_rewritten(parsed, engine, rewritten, counters)
            rows[strategy].add(counters, k, time.perf_counter() - start)
            results[strategy] = result.as_multiset()
        reference = results[strategies[0]]
        for strategy in strategies[1:]:
            if results[strategy] != reference:
                rows[strategy].differing += 1
    return list(rows.values())

