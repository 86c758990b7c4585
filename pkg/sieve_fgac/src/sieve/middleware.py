"""
The enforcement pipeline: policy store → guarded-expression cache → rewriter →
embedded engine, plus the brute-force oracle pipeline it is verified against.
"""

import time
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

from sieve_fgac.src.sieve.cache import CacheLookup, GeCache, RefreshStrategy
from sieve_fgac.src.sieve.cost_model import CostConstants, Strategy
from sieve_fgac.src.sieve.engine import Engine, EngineCounters, ResultSet
from sieve_fgac.src.sieve.guard_generation import generate_candidate_set
from sieve_fgac.src.sieve.guard_selection import (
    GeKey,
    GuardedPolicyExpression,
    build_guarded_expression,
)
from sieve_fgac.src.sieve.policy import Policy, QueryMetadata, oracle_allowed_tuples
from sieve_fgac.src.sieve.rewriter import (
    EMBEDDED,
    DialectCapabilities,
    RewriteResult,
    execute_rewritten,
    explain_probe,
    rewrite,
)
from sieve_fgac.src.sieve.sql import ParsedQuery, parse_query
from sieve_fgac.src.sieve.store import PolicyStore

DEFAULT_CACHE_CAPACITY = 1024


@dataclass
class BuildStats:
    builds: int = 0
    policies: int = 0
    seconds: float = 0.0

    def cost_units(self, k: CostConstants) -> float:
        return self.policies * k.c_e

    def to_dict(self) -> dict:
        return {"builds": self.builds, "policies": self.policies, "seconds": self.seconds}


class QueryOutcome(NamedTuple):
    result: ResultSet
    rewrite: RewriteResult
    counters: EngineCounters
    lookups: list[CacheLookup]
    timings: dict[str, float]


@dataclass
class Sieve:
    """
    :var engine: holds the base relations and their indexes
    :var cache: ``None`` builds a fresh guarded expression on every query
    """

    engine: Engine
    store: PolicyStore = field(default_factory=PolicyStore)
    caps: DialectCapabilities = EMBEDDED
    k: CostConstants = field(default_factory=CostConstants)
    cache: Optional[GeCache] = None
    build_stats: BuildStats = field(default_factory=BuildStats)

    @classmethod
    def with_cache(
        cls,
        engine: Engine,
        store: Optional[PolicyStore] = None,
        capacity: int = DEFAULT_CACHE_CAPACITY,
        strategy: RefreshStrategy = RefreshStrategy.O1,
        update_limit: int = 10,
        **kwargs,
    ) -> "Sieve":
        return cls(
            engine=engine,
            store=store if store is not None else PolicyStore(),
            cache=GeCache(capacity, strategy, update_limit=update_limit),
            **kwargs,
        )

    # policies

    def insert_policy(self, policy: Policy) -> int:
        return self.store.insert_policy(policy)

    def delete_policy(self, policy_id: int) -> None:
        self.store.delete_policy(policy_id)

    # guarded expressions

    def build(
        self, key: GeKey, policies: list[Policy], built_at: int
    ) -> GuardedPolicyExpression:
        """Builds a GE over ``policies`` and persists it in the store."""
        start = time.perf_counter()
        ge = build_guarded_expression(
            key,
            policies,
            self.engine.catalog,
            self.engine.estimator(key.relation),
            self.k,
            built_at,
        )
        self.build_stats.seconds += time.perf_counter() - start
        self.build_stats.builds += 1
        self.build_stats.policies += len(policies)
        self.store.store_ge(ge.to_stored())
        return ge

    def candidates(self, key: GeKey) -> list:
        policies = self.store.fetch_policies(*key)
        return generate_candidate_set(
            policies, self.engine.catalog, self.engine.estimator(key.relation), self.k
        )

    def guarded_expression(self, key: GeKey) -> GuardedPolicyExpression:
        """A freshly built GE over every current policy of ``key``, bypassing the cache."""
        return self.build(key, self.store.fetch_policies(*key), self.store.clock)

    def acquire(
        self, parsed: ParsedQuery, qm: QueryMetadata
    ) -> tuple[dict[str, GuardedPolicyExpression], list[CacheLookup]]:
        ges, lookups = {}, []
        for relation in parsed.relations():
            if self.cache is None:
                ges[relation] = self.guarded_expression(GeKey(qm.querier, qm.purpose, relation))
                continue
            lookup = self.cache.lookup(qm, relation, self.store, self.build)
            ges[relation] = lookup.ge
            lookups.append(lookup)
        return ges, lookups

    # queries

    def parse(self, sql: str) -> ParsedQuery:
        return parse_query(sql, self.engine.schemas())

    def rewrite(
        self, sql: str, qm: QueryMetadata, strategy: Optional[Strategy] = None
    ) -> RewriteResult:
        parsed = self.parse(sql)
        ges, _ = self.acquire(parsed, qm)
        return self.rewrite_parsed(parsed, ges, strategy)

    def rewrite_parsed(
        self,
        parsed: ParsedQuery,
        ges: dict[str, GuardedPolicyExpression],
        strategy: Optional[Strategy],
    ) -> RewriteResult:
        return rewrite(
            parsed,
            ges,
            self.caps,
            {r: self.engine.estimator(r) for r in parsed.relations()},
            self.k,
            explain=explain_probe(parsed, self.engine, self.caps),
            strategy=strategy,
        )

    def query(
        self,
        sql: str,
        qm: QueryMetadata,
        strategy: Optional[Strategy] = None,
        parsed: Optional[ParsedQuery] = None,
    ) -> QueryOutcome:
        """
        Runs ``sql`` for ``qm`` with every relation filtered through the querier's
        guarded expression.

        :raises EnforcementUnavailableError: when no guarded expression can be had
        :raises BackendError: when execution fails
        """
        parsed = parsed or self.parse(sql)
        timings = {}
        start = time.perf_counter()
        ges, lookups = self.acquire(parsed, qm)
        timings["acquire"] = time.perf_counter() - start
        start = time.perf_counter()
        rewritten = self.rewrite_parsed(parsed, ges, strategy)
        timings["rewrite"] = time.perf_counter() - start
        counters = EngineCounters()
        start = time.perf_counter()
        result = execute_rewritten(parsed, self.engine, rewritten, counters)
        timings["execute"] = time.perf_counter() - start
        return QueryOutcome(result, rewritten, counters, lookups, timings)

    def oracle(self, parsed: ParsedQuery, qm: QueryMetadata) -> ResultSet:
        """Per-row evaluation of every live policy, then the same query over the survivors."""
        policies = self.store.all_policies()
        sources = {}
        for table in parsed.tables:
            relation = self.engine.relation(table.relation)
            allowed = oracle_allowed_tuples(
                relation.rows,
                [p for p in policies if p.relation == table.relation],
                qm,
                self.store.groups,
            )
            sources[table.alias] = sorted(allowed, key=lambda r: r.row_id)
        return self.engine.run_select(parsed, sources)
