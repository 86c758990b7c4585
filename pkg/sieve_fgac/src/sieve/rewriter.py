"""
Query rewriting: every governed relation is replaced by a guarded projection

    WITH <relation>_guarded AS (SELECT * FROM <relation> WHERE <guarded expression>)

and the strategy used to evaluate that projection is chosen from the cost model.
"""

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Mapping, NamedTuple, Optional, Sequence

from sieve_fgac.src.sieve.cost_model import (
    CostConstants,
    ExecMode,
    SelectivityEstimator,
    Strategy,
    StrategyCosts,
    strategy_costs,
)
from sieve_fgac.src.sieve.engine import (
    INDEX_SCAN,
    AccessPath,
    Engine,
    EngineCounters,
    EnforcementPlan,
    ResultSet,
)
from sieve_fgac.src.sieve.errors import BackendError, EnforcementUnavailableError, SieveError
from sieve_fgac.src.sieve.guard_selection import GuardedExpression, GuardedPolicyExpression
from sieve_fgac.src.sieve.policy import OWNER, ObjectCondition, Policy
from sieve_fgac.src.sieve.sql import GUARDED_SUFFIX, ParsedQuery, rename_relations
from sieve_fgac.src.sieve.values import sql_literal

PUSH_IN_FRACTION = 0.5
BASELINES = (Strategy.BASELINE_P, Strategy.BASELINE_I, Strategy.BASELINE_U)


class ExplainSupport(Enum):
    CARDINALITY_ACCESS_PATH = "cardinality+access-path"
    NONE = "none"


@dataclass(frozen=True)
class DialectCapabilities:
    name: str
    supports_index_hints: bool
    supports_union_branch_rewrite: bool
    explain_provides: ExplainSupport
    sql_dialect: str = "mysql"
    hint_syntax: str = "FORCE INDEX ({index})"
    ignore_index_syntax: Optional[str] = "USE INDEX ()"
    index_name_template: str = "idx_{relation}_{attribute}"

    @classmethod
    def preset(
        cls,
        name: str,
        hint_template: Optional[str] = None,
        ignore_index_template: Optional[str] = None,
        index_name_template: Optional[str] = None,
    ) -> "DialectCapabilities":
        try:
            base = DIALECTS[name]
        except KeyError:
            raise SieveError(f"Unknown dialect '{name}', expected one of {', '.join(DIALECTS)}")
        overrides = {
            "hint_syntax": hint_template,
            "ignore_index_syntax": ignore_index_template,
            "index_name_template": index_name_template,
        }
        return replace(base, **{k: v for k, v in overrides.items() if v is not None})

    def index_name(self, relation: str, attribute: str) -> str:
        return self.index_name_template.format(relation=relation, attribute=attribute)

    def force_index(self, relation: str, attribute: str) -> str:
        if not self.supports_index_hints:
            return ""
        return " " + self.hint_syntax.format(index=self.index_name(relation, attribute))

    def ignore_indexes(self) -> str:
        if not self.supports_index_hints or not self.ignore_index_syntax:
            return ""
        return " " + self.ignore_index_syntax


EMBEDDED = DialectCapabilities("embedded", True, True, ExplainSupport.CARDINALITY_ACCESS_PATH)
HINTED = DialectCapabilities("hinted", True, True, ExplainSupport.NONE)
PLAIN = DialectCapabilities("plain", False, False, ExplainSupport.NONE, sql_dialect="postgres")
DIALECTS = {d.name: d for d in (EMBEDDED, HINTED, PLAIN)}


@dataclass(frozen=True)
class RewriteResult:
    sql: str
    plans: dict[str, EnforcementPlan]
    costs: dict[str, StrategyCosts] = field(default_factory=dict)

    @property
    def strategies(self) -> dict[str, str]:
        return {relation: plan.strategy.value for relation, plan in self.plans.items()}


class Enforced(NamedTuple):
    result: ResultSet
    rewrite: RewriteResult
    counters: EngineCounters


def _conjunction(parts: Sequence[str]) -> str:
    return " AND ".join(p for p in parts if p)


def _disjunction(policies: Sequence[Policy]) -> str:
    return "(" + " OR ".join(p.to_sql() for p in policies) + ")"


def _delta_call(guard_id: int, plan: EnforcementPlan, policies: Sequence[Policy]) -> str:
    attributes = sorted({OWNER} | {c.attribute for p in policies for c in p.object_conditions})
    return (
        f"delta({guard_id}, {sql_literal(plan.querier)}, {sql_literal(plan.purpose)}, "
        f"{', '.join(attributes)}) = true"
    )


def _partition_sql(guard: GuardedExpression, plan: EnforcementPlan) -> str:
    if guard.exec_mode is ExecMode.DELTA:
        return _delta_call(guard.guard_id, plan, guard.policies)
    return _disjunction(guard.policies)


def _guarded_disjunction(plan: EnforcementPlan) -> str:
    terms = [
        f"({guard.guard.to_sql()} AND {_partition_sql(guard, plan)})" for guard in plan.guards
    ]
    return terms[0] if len(terms) == 1 else "(" + " OR ".join(terms) + ")"


def render_projection(plan: EnforcementPlan, caps: DialectCapabilities) -> str:
    """The body of the WITH clause for one relation."""
    relation = plan.relation
    pushed = [c.to_sql() for c in plan.pushed]
    select = f"SELECT * FROM {relation}"
    if plan.denies_all:
        return f"{select} WHERE FALSE"
    if plan.strategy is Strategy.INDEX_GUARDS:
        if caps.supports_index_hints and caps.supports_union_branch_rewrite:
            branches = [
                f"{select}{caps.force_index(relation, g.guard.attribute)} WHERE "
                + _conjunction([g.guard.to_sql()] + pushed + [_partition_sql(g, plan)])
                for g in plan.guards
            ]
            return "\n  UNION\n  ".join(branches)
        return f"{select} WHERE " + _conjunction(pushed + [_guarded_disjunction(plan)])
    if plan.strategy is Strategy.INDEX_QUERY:
        hint = caps.force_index(relation, plan.index_predicate.attribute)
        return f"{select}{hint} WHERE " + _conjunction(pushed + [_guarded_disjunction(plan)])
    if plan.strategy is Strategy.LINEAR_SCAN:
        return f"{select}{caps.ignore_indexes()} WHERE " + _conjunction(
            pushed + [_guarded_disjunction(plan)]
        )
    if plan.strategy is Strategy.BASELINE_P:
        return f"{select} WHERE " + _conjunction(pushed + [_disjunction(plan.policies)])
    if plan.strategy is Strategy.BASELINE_I:
        hint = caps.force_index(relation, OWNER)
        branches = [
            f"{select}{hint} WHERE " + _conjunction(pushed + [p.to_sql()]) for p in plan.policies
        ]
        if caps.supports_union_branch_rewrite:
            return "\n  UNION\n  ".join(branches)
        return f"{select} WHERE " + _conjunction(pushed + [_disjunction(plan.policies)])
    return f"{select} WHERE " + _conjunction(pushed + [_delta_call(0, plan, plan.policies)])


def _pushed_predicates(
    parsed: ParsedQuery, relation: str, est: SelectivityEstimator
) -> tuple[ObjectCondition, ...]:
    aliases = parsed.aliases_of(relation)
    if len(aliases) != 1:
        return ()
    return tuple(
        c
        for c in parsed.conditions_for(aliases[0])
        if est.estimate_cardinality(c) < PUSH_IN_FRACTION * est.row_count
    )


def _index_predicate(
    parsed: ParsedQuery, relation: str, explain: Optional[Sequence[AccessPath]]
) -> tuple[Optional[ObjectCondition], Optional[float]]:
    if not explain or len(parsed.aliases_of(relation)) != 1:
        return None, None
    for path in explain:
        if path.relation == relation and path.path == INDEX_SCAN:
            return path.predicate, path.estimated_rows
    return None, None


def rewrite(
    parsed: ParsedQuery,
    ge_per_relation: Mapping[str, GuardedPolicyExpression],
    caps: DialectCapabilities,
    estimators: Mapping[str, SelectivityEstimator],
    k: CostConstants,
    explain: Optional[Sequence[AccessPath]] = None,
    strategy: Optional[Strategy] = None,
) -> RewriteResult:
    """
    :param explain: access paths reported by the backend; without them IndexQuery
        is never chosen
    :param strategy: force a strategy (including the baselines) instead of the
        cheapest one
    :raises EnforcementUnavailableError: when a referenced relation has no guarded
        expression
    """
    plans: dict[str, EnforcementPlan] = {}
    costs: dict[str, StrategyCosts] = {}
    for relation in parsed.relations():
        ge = ge_per_relation.get(relation)
        if ge is None:
            raise EnforcementUnavailableError(
                f"No guarded expression for relation '{relation}'; refusing to run unfiltered"
            )
        est = estimators[relation]
        index_predicate, query_sel = _index_predicate(parsed, relation, explain)
        relation_costs = strategy_costs(query_sel, [g.guard for g in ge.guards], est, k)
        chosen = strategy or relation_costs.best
        if chosen is Strategy.INDEX_QUERY and index_predicate is None:
            chosen = Strategy.INDEX_GUARDS
        policies = tuple(sorted(ge.policies, key=lambda p: (p.inserted_at, p.id)))
        plans[relation] = EnforcementPlan(
            relation=relation,
            strategy=chosen,
            querier=ge.key.querier,
            purpose=ge.key.purpose,
            guards=ge.guards,
            policies=policies if chosen in BASELINES else (),
            pushed=_pushed_predicates(parsed, relation, est),
            index_predicate=index_predicate if chosen is Strategy.INDEX_QUERY else None,
        )
        costs[relation] = relation_costs

    ctes = ",\n".join(
        f"{relation}{GUARDED_SUFFIX} AS (\n  {render_projection(plan, caps)}\n)"
        for relation, plan in plans.items()
    )
    sql = f"WITH {ctes}\n{rename_relations(parsed, caps.sql_dialect)}"
    return RewriteResult(sql=sql, plans=plans, costs=costs)


def explain_probe(
    parsed: ParsedQuery, backend: Optional[Engine], caps: DialectCapabilities = EMBEDDED
) -> Optional[list[AccessPath]]:
    if backend is None or caps.explain_provides is ExplainSupport.NONE:
        return None
    return backend.explain(parsed)


def enforce_and_execute(
    parsed: ParsedQuery,
    backend: Engine,
    ge_per_relation: Mapping[str, GuardedPolicyExpression],
    k: CostConstants,
    caps: DialectCapabilities = EMBEDDED,
    strategy: Optional[Strategy] = None,
    counters: Optional[EngineCounters] = None,
) -> Enforced:
    """
    Rewrites the query and runs it; every base relation is filtered before any join
    or aggregation sees it.

    :raises BackendError: when execution fails, with the rewritten SQL attached
    """
    counters = counters if counters is not None else EngineCounters()
    rewritten = rewrite(
        parsed,
        ge_per_relation,
        caps,
        {r: backend.estimator(r) for r in parsed.relations()},
        k,
        explain=explain_probe(parsed, backend, caps),
        strategy=strategy,
    )
    return Enforced(execute_rewritten(parsed, backend, rewritten, counters), rewritten, counters)


def execute_rewritten(
    parsed: ParsedQuery, backend: Engine, rewritten: RewriteResult, counters: EngineCounters
) -> ResultSet:
    """:raises BackendError: when execution fails, with the rewritten SQL attached"""
    try:
        return backend.run(parsed, rewritten.plans, counters)
    except BackendError:
        raise
    except SieveError as e:
        raise BackendError(str(e), rewritten.sql) from e
