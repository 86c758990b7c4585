"""
In-memory relational engine for the supported query surface.

Relations are lists of rows with sorted secondary indexes. Enforcement plans are
executed literally (forced index = index range scan, ignored indexes = sequential
scan) and every read and evaluation is counted.
"""

import json
import os
import threading
from bisect import bisect_left, bisect_right
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass
from functools import lru_cache
from itertools import product
from typing import Iterable, Iterator, Mapping, Optional, Sequence

from sieve_fgac.src.sieve.cost_model import (
    DEFAULT_BUCKETS,
    CostConstants,
    ExecMode,
    SelectivityEstimator,
    Strategy,
)
from sieve_fgac.src.sieve.errors import ContractViolation, DataLoadError, QuerySyntaxError
from sieve_fgac.src.sieve.guard_generation import IndexCatalog
from sieve_fgac.src.sieve.guard_selection import GuardedExpression
from sieve_fgac.src.sieve.policy import (
    INTERVAL_OPERATORS,
    OWNER,
    ObjectCondition,
    Operator,
    Policy,
    Principal,
    Row,
)
from sieve_fgac.src.sieve.sql import ColumnRef, ParsedQuery, SelectKind
from sieve_fgac.src.sieve.values import Value, ValueTag, decode_value, value_tag

INDEX_SCAN = "index-scan"
TABLE_SCAN = "table-scan"

_OP_RANK = {
    Operator.EQ: 0,
    Operator.LT: 1,
    Operator.GT: 1,
    Operator.LE: 1,
    Operator.GE: 1,
    Operator.RANGE: 2,
    Operator.IN: 3,
    Operator.NE: 4,
    Operator.NOT_IN: 5,
}


@dataclass
class EngineCounters:
    rows_read_random: int = 0
    rows_read_sequential: int = 0
    predicate_evals: int = 0
    policy_evals: int = 0
    delta_invocations: int = 0

    def add(self, other: "EngineCounters") -> None:
        for name, value in asdict(other).items():
            setattr(self, name, getattr(self, name) + value)

    def cost_units(self, k: CostConstants) -> float:
        return (
            self.rows_read_random * k.c_r
            + self.rows_read_sequential * k.c_r / k.seq_ratio
            + (self.policy_evals + self.predicate_evals) * k.c_e
            + self.delta_invocations * k.udf_inv
        )

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ResultSet:
    columns: tuple[str, ...]
    rows: tuple[tuple, ...]

    def as_multiset(self) -> Counter:
        return Counter(self.rows)

    def __len__(self) -> int:
        return len(self.rows)


@dataclass(frozen=True)
class AccessPath:
    relation: str
    alias: str
    path: str
    attribute: Optional[str]
    predicate: Optional[ObjectCondition]
    estimated_rows: float

    def to_dict(self) -> dict:
        return {
            "relation": self.relation,
            "alias": self.alias,
            "access_path": self.path,
            "attribute": self.attribute,
            "predicate": self.predicate.to_sql() if self.predicate else None,
            "estimated_rows": self.estimated_rows,
        }


@dataclass(frozen=True)
class EnforcementPlan:
    """
    How one governed relation is filtered before the query sees it.

    :var guards: guarded expressions for the Sieve strategies
    :var policies: the flat relevant policy set, used by the baselines
    :var pushed: query predicates evaluated inside the filtering step
    :var index_predicate: the query predicate driving IndexQuery
    """

    relation: str
    strategy: Strategy
    querier: Principal
    purpose: str
    guards: tuple[GuardedExpression, ...] = ()
    policies: tuple[Policy, ...] = ()
    pushed: tuple[ObjectCondition, ...] = ()
    index_predicate: Optional[ObjectCondition] = None

    @property
    def denies_all(self) -> bool:
        if self.strategy in (Strategy.BASELINE_P, Strategy.BASELINE_I, Strategy.BASELINE_U):
            return not self.policies
        return not self.guards


class SortedIndex:
    """Row positions ordered by one attribute's value."""

    def __init__(self, attribute: str, rows: Sequence[Row]):
        self.attribute = attribute
        order = sorted(range(len(rows)), key=lambda i: rows[i].attributes[attribute])
        self.keys = [rows[i].attributes[attribute] for i in order]
        self.positions = order

    @staticmethod
    def usable(condition: ObjectCondition) -> bool:
        return not condition.is_derived and (
            condition.op in INTERVAL_OPERATORS or condition.op is Operator.IN
        )

    def lookup(self, condition: ObjectCondition) -> list[int]:
        if not self.usable(condition):
            raise ContractViolation(f"Condition {condition.to_sql()} cannot use an index")
        if condition.op is Operator.IN:
            hits = set()
            for value in condition.value:
                hits.update(self._range(value, True, value, True))
            return sorted(hits)
        interval = condition.interval()
        return self._range(interval.lo, interval.lo_closed, interval.hi, interval.hi_closed)

    def _range(self, lo, lo_closed, hi, hi_closed) -> list[int]:
        if lo is None:
            start = 0
        elif lo_closed:
            start = bisect_left(self.keys, lo)
        else:
            start = bisect_right(self.keys, lo)
        if hi is None:
            end = len(self.keys)
        elif hi_closed:
            end = bisect_right(self.keys, hi)
        else:
            end = bisect_left(self.keys, hi)
        return self.positions[start:end]


class Relation:
    def __init__(
        self,
        name: str,
        rows: Sequence[Row],
        schema: Mapping[str, ValueTag],
        indexed: Iterable[str],
        buckets: int = DEFAULT_BUCKETS,
    ):
        self.name = name
        self.rows = list(rows)
        self.schema = dict(schema)
        self.indexes = {a: SortedIndex(a, self.rows) for a in sorted(set(indexed)) if a in self.schema}
        self.estimator = SelectivityEstimator.from_rows(
            [r.attributes for r in self.rows], self.schema, buckets
        )

    def __len__(self) -> int:
        return len(self.rows)

    def index(self, attribute: str) -> SortedIndex:
        try:
            return self.indexes[attribute]
        except KeyError:
            raise ContractViolation(f"Attribute '{attribute}' of '{self.name}' is not indexed")

    def is_indexed(self, attribute: str) -> bool:
        return attribute in self.indexes


@lru_cache(maxsize=1 << 16)
def _cheapest_first(policy: Policy) -> tuple[ObjectCondition, ...]:
    return tuple(sorted(policy.object_conditions, key=lambda c: _OP_RANK[c.op]))


def _policy_matches(policy: Policy, row: Row) -> bool:
    attributes = row.attributes
    for condition in _cheapest_first(policy):
        if condition.attribute in attributes and not condition.evaluate(
            attributes[condition.attribute]
        ):
            return False
    return True


def _any_policy(policies: Iterable[Policy], row: Row, counters: EngineCounters) -> bool:
    for policy in policies:
        counters.policy_evals += 1
        if _policy_matches(policy, row):
            return True
    return False


def _by_owner(policies: Iterable[Policy]) -> dict[Principal, list[Policy]]:
    grouped = defaultdict(list)
    for policy in policies:
        grouped[policy.owner].append(policy)
    return grouped


def _conditions_hold(
    conditions: Iterable[ObjectCondition], row: Row, counters: EngineCounters
) -> bool:
    for condition in conditions:
        counters.predicate_evals += 1
        if not condition.evaluate(row.attributes[condition.attribute]):
            return False
    return True


class Engine:
    """
    :var catalog: indexed attributes per relation; rebuilt indexes follow it on load
    """

    def __init__(self, catalog: Optional[IndexCatalog] = None, buckets: int = DEFAULT_BUCKETS):
        self.catalog = catalog or IndexCatalog()
        self.buckets = buckets
        self.relations: dict[str, Relation] = {}
        self._load_lock = threading.Lock()

    # loading

    def load(self, name: str, records: Iterable[Mapping[str, Value]]) -> Relation:
        """
        Loads rows; the schema comes from the first record and every later record
        must carry exactly the same attributes with the same value types.
        """
        rows = []
        schema: dict[str, ValueTag] = {}
        for position, record in enumerate(records):
            try:
                tags = {attribute: value_tag(v) for attribute, v in record.items()}
            except ContractViolation as e:
                raise DataLoadError(f"{name} row {position}: {e}") from e
            if position == 0:
                if OWNER not in tags:
                    raise DataLoadError(f"Relation '{name}' has no '{OWNER}' attribute")
                schema = tags
            elif tags != schema:
                expected = ", ".join(f"{a}:{t.value}" for a, t in schema.items())
                raise DataLoadError(f"{name} row {position} does not match the schema ({expected})")
            rows.append(Row(name, position, dict(record)))
        missing = sorted(self.catalog.attributes(name) - schema.keys()) if rows else []
        if missing:
            raise DataLoadError(
                f"Indexed attributes {', '.join(missing)} are not in the schema of '{name}'"
            )
        relation = Relation(name, rows, schema, self.catalog.attributes(name), self.buckets)
        with self._load_lock:
            self.relations[name] = relation
        return relation

    def load_jsonl(self, name: str, path: str) -> Relation:
        return self.load(name, read_rows(path))

    def relation(self, name: str) -> Relation:
        try:
            return self.relations[name]
        except KeyError:
            raise DataLoadError(f"Relation '{name}' is not loaded")

    def schemas(self) -> dict[str, dict[str, ValueTag]]:
        return {name: rel.schema for name, rel in self.relations.items()}

    def estimator(self, name: str) -> SelectivityEstimator:
        return self.relation(name).estimator

    # enforcement

    def execute(self, plan: EnforcementPlan, counters: EngineCounters) -> list[Row]:
        """Rows of ``plan.relation`` that the plan lets through, in row-id order."""
        relation = self.relation(plan.relation)
        if plan.denies_all:
            return []
        if plan.strategy is Strategy.INDEX_GUARDS:
            allowed = self._index_guards(relation, plan, counters)
        elif plan.strategy is Strategy.INDEX_QUERY:
            positions = relation.index(plan.index_predicate.attribute).lookup(plan.index_predicate)
            counters.rows_read_random += len(positions)
            allowed = self._guarded_scan((relation.rows[i] for i in positions), plan, counters)
        elif plan.strategy is Strategy.LINEAR_SCAN:
            counters.rows_read_sequential += len(relation)
            allowed = self._guarded_scan(relation.rows, plan, counters)
        elif plan.strategy is Strategy.BASELINE_P:
            counters.rows_read_sequential += len(relation)
            allowed = [
                row
                for row in relation.rows
                if _conditions_hold(plan.pushed, row, counters)
                and _any_policy(plan.policies, row, counters)
            ]
        elif plan.strategy is Strategy.BASELINE_I:
            allowed = self._baseline_index(relation, plan, counters)
        else:
            counters.rows_read_sequential += len(relation)
            owners = _by_owner(plan.policies)
            allowed = []
            for row in relation.rows:
                if not _conditions_hold(plan.pushed, row, counters):
                    continue
                counters.delta_invocations += 1
                if _any_policy(owners.get(row.owner, ()), row, counters):
                    allowed.append(row)
        return sorted(allowed, key=lambda r: r.row_id)

    def _partition_allows(
        self, guard: GuardedExpression, row: Row, counters: EngineCounters
    ) -> bool:
        if guard.exec_mode is ExecMode.DELTA:
            counters.delta_invocations += 1
            return _any_policy(guard.by_owner.get(row.owner, ()), row, counters)
        return _any_policy(guard.policies, row, counters)

    def _index_guards(
        self, relation: Relation, plan: EnforcementPlan, counters: EngineCounters
    ) -> list[Row]:
        # one branch per guard, union deduplicated by row id
        seen: dict[int, Row] = {}
        for guard in plan.guards:
            positions = relation.index(guard.guard.attribute).lookup(guard.guard)
            counters.rows_read_random += len(positions)
            for i in positions:
                row = relation.rows[i]
                if not _conditions_hold(plan.pushed, row, counters):
                    continue
                if self._partition_allows(guard, row, counters):
                    seen.setdefault(row.row_id, row)
        return list(seen.values())

    def _guarded_scan(
        self, rows: Iterable[Row], plan: EnforcementPlan, counters: EngineCounters
    ) -> list[Row]:
        allowed = []
        for row in rows:
            if not _conditions_hold(plan.pushed, row, counters):
                continue
            for guard in plan.guards:
                counters.predicate_evals += 1
                if not guard.guard.evaluate(row.attributes[guard.guard.attribute]):
                    continue
                if self._partition_allows(guard, row, counters):
                    allowed.append(row)
                    break
        return allowed

    def _baseline_index(
        self, relation: Relation, plan: EnforcementPlan, counters: EngineCounters
    ) -> list[Row]:
        seen: dict[int, Row] = {}
        owner_index = relation.index(OWNER)
        for policy in plan.policies:
            positions = owner_index.lookup(policy.owner_condition)
            counters.rows_read_random += len(positions)
            for i in positions:
                row = relation.rows[i]
                if row.row_id in seen or not _conditions_hold(plan.pushed, row, counters):
                    continue
                counters.policy_evals += 1
                if _policy_matches(policy, row):
                    seen[row.row_id] = row
        return list(seen.values())

    def run(
        self,
        parsed: ParsedQuery,
        plans: Mapping[str, EnforcementPlan],
        counters: Optional[EngineCounters] = None,
    ) -> ResultSet:
        """Filters every referenced relation once through its plan, then runs the query."""
        counters = counters if counters is not None else EngineCounters()
        allowed = {relation: self.execute(plans[relation], counters) for relation in parsed.relations()}
        return self.run_select(
            parsed, {t.alias: allowed[t.relation] for t in parsed.tables}, counters
        )

    # query evaluation

    def run_select(
        self,
        parsed: ParsedQuery,
        sources: Mapping[str, Sequence[Row]],
        counters: Optional[EngineCounters] = None,
    ) -> ResultSet:
        counters = counters if counters is not None else EngineCounters()
        filtered = {}
        for table in parsed.tables:
            conditions = sorted(parsed.conditions_for(table.alias), key=lambda c: _OP_RANK[c.op])
            filtered[table.alias] = [
                row for row in sources[table.alias] if _conditions_hold(conditions, row, counters)
            ]
        bindings = self._join(parsed, filtered)
        columns = self._output_columns(parsed)
        if parsed.is_aggregate:
            return ResultSet(columns, self._aggregate(parsed, bindings))
        return ResultSet(columns, tuple(self._project(parsed, b) for b in bindings))

    def _join(self, parsed: ParsedQuery, filtered: Mapping[str, list[Row]]) -> list[dict]:
        first, *rest = parsed.tables
        bindings = [{first.alias: row} for row in filtered[first.alias]]
        bound = {first.alias}
        pending = list(parsed.joins)
        for table in rest:
            keys = [
                j for j in pending
                if {j.left.alias, j.right.alias} <= bound | {table.alias}
                and table.alias in (j.left.alias, j.right.alias)
                and j.left.alias != j.right.alias
            ]
            pending = [j for j in pending if j not in keys]
            if keys:
                pairs = [(j.left, j.right) if j.right.alias == table.alias else (j.right, j.left) for j in keys]
                buckets = defaultdict(list)
                for row in filtered[table.alias]:
                    buckets[tuple(row.attributes[inner.attribute] for _, inner in pairs)].append(row)
                joined = []
                for binding in bindings:
                    key = tuple(binding[outer.alias].attributes[outer.attribute] for outer, _ in pairs)
                    for row in buckets.get(key, ()):
                        joined.append({**binding, table.alias: row})
                bindings = joined
            else:
                bindings = [
                    {**binding, table.alias: row}
                    for binding, row in product(bindings, filtered[table.alias])
                ]
            bound.add(table.alias)
        for j in pending:
            bindings = [
                b for b in bindings
                if b[j.left.alias].attributes[j.left.attribute]
                == b[j.right.alias].attributes[j.right.attribute]
            ]
        return bindings

    def _columns_of(self, parsed: ParsedQuery, alias: str) -> list[ColumnRef]:
        relation = self.relation(parsed.table(alias).relation)
        return [ColumnRef(alias, attribute) for attribute in relation.schema]

    def _expand(self, parsed: ParsedQuery) -> list[tuple[str, Optional[ColumnRef]]]:
        expanded = []
        for item in parsed.select:
            if item.kind is SelectKind.STAR:
                for table in parsed.tables:
                    expanded += [(c.attribute, c) for c in self._columns_of(parsed, table.alias)]
            elif item.kind is SelectKind.ALIAS_STAR:
                expanded += [(c.attribute, c) for c in self._columns_of(parsed, item.alias)]
            elif item.kind is SelectKind.COUNT:
                expanded.append((item.name, None))
            else:
                expanded.append((item.name, item.column))
        return expanded

    def _output_columns(self, parsed: ParsedQuery) -> tuple[str, ...]:
        return tuple(name for name, _ in self._expand(parsed))

    def _project(self, parsed: ParsedQuery, binding: Mapping[str, Row]) -> tuple:
        return tuple(
            binding[column.alias].attributes[column.attribute]
            for _, column in self._expand(parsed)
        )

    def _aggregate(self, parsed: ParsedQuery, bindings: list[dict]) -> tuple[tuple, ...]:
        groups = Counter(
            tuple(b[c.alias].attributes[c.attribute] for c in parsed.group_by) for b in bindings
        )
        if not parsed.group_by and not groups:
            groups[()] = 0
        rows = []
        for key in sorted(groups):
            values = dict(zip(parsed.group_by, key))
            out = []
            for _, column in self._expand(parsed):
                if column is None:
                    out.append(groups[key])
                elif column in values:
                    out.append(values[column])
                else:
                    raise QuerySyntaxError(f"Column {column.attribute} is neither grouped nor counted")
            rows.append(tuple(out))
        return tuple(rows)

    def explain(self, parsed: ParsedQuery) -> list[AccessPath]:
        """Per table reference: the cheapest index-usable query predicate, or a table scan."""
        paths = []
        for table in parsed.tables:
            relation = self.relation(table.relation)
            best: Optional[tuple[float, ObjectCondition]] = None
            for condition in parsed.conditions_for(table.alias):
                if not (relation.is_indexed(condition.attribute) and SortedIndex.usable(condition)):
                    continue
                estimate = relation.estimator.estimate_cardinality(condition)
                if best is None or estimate < best[0]:
                    best = (estimate, condition)
            if best is None:
                paths.append(
                    AccessPath(table.relation, table.alias, TABLE_SCAN, None, None, float(len(relation)))
                )
            else:
                paths.append(
                    AccessPath(
                        table.relation, table.alias, INDEX_SCAN, best[1].attribute, best[1], best[0]
                    )
                )
        return paths


def read_rows(path: str) -> Iterator[dict]:
    """Reads a JSONL data file whose values use the tagged value codec."""
    try:
        with open(os.path.expanduser(path)) as f:
            for number, line in enumerate(f, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    raw = json.loads(line)
                except json.JSONDecodeError as e:
                    raise DataLoadError(f"{path}:{number}: invalid JSON ({e})") from e
                if not isinstance(raw, dict):
                    raise DataLoadError(f"{path}:{number}: expected an object")
                try:
                    yield {attribute: decode_value(v) for attribute, v in raw.items()}
                except ContractViolation as e:
                    raise DataLoadError(f"{path}:{number}: {e}") from e
    except OSError as e:
        raise DataLoadError(f"Cannot read data file {path}: {e}") from e
