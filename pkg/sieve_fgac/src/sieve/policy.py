"""
Policies, query metadata, rows and the reference access-control evaluator.

The evaluator in this module is the oracle every optimised path is checked against:
a row is visible to a querier iff at least one relevant allow policy matches it.
"""

from collections import deque
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Iterable, Mapping, Optional, Sequence, Union

from sieve_fgac.src.sieve.errors import (
    ContractViolation,
    InvalidPolicyError,
    UnsupportedConditionError,
)
from sieve_fgac.src.sieve.values import (
    Interval,
    Value,
    compare_values,
    decode_value,
    encode_value,
    sql_literal,
    value_tag,
)

Principal = Union[int, str]

OWNER = "owner"


class Operator(Enum):
    EQ = "="
    NE = "!="
    LT = "<"
    GT = ">"
    GE = ">="
    LE = "<="
    IN = "IN"
    NOT_IN = "NOT IN"
    RANGE = "RANGE"

    @classmethod
    def parse(cls, text: str) -> "Operator":
        normalised = " ".join(text.upper().split())
        if normalised == "<>":
            return cls.NE
        try:
            return cls(normalised)
        except ValueError as e:
            raise ContractViolation(f"Unknown operator '{text}'") from e


INTERVAL_OPERATORS = frozenset(
    {Operator.EQ, Operator.LT, Operator.GT, Operator.GE, Operator.LE, Operator.RANGE}
)
LOWER_RANGE_OPERATORS = frozenset({Operator.GT, Operator.GE})
UPPER_RANGE_OPERATORS = frozenset({Operator.LT, Operator.LE})


@dataclass(frozen=True)
class DerivedExpression:
    """Opaque SQL (typically a nested subquery) carried verbatim into rewrites."""

    sql: str


@dataclass(frozen=True)
class RangeBound:
    lo_op: Operator
    lo: Value
    hi_op: Operator
    hi: Value

    def __post_init__(self):
        if self.lo_op not in LOWER_RANGE_OPERATORS:
            raise ContractViolation(f"Range lower operator must be > or >=, got {self.lo_op.value}")
        if self.hi_op not in UPPER_RANGE_OPERATORS:
            raise ContractViolation(f"Range upper operator must be < or <=, got {self.hi_op.value}")
        if compare_values(self.lo, self.hi) > 0:
            raise ContractViolation(f"Range lower bound {self.lo!r} exceeds upper bound {self.hi!r}")

    def interval(self) -> Interval:
        return Interval(self.lo, self.lo_op is Operator.GE, self.hi, self.hi_op is Operator.LE)


@dataclass(frozen=True)
class ObjectCondition:
    attribute: str
    op: Operator
    value: Any

    def __post_init__(self):
        if not self.attribute:
            raise ContractViolation("Object condition needs an attribute")
        if isinstance(self.value, DerivedExpression):
            return
        if self.op is Operator.RANGE:
            if not isinstance(self.value, RangeBound):
                raise ContractViolation("RANGE conditions need a RangeBound value")
        elif self.op in (Operator.IN, Operator.NOT_IN):
            if isinstance(self.value, (str, bytes)) or not isinstance(self.value, Iterable):
                raise ContractViolation(f"{self.op.value} needs a list of values")
            values = tuple(self.value)
            if not values:
                raise ContractViolation(f"{self.op.value} needs at least one value")
            tags = {value_tag(v) for v in values}
            if len(tags) > 1:
                raise ContractViolation(f"{self.op.value} list mixes value types: {values!r}")
            object.__setattr__(self, "value", values)
        else:
            value_tag(self.value)

    @classmethod
    def from_interval(cls, attribute: str, interval: Interval) -> "ObjectCondition":
        if interval.is_point:
            return cls(attribute, Operator.EQ, interval.lo)
        if interval.lo is None and interval.hi is None:
            raise ContractViolation("An unbounded interval has no condition form")
        if interval.lo is None:
            return cls(attribute, Operator.LE if interval.hi_closed else Operator.LT, interval.hi)
        if interval.hi is None:
            return cls(attribute, Operator.GE if interval.lo_closed else Operator.GT, interval.lo)
        return cls(
            attribute,
            Operator.RANGE,
            RangeBound(
                Operator.GE if interval.lo_closed else Operator.GT,
                interval.lo,
                Operator.LE if interval.hi_closed else Operator.LT,
                interval.hi,
            ),
        )

    @property
    def is_derived(self) -> bool:
        return isinstance(self.value, DerivedExpression)

    def interval(self) -> Optional[Interval]:
        """The value set as an interval, or None for list, inequality and derived forms."""
        if self.is_derived or self.op not in INTERVAL_OPERATORS:
            return None
        if self.op is Operator.RANGE:
            return self.value.interval()
        if self.op is Operator.EQ:
            return Interval.point(self.value)
        if self.op is Operator.LT:
            return Interval(None, False, self.value, False)
        if self.op is Operator.LE:
            return Interval(None, False, self.value, True)
        if self.op is Operator.GT:
            return Interval(self.value, False, None, False)
        return Interval(self.value, True, None, False)

    def evaluate(self, value: Value) -> bool:
        if self.is_derived:
            raise UnsupportedConditionError(
                f"Derived condition on '{self.attribute}' cannot be evaluated: {self.value.sql}"
            )
        if self.op is Operator.IN:
            return any(compare_values(value, v) == 0 for v in self.value)
        if self.op is Operator.NOT_IN:
            return all(compare_values(value, v) != 0 for v in self.value)
        if self.op is Operator.NE:
            return compare_values(value, self.value) != 0
        return self.interval().contains_value(value)

    def to_sql(self, qualifier: Optional[str] = None) -> str:
        column = f"{qualifier}.{self.attribute}" if qualifier else self.attribute
        if self.is_derived:
            return f"{column} {self.op.value} ({self.value.sql})"
        if self.op is Operator.RANGE:
            bound = self.value
            return (
                f"{column} {bound.lo_op.value} {sql_literal(bound.lo)} AND "
                f"{column} {bound.hi_op.value} {sql_literal(bound.hi)}"
            )
        if self.op in (Operator.IN, Operator.NOT_IN):
            return f"{column} {self.op.value} ({', '.join(sql_literal(v) for v in self.value)})"
        if self.op is Operator.NE:
            return f"{column} <> {sql_literal(self.value)}"
        return f"{column} {self.op.value} {sql_literal(self.value)}"

    def to_dict(self) -> dict:
        if self.is_derived:
            return {"attr": self.attribute, "op": self.op.value, "val": {"derived": self.value.sql}}
        if self.op is Operator.RANGE:
            bound = self.value
            return {
                "attr": self.attribute,
                "op": self.op.value,
                "val": [encode_value(bound.lo), encode_value(bound.hi)],
                "lo_op": bound.lo_op.value,
                "hi_op": bound.hi_op.value,
            }
        if self.op in (Operator.IN, Operator.NOT_IN):
            return {"attr": self.attribute, "op": self.op.value, "val": [encode_value(v) for v in self.value]}
        return {"attr": self.attribute, "op": self.op.value, "val": encode_value(self.value)}

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "ObjectCondition":
        try:
            attribute, op, val = raw["attr"], Operator.parse(raw["op"]), raw["val"]
        except KeyError as e:
            raise ContractViolation(f"Object condition is missing {e}") from e
        if isinstance(val, dict) and set(val) == {"derived"}:
            return cls(attribute, op, DerivedExpression(val["derived"]))
        if op is Operator.RANGE:
            lo, hi = val
            return cls(
                attribute,
                op,
                RangeBound(
                    Operator.parse(raw.get("lo_op", ">=")),
                    decode_value(lo),
                    Operator.parse(raw.get("hi_op", "<=")),
                    decode_value(hi),
                ),
            )
        if op in (Operator.IN, Operator.NOT_IN):
            return cls(attribute, op, tuple(decode_value(v) for v in val))
        return cls(attribute, op, decode_value(val))


@dataclass(frozen=True)
class Policy:
    id: Optional[int]
    relation: str
    owner: Principal
    object_conditions: tuple[ObjectCondition, ...]
    querier: Principal
    purpose: str
    action: str = "allow"
    inserted_at: int = 0

    def __post_init__(self):
        object.__setattr__(self, "object_conditions", tuple(self.object_conditions))
        if self.action != "allow":
            raise InvalidPolicyError(
                f"Policy {self.id}: only allow policies are supported, got '{self.action}'"
            )
        if self.querier in (None, "") or not self.purpose:
            raise InvalidPolicyError(f"Policy {self.id}: querier and purpose are required")
        owner_conditions = [
            c for c in self.object_conditions if c.attribute == OWNER and c.op is Operator.EQ
        ]
        if len(owner_conditions) != 1:
            raise InvalidPolicyError(
                f"Policy {self.id}: expected exactly one '{OWNER} =' condition, "
                f"found {len(owner_conditions)}"
            )
        if owner_conditions[0].value != self.owner:
            raise InvalidPolicyError(
                f"Policy {self.id}: owner condition {owner_conditions[0].value!r} "
                f"does not match owner {self.owner!r}"
            )

    @property
    def owner_condition(self) -> ObjectCondition:
        return next(c for c in self.object_conditions if c.attribute == OWNER and c.op is Operator.EQ)

    def with_identity(self, policy_id: int, inserted_at: int) -> "Policy":
        return replace(self, id=policy_id, inserted_at=inserted_at)

    def to_sql(self, qualifier: Optional[str] = None) -> str:
        return "(" + " AND ".join(c.to_sql(qualifier) for c in self.object_conditions) + ")"

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "relation": self.relation,
            "owner": self.owner,
            "object_conditions": [c.to_dict() for c in self.object_conditions],
            "querier": self.querier,
            "purpose": self.purpose,
            "action": self.action,
            "inserted_at": self.inserted_at,
        }

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "Policy":
        try:
            return cls(
                id=raw.get("id"),
                relation=raw["relation"],
                owner=raw["owner"],
                object_conditions=tuple(
                    ObjectCondition.from_dict(c) for c in raw["object_conditions"]
                ),
                querier=raw["querier"],
                purpose=raw["purpose"],
                action=raw.get("action", "allow"),
                inserted_at=raw.get("inserted_at", 0),
            )
        except KeyError as e:
            raise InvalidPolicyError(f"Policy record is missing {e}") from e


@dataclass(frozen=True)
class QueryMetadata:
    querier: Principal
    purpose: str

    def __post_init__(self):
        if self.querier in (None, "") or not self.purpose:
            raise ContractViolation("Query metadata needs both a querier and a purpose")


@dataclass(frozen=True)
class Row:
    """One tuple of a relation. Identity is (relation, row_id); attributes ride along."""

    relation: str
    row_id: int
    attributes: Mapping[str, Value] = field(compare=False, hash=False)

    def __post_init__(self):
        if OWNER not in self.attributes:
            raise ContractViolation(f"Row {self.row_id} of '{self.relation}' has no owner")

    @property
    def owner(self) -> Principal:
        return self.attributes[OWNER]


@dataclass(frozen=True)
class GroupDirectory:
    membership: Mapping[Principal, frozenset] = field(default_factory=dict)

    @classmethod
    def from_hierarchy(
        cls,
        members: Mapping[Principal, Iterable[Principal]],
        parents: Optional[Mapping[Principal, Iterable[Principal]]] = None,
    ) -> "GroupDirectory":
        """
        Materialises the transitive closure of user → group → parent group edges.

        :param members: direct group memberships per user
        :param parents: parent groups per group
        """
        parents = parents or {}
        closure = {}
        for user, groups in members.items():
            seen = set()
            queue = deque(groups)
            while queue:
                group = queue.popleft()
                if group in seen:
                    continue
                seen.add(group)
                queue.extend(parents.get(group, ()))
            closure[user] = frozenset(seen)
        return cls(closure)

    def groups_of(self, user: Principal) -> frozenset:
        return self.membership.get(user, frozenset())

    def members_of(self, group: Principal) -> frozenset:
        return frozenset(u for u, groups in self.membership.items() if group in groups)


EMPTY_GROUPS = GroupDirectory()


def principals_for(querier: Principal, groups: GroupDirectory) -> list[Principal]:
    """The querier followed by its groups in a stable order."""
    return [querier] + sorted(groups.groups_of(querier), key=lambda g: (type(g).__name__, g))


def eval_object_conditions(conds: Sequence[ObjectCondition], row: Row) -> bool:
    """
    Conjunctive evaluation; conditions on attributes the row does not carry hold
    vacuously.
    """
    for condition in conds:
        if condition.is_derived:
            raise UnsupportedConditionError(
                f"Derived condition on '{condition.attribute}' cannot be evaluated by the oracle"
            )
    attributes = row.attributes
    return all(
        condition.evaluate(attributes[condition.attribute])
        for condition in conds
        if condition.attribute in attributes
    )


def policy_applies(policy: Policy, qm: QueryMetadata, groups: GroupDirectory) -> bool:
    return policy.purpose == qm.purpose and (
        policy.querier == qm.querier or policy.querier in groups.groups_of(qm.querier)
    )


def filter_policies_by_metadata(
    policies: Iterable[Policy], qm: QueryMetadata, groups: GroupDirectory = EMPTY_GROUPS
) -> list[Policy]:
    return [p for p in policies if policy_applies(p, qm, groups)]


def oracle_allowed_tuples(
    rows: Iterable[Row],
    policies: Iterable[Policy],
    qm: QueryMetadata,
    groups: GroupDirectory = EMPTY_GROUPS,
) -> set[Row]:
    relevant = filter_policies_by_metadata(policies, qm, groups)
    return {
        row
        for row in rows
        if any(
            p.relation == row.relation and eval_object_conditions(p.object_conditions, row)
            for p in relevant
        )
    }


def delta_filter(
    policies: Iterable[Policy],
    qm: QueryMetadata,
    row: Row,
    groups: GroupDirectory = EMPTY_GROUPS,
) -> bool:
    owner = row.owner
    narrowed = [
        p
        for p in policies
        if p.owner == owner and p.relation == row.relation and policy_applies(p, qm, groups)
    ]
    return any(eval_object_conditions(p.object_conditions, row) for p in narrowed)
