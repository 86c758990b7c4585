"""
Parsing of the supported query surface into a ParsedQuery.

Accepted: SELECT of columns, ``*``, ``alias.*`` and ``COUNT(*)``; FROM with comma
joins or inner ``JOIN ... ON`` equi-joins; a WHERE conjunction of comparisons,
BETWEEN, IN / NOT IN and column equalities; GROUP BY columns.
"""

from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from enum import Enum
from typing import Any, Mapping, Optional

import sqlglot
from sqlglot import exp
from sqlglot.errors import SqlglotError

from sieve_fgac.src.sieve.errors import AlreadyRewrittenError, ContractViolation, QuerySyntaxError
from sieve_fgac.src.sieve.policy import ObjectCondition, Operator, RangeBound
from sieve_fgac.src.sieve.values import Value, ValueTag, parse_value

GUARDED_SUFFIX = "_guarded"
READ_DIALECT = "mysql"

_UNSUPPORTED_CLAUSES = ("order", "limit", "offset", "having", "distinct", "qualify", "windows")

_COMPARISONS = {
    exp.EQ: Operator.EQ,
    exp.NEQ: Operator.NE,
    exp.LT: Operator.LT,
    exp.LTE: Operator.LE,
    exp.GT: Operator.GT,
    exp.GTE: Operator.GE,
}

_FLIPPED = {
    Operator.EQ: Operator.EQ,
    Operator.NE: Operator.NE,
    Operator.LT: Operator.GT,
    Operator.LE: Operator.GE,
    Operator.GT: Operator.LT,
    Operator.GE: Operator.LE,
}


@dataclass(frozen=True)
class TableRef:
    relation: str
    alias: str


@dataclass(frozen=True)
class ColumnRef:
    alias: str
    attribute: str


@dataclass(frozen=True)
class BoundCondition:
    alias: str
    condition: ObjectCondition


@dataclass(frozen=True)
class JoinCondition:
    left: ColumnRef
    right: ColumnRef


class SelectKind(Enum):
    COLUMN = "column"
    STAR = "star"
    ALIAS_STAR = "alias_star"
    COUNT = "count"


@dataclass(frozen=True)
class SelectItem:
    kind: SelectKind
    name: str = "*"
    column: Optional[ColumnRef] = None
    alias: Optional[str] = None


@dataclass(frozen=True)
class ParsedQuery:
    sql: str
    tables: tuple[TableRef, ...]
    select: tuple[SelectItem, ...]
    conditions: tuple[BoundCondition, ...]
    joins: tuple[JoinCondition, ...]
    group_by: tuple[ColumnRef, ...]
    tree: exp.Select = field(compare=False, repr=False)

    def relations(self) -> list[str]:
        return sorted({t.relation for t in self.tables})

    def table(self, alias: str) -> TableRef:
        for table in self.tables:
            if table.alias == alias:
                return table
        raise QuerySyntaxError(f"Unknown table alias '{alias}'")

    def aliases_of(self, relation: str) -> list[str]:
        return [t.alias for t in self.tables if t.relation == relation]

    def conditions_for(self, alias: str) -> list[ObjectCondition]:
        return [b.condition for b in self.conditions if b.alias == alias]

    @property
    def is_aggregate(self) -> bool:
        return bool(self.group_by) or any(i.kind is SelectKind.COUNT for i in self.select)


def _arg(node: exp.Expression, *names: str) -> Any:
    # sqlglot renamed some keyword args (from -> from_, with -> with_) across releases
    for name in names:
        value = node.args.get(name)
        if value:
            return value
    return None


class _QueryParser:
    def __init__(self, sql: str, schemas: Mapping[str, Mapping[str, ValueTag]]):
        self.sql = sql
        self.schemas = schemas
        self.tables: list[TableRef] = []
        self.conditions: list[BoundCondition] = []
        self.joins: list[JoinCondition] = []

    def parse(self) -> ParsedQuery:
        try:
            tree = sqlglot.parse_one(self.sql, read=READ_DIALECT)
        except SqlglotError as e:
            raise QuerySyntaxError(f"Cannot parse query: {e}") from e
        if tree is None:
            raise QuerySyntaxError("Empty query")
        self._reject_rewritten(tree)
        if not isinstance(tree, exp.Select):
            raise QuerySyntaxError(
                f"Only SELECT-FROM-WHERE queries are supported, got {tree.key.upper()}"
            )
        if _arg(tree, "with", "with_"):
            raise QuerySyntaxError("WITH clauses are not supported")
        for clause in _UNSUPPORTED_CLAUSES:
            if tree.args.get(clause):
                raise QuerySyntaxError(f"{clause.upper()} is not supported")

        self._parse_from(tree)
        where = tree.args.get("where")
        if where is not None:
            for conjunct in self._conjuncts(where.this):
                self._parse_condition(conjunct)
        group = tree.args.get("group")
        group_by = tuple(self._column(e) for e in group.expressions) if group else ()
        select = tuple(self._select_item(e) for e in tree.expressions)

        parsed = ParsedQuery(
            sql=self.sql,
            tables=tuple(self.tables),
            select=select,
            conditions=tuple(self.conditions),
            joins=tuple(self.joins),
            group_by=group_by,
            tree=tree,
        )
        if parsed.is_aggregate:
            for item in select:
                if item.kind is SelectKind.COLUMN and item.column not in group_by:
                    raise QuerySyntaxError(
                        f"Column '{item.name}' must appear in GROUP BY when aggregating"
                    )
                if item.kind in (SelectKind.STAR, SelectKind.ALIAS_STAR):
                    raise QuerySyntaxError("'*' cannot be combined with aggregation")
        return parsed

    def _reject_rewritten(self, tree: exp.Expression) -> None:
        for cte in tree.find_all(exp.CTE):
            if cte.alias.endswith(GUARDED_SUFFIX):
                raise AlreadyRewrittenError(f"Query already carries a rewritten relation '{cte.alias}'")
        for table in tree.find_all(exp.Table):
            if table.name.endswith(GUARDED_SUFFIX):
                raise AlreadyRewrittenError(f"Query already reads a rewritten relation '{table.name}'")

    def _add_table(self, node: exp.Expression) -> None:
        if not isinstance(node, exp.Table) or not node.name:
            raise QuerySyntaxError(f"Unsupported FROM item: {node.sql(dialect=READ_DIALECT)}")
        relation = node.name
        if relation not in self.schemas:
            raise QuerySyntaxError(f"Unknown relation '{relation}'")
        alias = node.alias or relation
        if any(t.alias == alias for t in self.tables):
            raise QuerySyntaxError(f"Duplicate table alias '{alias}'")
        self.tables.append(TableRef(relation, alias))

    def _parse_from(self, tree: exp.Select) -> None:
        from_ = _arg(tree, "from", "from_")
        if from_ is None:
            raise QuerySyntaxError("Query has no FROM clause")
        self._add_table(from_.this)
        for extra in from_.expressions or ():
            self._add_table(extra)
        pending_on = []
        for join in tree.args.get("joins") or ():
            if join.side or join.kind not in ("", "INNER", "CROSS"):
                raise QuerySyntaxError(f"Only inner joins are supported, got {join.sql(dialect=READ_DIALECT)}")
            if join.args.get("using"):
                raise QuerySyntaxError("JOIN ... USING is not supported")
            self._add_table(join.this)
            if join.args.get("on"):
                pending_on.append(join.args["on"])
        for on in pending_on:
            for conjunct in self._conjuncts(on):
                self._parse_condition(conjunct)

    def _conjuncts(self, node: exp.Expression) -> list[exp.Expression]:
        if isinstance(node, exp.Paren):
            return self._conjuncts(node.this)
        if isinstance(node, exp.And):
            return self._conjuncts(node.this) + self._conjuncts(node.expression)
        return [node]

    def _column(self, node: exp.Expression) -> ColumnRef:
        if not isinstance(node, exp.Column) or isinstance(node.this, exp.Star):
            raise QuerySyntaxError(f"Expected a column, got {node.sql(dialect=READ_DIALECT)}")
        attribute, qualifier = node.name, node.table
        if qualifier:
            table = next((t for t in self.tables if t.alias == qualifier), None)
            if table is None:
                raise QuerySyntaxError(f"Unknown table alias '{qualifier}'")
            if attribute not in self.schemas[table.relation]:
                raise QuerySyntaxError(f"Relation '{table.relation}' has no column '{attribute}'")
            return ColumnRef(table.alias, attribute)
        owners = [t for t in self.tables if attribute in self.schemas[t.relation]]
        if not owners:
            raise QuerySyntaxError(f"Unknown column '{attribute}'")
        if len(owners) > 1:
            raise QuerySyntaxError(f"Column '{attribute}' is ambiguous")
        return ColumnRef(owners[0].alias, attribute)

    def _tag(self, column: ColumnRef) -> ValueTag:
        return self.schemas[self.tables_by_alias()[column.alias]][column.attribute]

    def tables_by_alias(self) -> dict[str, str]:
        return {t.alias: t.relation for t in self.tables}

    def _literal(self, node: exp.Expression, tag: ValueTag) -> Value:
        negative = False
        if isinstance(node, exp.Neg):
            negative, node = True, node.this
        if not isinstance(node, exp.Literal):
            raise QuerySyntaxError(f"Expected a constant, got {node.sql(dialect=READ_DIALECT)}")
        text = node.this
        try:
            if node.is_string:
                if negative:
                    raise QuerySyntaxError(f"Cannot negate text literal '{text}'")
                return parse_value(text, tag)
            if tag is ValueTag.INTEGER:
                value = int(text)
            elif tag is ValueTag.DECIMAL:
                value = Decimal(text)
            else:
                raise QuerySyntaxError(f"Numeric literal {text} compared with a {tag.value} column")
        except (ContractViolation, ValueError, InvalidOperation) as e:
            raise QuerySyntaxError(f"Literal {text!r} does not fit a {tag.value} column") from e
        return -value if negative else value

    def _bind(self, column: ColumnRef, condition: ObjectCondition) -> None:
        self.conditions.append(BoundCondition(column.alias, condition))

    def _parse_condition(self, node: exp.Expression) -> None:
        for kind, op in _COMPARISONS.items():
            if type(node) is kind:
                left, right = node.this, node.expression
                if isinstance(left, exp.Column) and isinstance(right, exp.Column):
                    if op is not Operator.EQ:
                        raise QuerySyntaxError("Only equality comparisons between columns are supported")
                    lhs, rhs = self._column(left), self._column(right)
                    if lhs.alias == rhs.alias:
                        raise QuerySyntaxError("Column comparisons within one table are not supported")
                    self.joins.append(JoinCondition(lhs, rhs))
                    return
                if not isinstance(left, exp.Column):
                    left, right, op = right, left, _FLIPPED[op]
                column = self._column(left)
                self._bind(column, ObjectCondition(column.attribute, op, self._literal(right, self._tag(column))))
                return
        if isinstance(node, exp.Between):
            column = self._column(node.this)
            tag = self._tag(column)
            try:
                bound = RangeBound(
                    Operator.GE, self._literal(node.args["low"], tag),
                    Operator.LE, self._literal(node.args["high"], tag),
                )
            except ContractViolation as e:
                raise QuerySyntaxError(str(e)) from e
            self._bind(column, ObjectCondition(column.attribute, Operator.RANGE, bound))
            return
        negated = isinstance(node, exp.Not) and isinstance(node.this, exp.In)
        if isinstance(node, exp.In) or negated:
            target = node.this if negated else node
            if target.args.get("query") or target.args.get("unnest"):
                raise QuerySyntaxError("IN with a subquery is not supported")
            column = self._column(target.this)
            tag = self._tag(column)
            values = tuple(self._literal(v, tag) for v in target.expressions)
            if not values:
                raise QuerySyntaxError("IN needs at least one value")
            self._bind(
                column,
                ObjectCondition(column.attribute, Operator.NOT_IN if negated else Operator.IN, values),
            )
            return
        raise QuerySyntaxError(f"Unsupported condition: {node.sql(dialect=READ_DIALECT)}")

    def _select_item(self, node: exp.Expression) -> SelectItem:
        name = None
        if isinstance(node, exp.Alias):
            name, node = node.alias, node.this
        if isinstance(node, exp.Star):
            return SelectItem(SelectKind.STAR)
        if isinstance(node, exp.Column) and isinstance(node.this, exp.Star):
            alias = node.table
            if alias not in self.tables_by_alias():
                raise QuerySyntaxError(f"Unknown table alias '{alias}'")
            return SelectItem(SelectKind.ALIAS_STAR, name=f"{alias}.*", alias=alias)
        if isinstance(node, exp.Count):
            if not isinstance(node.this, exp.Star):
                raise QuerySyntaxError("Only COUNT(*) is supported")
            return SelectItem(SelectKind.COUNT, name=name or "count")
        column = self._column(node)
        return SelectItem(SelectKind.COLUMN, name=name or column.attribute, column=column)


def parse_query(sql: str, schemas: Mapping[str, Mapping[str, ValueTag]]) -> ParsedQuery:
    """
    :param schemas: relation → attribute → value tag, used to resolve columns and
        coerce literals
    :raises QuerySyntaxError: for anything outside the supported surface
    :raises AlreadyRewrittenError: when the query already reads a guarded relation
    """
    return _QueryParser(sql.strip().rstrip(";"), schemas).parse()


def rename_relations(parsed: ParsedQuery, dialect: str) -> str:
    """Regenerates the query with every relation read from its guarded projection."""
    tree = parsed.tree.copy()
    for table in tree.find_all(exp.Table):
        relation = table.name
        if not table.alias:
            table.set("alias", exp.TableAlias(this=exp.to_identifier(relation)))
        table.set("this", exp.to_identifier(relation + GUARDED_SUFFIX))
    return tree.sql(dialect=dialect)
