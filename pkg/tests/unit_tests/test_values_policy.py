from datetime import date, datetime, time
from decimal import Decimal

import pytest
from hypothesis import given
from hypothesis import strategies as st

from sieve_fgac.src.sieve.errors import (
    ContractViolation,
    IncomparableValuesError,
    InvalidPolicyError,
    UnsupportedConditionError,
)
from sieve_fgac.src.sieve.policy import (
    DerivedExpression,
    GroupDirectory,
    ObjectCondition,
    Operator,
    Policy,
    QueryMetadata,
    RangeBound,
    Row,
    delta_filter,
    eval_object_conditions,
    oracle_allowed_tuples,
    principals_for,
)
from sieve_fgac.src.sieve.values import (
    Interval,
    ValueTag,
    compare_values,
    decode_value,
    encode_value,
    sql_literal,
    value_tag,
)

from .utils import FACULTY, PURPOSE, between, eq, make_policy, sample_policies

intervals = st.builds(
    lambda a, b, lc, hc: Interval(min(a, b), lc, max(a, b), hc),
    st.integers(-50, 50),
    st.integers(-50, 50),
    st.booleans(),
    st.booleans(),
)


def test_value_tags():
    assert value_tag(3) is ValueTag.INTEGER
    assert value_tag(Decimal("1.5")) is ValueTag.DECIMAL
    assert value_tag("a") is ValueTag.TEXT
    assert value_tag(date(2018, 2, 1)) is ValueTag.DATE
    assert value_tag(time(8)) is ValueTag.TIME
    assert value_tag(datetime(2018, 2, 1, 8)) is ValueTag.TIMESTAMP
    with pytest.raises(ContractViolation):
        value_tag(True)
    with pytest.raises(ContractViolation):
        value_tag(1.5)


def test_compare_values_rejects_mixed_tags():
    assert compare_values(1, 2) == -1
    assert compare_values("b", "a") == 1
    assert compare_values(time(8), time(8)) == 0
    with pytest.raises(IncomparableValuesError):
        compare_values(1, "1")
    with pytest.raises(IncomparableValuesError):
        compare_values(date(2018, 2, 1), datetime(2018, 2, 1))


def test_encode_decode_tagged_values():
    assert encode_value(5) == 5
    assert encode_value(date(2018, 2, 1)) == {"date": "2018-02-01"}
    assert encode_value(time(8, 30)) == {"time": "08:30:00"}
    assert decode_value({"decimal": "2.50"}) == Decimal("2.50")
    assert decode_value({"timestamp": "2018-02-01T08:00:00"}) == datetime(2018, 2, 1, 8)
    with pytest.raises(ContractViolation):
        decode_value({"colour": "red"})
    with pytest.raises(ContractViolation):
        decode_value(False)


def test_sql_literal_escapes_quotes():
    assert sql_literal("O'Brien") == "'O''Brien'"
    assert sql_literal(7) == "7"
    assert sql_literal(date(2018, 2, 1)) == "'2018-02-01'"


def test_interval_edges():
    half_open = Interval(1, True, 5, False)
    assert half_open.contains_value(1)
    assert not half_open.contains_value(5)
    assert Interval(3, False, 3, True).is_empty
    assert Interval.point(4).is_point
    assert not Interval(1, True, 3, False).intersects(Interval(3, True, 6, True))
    assert Interval(1, True, 3, True).intersects(Interval(3, True, 6, True))
    assert Interval(None, False, 10, True).contains(Interval(2, True, 3, True))
    assert not Interval(0, True, 10, True).contains(Interval(None, False, 3, True))
    assert Interval(1, True, 2, True).hull(Interval(5, False, 9, True)) == Interval(1, True, 9, True)


@given(intervals, intervals, st.integers(-60, 60))
def test_intersection_agrees_with_membership(a, b, value):
    both = a.contains_value(value) and b.contains_value(value)
    assert a.intersection(b).contains_value(value) == both
    if both:
        assert a.intersects(b)
        assert a.hull(b).contains_value(value)


@given(intervals, intervals)
def test_hull_contains_both(a, b):
    hull = a.hull(b)
    assert hull.contains(a)
    assert hull.contains(b)


def test_operator_parse():
    assert Operator.parse("<>") is Operator.NE
    assert Operator.parse("not  in") is Operator.NOT_IN
    with pytest.raises(ContractViolation):
        Operator.parse("LIKE")


def test_range_bound_checks_order():
    with pytest.raises(ContractViolation):
        RangeBound(Operator.GE, 5, Operator.LE, 1)
    with pytest.raises(ContractViolation):
        RangeBound(Operator.LE, 1, Operator.LE, 5)


def test_object_condition_forms():
    listed = ObjectCondition("location_id", Operator.IN, [3, 1])
    assert listed.value == (3, 1)
    assert listed.interval() is None
    assert listed.evaluate(1) and not listed.evaluate(2)
    with pytest.raises(ContractViolation):
        ObjectCondition("location_id", Operator.IN, [])
    with pytest.raises(ContractViolation):
        ObjectCondition("location_id", Operator.IN, [1, "1"])
    assert ObjectCondition("owner", Operator.NE, 4).to_sql() == "owner <> 4"
    ranged = between("ts_time", time(8), time(12))
    assert ranged.to_sql("W") == "W.ts_time >= '08:00:00' AND W.ts_time <= '12:00:00'"
    assert ObjectCondition.from_dict(ranged.to_dict()) == ranged
    assert ObjectCondition.from_interval("v", Interval.point(3)) == eq("v", 3)
    assert ObjectCondition.from_interval("v", Interval(None, False, 3, False)).op is Operator.LT


def test_derived_conditions_are_not_evaluated():
    derived = ObjectCondition(
        "location_id", Operator.EQ, DerivedExpression("SELECT room FROM classes WHERE id = 3")
    )
    assert derived.is_derived
    assert "SELECT room" in derived.to_sql()
    row = Row("wifi", 0, {"owner": 1, "location_id": 2})
    with pytest.raises(UnsupportedConditionError):
        eval_object_conditions((derived,), row)


def test_policy_validation():
    with pytest.raises(InvalidPolicyError):
        Policy(None, "wifi", 1, (eq("location_id", 1),), FACULTY, PURPOSE)
    with pytest.raises(InvalidPolicyError):
        Policy(None, "wifi", 1, (eq("owner", 2),), FACULTY, PURPOSE)
    with pytest.raises(InvalidPolicyError):
        Policy(None, "wifi", 1, (eq("owner", 1), eq("owner", 1)), FACULTY, PURPOSE)
    with pytest.raises(InvalidPolicyError):
        Policy(None, "wifi", 1, (eq("owner", 1),), FACULTY, PURPOSE, action="deny")
    with pytest.raises(InvalidPolicyError):
        Policy(None, "wifi", 1, (eq("owner", 1),), "", PURPOSE)


def test_policy_round_trips_through_dict():
    policy = make_policy(1, between("ts_date", date(2018, 2, 1), date(2018, 2, 5))).with_identity(7, 3)
    assert Policy.from_dict(policy.to_dict()) == policy
    assert policy.to_sql() == (
        "(owner = 1 AND ts_date >= '2018-02-01' AND ts_date <= '2018-02-05')"
    )
    with pytest.raises(InvalidPolicyError):
        Policy.from_dict({"relation": "wifi"})


def test_row_needs_owner():
    with pytest.raises(ContractViolation):
        Row("wifi", 0, {"location_id": 1})


def test_query_metadata_needs_purpose():
    with pytest.raises(ContractViolation):
        QueryMetadata(FACULTY, "")


def test_group_closure_is_transitive():
    groups = GroupDirectory.from_hierarchy({1: ["a"], 2: ["b"]}, {"a": ["b"], "b": ["c"]})
    assert groups.groups_of(1) == frozenset({"a", "b", "c"})
    assert groups.members_of("c") == frozenset({1, 2})
    assert principals_for(1, groups) == [1, "a", "b", "c"]
    assert principals_for(3, groups) == [3]


def test_missing_attributes_hold_vacuously():
    row = Row("wifi", 0, {"owner": 1})
    assert eval_object_conditions((eq("owner", 1), eq("location_id", 9)), row)
    assert not eval_object_conditions((eq("owner", 2),), row)


def test_oracle_follows_purpose_querier_and_groups(groups):
    rows = [
        Row("wifi", 0, {"owner": 1, "location_id": 0, "ts_date": date(2018, 2, 2), "ts_time": time(9)}),
        Row("wifi", 1, {"owner": 1, "location_id": 1, "ts_date": date(2018, 2, 2), "ts_time": time(9)}),
        Row("wifi", 2, {"owner": 4, "location_id": 1, "ts_date": date(2018, 2, 2), "ts_time": time(10)}),
        Row("wifi", 3, {"owner": 2, "location_id": 1, "ts_date": date(2018, 3, 1), "ts_time": time(10)}),
    ]
    policies = [p.with_identity(i, i) for i, p in enumerate(sample_policies(), start=1)]
    allowed = oracle_allowed_tuples(rows, policies, QueryMetadata(FACULTY, PURPOSE), groups)
    assert {r.row_id for r in allowed} == {0, 2}
    assert oracle_allowed_tuples(rows, policies, QueryMetadata(FACULTY, "other"), groups) == set()
    # group policies only reach members
    assert {r.row_id for r in oracle_allowed_tuples(rows, policies, QueryMetadata(999, PURPOSE))} == set()
    assert delta_filter(policies, QueryMetadata(FACULTY, PURPOSE), rows[2], groups)
    assert not delta_filter(policies, QueryMetadata(FACULTY, PURPOSE), rows[1], groups)


DIRECTORY = GroupDirectory.from_hierarchy({FACULTY: ["faculty"]}, {"faculty": ["staff"]})

policy_draws = st.lists(
    st.builds(
        lambda owner, location, hour, querier: make_policy(
            owner,
            *([] if location is None else [eq("location_id", location)]),
            *([] if hour is None else [between("ts_time", time(hour), time(hour + 2))]),
            querier=querier,
        ),
        st.integers(1, 3),
        st.one_of(st.none(), st.integers(0, 2)),
        st.one_of(st.none(), st.integers(8, 18)),
        st.sampled_from([FACULTY, "faculty", "staff", 200]),
    ),
    max_size=8,
)
row_draws = st.builds(
    lambda i, owner, location, hour: Row(
        "wifi", i, {"owner": owner, "location_id": location, "ts_time": time(hour, 30)}
    ),
    st.integers(0, 50),
    st.integers(1, 3),
    st.integers(0, 2),
    st.integers(7, 21),
)


@given(policy_draws, row_draws)
def test_delta_filter_agrees_with_the_oracle(policies, row):
    qm = QueryMetadata(FACULTY, PURPOSE)
    allowed = oracle_allowed_tuples([row], policies, qm, DIRECTORY)
    assert delta_filter(policies, qm, row, DIRECTORY) == (row in allowed)


@given(policy_draws, policy_draws, row_draws)
def test_delta_filter_is_monotone_in_the_policy_set(policies, extra, row):
    qm = QueryMetadata(FACULTY, PURPOSE)
    if delta_filter(policies, qm, row, DIRECTORY):
        assert delta_filter(policies + extra, qm, row, DIRECTORY)
    assert not delta_filter([], qm, row, DIRECTORY)


@given(policy_draws, st.lists(row_draws, max_size=10))
def test_delta_filter_is_idempotent(policies, rows):
    qm = QueryMetadata(FACULTY, PURPOSE)
    once = [r for r in rows if delta_filter(policies, qm, r, DIRECTORY)]
    twice = [r for r in once if delta_filter(policies, qm, r, DIRECTORY)]
    assert twice == once
    assert [r for r in rows if delta_filter(policies + policies, qm, r, DIRECTORY)] == once
