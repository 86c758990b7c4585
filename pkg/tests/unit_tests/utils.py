from datetime import date, time, timedelta

from sieve_fgac.src.sieve.policy import ObjectCondition, Operator, Policy, RangeBound

WIFI_INDEXES = ["location_id", "ts_date", "ts_time"]
PURPOSE = "attendance"
FACULTY = 100
STUDENT_QUERIER = 200


def wifi_rows(count: int = 60) -> list[dict]:
    start = date(2018, 2, 1)
    return [
        {
            "id": i,
            "location_id": i % 5,
            "owner": i % 4 + 1,
            "ts_date": start + timedelta(days=i % 10),
            "ts_time": time(8 + i % 12, (i * 7) % 60),
        }
        for i in range(count)
    ]


def eq(attribute: str, value) -> ObjectCondition:
    return ObjectCondition(attribute, Operator.EQ, value)


def between(attribute: str, lo, hi) -> ObjectCondition:
    return ObjectCondition(attribute, Operator.RANGE, RangeBound(Operator.GE, lo, Operator.LE, hi))


def make_policy(owner, *conditions, querier=FACULTY, purpose=PURPOSE, policy_id=None) -> Policy:
    return Policy(
        id=policy_id,
        relation="wifi",
        owner=owner,
        object_conditions=(eq("owner", owner),) + conditions,
        querier=querier,
        purpose=purpose,
    )


def sample_policies() -> list[Policy]:
    return [
        make_policy(1, eq("location_id", 0), between("ts_time", time(8), time(12))),
        make_policy(2, between("ts_date", date(2018, 2, 1), date(2018, 2, 5))),
        make_policy(3, ObjectCondition("location_id", Operator.IN, (1, 2))),
        make_policy(3, ObjectCondition("ts_time", Operator.GE, time(15))),
        make_policy(4, between("ts_time", time(9), time(18)), querier="faculty"),
        make_policy(1, querier=STUDENT_QUERIER),
    ]
