"""
Synthetic policy and query workloads for the attendance and space-usage scenarios.

Policies are generated per policy holder (10 each), queries are instantiated from
three templates (location-based, user-specific, aggregated counts) and both are
interleaved into epochs of ``x`` inserts, ``y`` queries and, in deletion mode,
``z`` deletes. Query slots alternate between unseen queries from the pool and
seen queries replayed from a sliding window of recent queries.
"""

import json
import os
from collections import deque
from dataclasses import dataclass, field, replace
from datetime import date, time, timedelta
from enum import Enum
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

from sieve_fgac.src.sieve.errors import ContractViolation, WorkloadFormatError
from sieve_fgac.src.sieve.policy import OWNER, ObjectCondition, Operator, Policy, RangeBound
from sieve_fgac.src.sieve.values import Value, encode_value, sql_literal

TERM_START = date(2018, 2, 1)
TERM_END = date(2018, 4, 30)
TERM_DAYS = (TERM_END - TERM_START).days

LOCATION = "location_id"
TS_DATE = "ts_date"
TS_TIME = "ts_time"
WIFI_ATTRIBUTES = ("id", LOCATION, OWNER, TS_DATE, TS_TIME)

POLICIES_PER_HOLDER = 10
CLASSES_PER_FACULTY = 2


@dataclass(frozen=True)
class UserProfile:
    name: str
    count: int


@dataclass(frozen=True)
class ScenarioSpec:
    """
    :var holders: profiles whose members own policies
    :var queriers: profiles whose members pose queries
    """

    name: str
    profiles: tuple[UserProfile, ...]
    holders: tuple[str, ...]
    queriers: tuple[str, ...]
    purpose: str
    policies_per_holder: int = POLICIES_PER_HOLDER
    relation: str = "wifi"
    locations: int = 64

    def count(self, profile: str) -> int:
        for p in self.profiles:
            if p.name == profile:
                return p.count
        raise ContractViolation(f"Scenario {self.name} has no profile '{profile}'")

    def user_ids(self) -> dict[str, range]:
        """Consecutive user ids per profile, starting at 1, in profile order."""
        ids, start = {}, 1
        for p in self.profiles:
            ids[p.name] = range(start, start + p.count)
            start += p.count
        return ids

    @property
    def holder_count(self) -> int:
        return sum(self.count(p) for p in self.holders)

    @property
    def querier_count(self) -> int:
        return sum(self.count(p) for p in self.queriers)

    @property
    def policy_count(self) -> int:
        return self.holder_count * self.policies_per_holder

    def desk(self) -> "ScenarioSpec":
        return replace(
            self,
            profiles=tuple(UserProfile(p.name, max(1, p.count // 10)) for p in self.profiles),
        )


ATTENDANCE = ScenarioSpec(
    name="attendance",
    profiles=(
        UserProfile("graduate", 1394),
        UserProfile("undergrad", 1758),
        UserProfile("faculty", 388),
    ),
    holders=("graduate", "undergrad"),
    queriers=("faculty",),
    purpose="marking attendance",
)

SPACE_USAGE = ScenarioSpec(
    name="space_usage",
    profiles=(
        UserProfile("visitor", 31796),
        UserProfile("staff", 1029),
        UserProfile("graduate", 1428),
        UserProfile("undergrad", 1795),
        UserProfile("faculty", 388),
    ),
    holders=("visitor", "staff", "graduate", "undergrad", "faculty"),
    queriers=("faculty", "staff"),
    purpose="space-utilization",
)

SCENARIOS = {s.name: s for s in (ATTENDANCE, SPACE_USAGE)}


class WorkloadMode(Enum):
    STEADY = "steady"
    BURSTY = "bursty"
    DELETION = "deletion"


@dataclass(frozen=True)
class WorkloadConfig:
    """
    :var max_queries: stop once this many queries were emitted
    :var bursty_start: (x, y) of the first bursty epoch
    :var bursty_step: per-epoch change of (x, y)
    :var bursty_stop: the run ends when x falls below the first value; y is capped
        at the second
    """

    mode: WorkloadMode = WorkloadMode.STEADY
    x: int = 10
    y: int = 1
    z: int = 0
    zipf_alpha: float = 0.0
    window_size: int = 10
    seed: int = 42
    max_queries: Optional[int] = None
    bursty_start: tuple[int, int] = (500, 1)
    bursty_step: tuple[int, int] = (-10, 5)
    bursty_stop: tuple[int, int] = (1, 250)

    def __post_init__(self):
        if self.mode is WorkloadMode.STEADY and self.x < 1 and self.y < 1:
            raise ContractViolation("A steady workload needs x >= 1 or y >= 1")
        if self.x < 0 or self.y < 0 or self.z < 0:
            raise ContractViolation("Event counts cannot be negative")
        if self.z and self.mode is not WorkloadMode.DELETION:
            raise ContractViolation("Deletions (z > 0) require deletion mode")
        if self.mode is WorkloadMode.DELETION and not self.z:
            raise ContractViolation("Deletion mode requires z >= 1")
        if self.window_size < 1:
            raise ContractViolation("Window size must be at least 1")
        if self.zipf_alpha < 0:
            raise ContractViolation("Zipf alpha cannot be negative")
        if self.max_queries is not None and self.max_queries < 0:
            raise ContractViolation("max_queries cannot be negative")

    @property
    def label(self) -> str:
        if self.mode is WorkloadMode.BURSTY:
            (x0, y0), (x1, y1) = self.bursty_start, self.bursty_stop
            return f"bursty {x0}P{y0}Q->{x1}P{y1}Q"
        label = f"{self.x}P{self.y}Q"
        return label + f"{self.z}D" if self.z else label

    def schedule(self) -> Iterator[tuple[int, int]]:
        """(x, y) per epoch; steady and deletion schedules never end on their own."""
        if self.mode is not WorkloadMode.BURSTY:
            while True:
                yield self.x, self.y
        (x, y), (dx, dy), (stop_x, stop_y) = self.bursty_start, self.bursty_step, self.bursty_stop
        while x >= stop_x:
            yield x, min(y, stop_y) if dy >= 0 else max(y, stop_y)
            x, y = x + dx, y + dy


@dataclass(frozen=True)
class GeneratedQuery:
    sql: str
    querier: int
    purpose: str
    template: str


class EventKind(Enum):
    INSERT_POLICY = "insert_policy"
    QUERY = "query"
    DELETE_POLICY = "delete_policy"


@dataclass(frozen=True)
class WorkloadEvent:
    seq: int
    epoch: int
    kind: EventKind
    policy: Optional[Policy] = None
    query: Optional[GeneratedQuery] = None
    seen: bool = False
    policy_id: Optional[int] = None

    def to_dict(self) -> dict:
        record = {"seq": self.seq, "epoch": self.epoch, "kind": self.kind.value}
        if self.kind is EventKind.INSERT_POLICY:
            record["policy"] = self.policy.to_dict()
        elif self.kind is EventKind.QUERY:
            record.update(
                query=self.query.sql,
                querier=self.query.querier,
                purpose=self.query.purpose,
                template=self.query.template,
                seen=self.seen,
            )
        else:
            record["policy_id"] = self.policy_id
        return record

    @classmethod
    def from_dict(cls, raw: dict) -> "WorkloadEvent":
        try:
            kind = EventKind(raw["kind"])
            seq, epoch = int(raw["seq"]), int(raw["epoch"])
            if kind is EventKind.INSERT_POLICY:
                return cls(seq, epoch, kind, policy=Policy.from_dict(raw["policy"]))
            if kind is EventKind.QUERY:
                query = GeneratedQuery(
                    raw["query"], raw["querier"], raw["purpose"], raw.get("template", "")
                )
                return cls(seq, epoch, kind, query=query, seen=bool(raw.get("seen", False)))
            return cls(seq, epoch, kind, policy_id=int(raw["policy_id"]))
        except (KeyError, ValueError, TypeError) as e:
            raise WorkloadFormatError(f"Malformed workload event {raw!r}: {e}") from e


# policies


@dataclass(frozen=True)
class _Course:
    faculty: int
    location: int
    start: time
    end: time


def _clock(minutes: int) -> time:
    return time(minutes // 60, minutes % 60)


def _day(offset: int) -> date:
    return TERM_START + timedelta(days=int(offset))


def _range(attribute: str, lo: Value, hi: Value) -> ObjectCondition:
    return ObjectCondition(attribute, Operator.RANGE, RangeBound(Operator.GE, lo, Operator.LE, hi))


def _policy(
    spec: ScenarioSpec, owner: int, querier: int, location: int, dates: tuple, hours: tuple
) -> Policy:
    return Policy(
        id=None,
        relation=spec.relation,
        owner=owner,
        object_conditions=(
            ObjectCondition(OWNER, Operator.EQ, owner),
            ObjectCondition(LOCATION, Operator.EQ, location),
            _range(TS_DATE, *dates),
            _range(TS_TIME, *hours),
        ),
        querier=querier,
        purpose=spec.purpose,
    )


def _term_variant(rng: np.random.Generator) -> tuple[date, date]:
    """Full term most of the time; otherwise a late start, an early end or a guest lecture."""
    draw = rng.random()
    if draw < 0.7:
        return TERM_START, TERM_END
    if draw < 0.8:
        return _day(rng.integers(7, 31)), TERM_END
    if draw < 0.9:
        return TERM_START, _day(TERM_DAYS - int(rng.integers(7, 41)))
    first = int(rng.integers(0, TERM_DAYS))
    return _day(first), _day(min(TERM_DAYS, first + int(rng.integers(0, 2))))


def _courses(spec: ScenarioSpec, rng: np.random.Generator) -> list[_Course]:
    courses = []
    for faculty in spec.user_ids()["faculty"]:
        for _ in range(CLASSES_PER_FACULTY):
            start = int(rng.integers(8, 18)) * 60
            length = int(rng.choice([60, 80, 120]))
            courses.append(
                _Course(
                    faculty=faculty,
                    location=int(rng.integers(0, spec.locations)),
                    start=_clock(start),
                    end=_clock(min(start + length, 22 * 60)),
                )
            )
    return courses


def _attendance_policies(spec: ScenarioSpec, rng: np.random.Generator) -> list[Policy]:
    courses = _courses(spec, rng)
    if len(courses) < spec.policies_per_holder:
        raise ContractViolation(
            f"{len(courses)} classes cannot give each student "
            f"{spec.policies_per_holder} distinct classes"
        )
    order = rng.permutation(len(courses))
    ids = spec.user_ids()
    students = [u for profile in spec.holders for u in ids[profile]]
    policies, cursor = [], 0
    for student in students:
        for _ in range(spec.policies_per_holder):
            course = courses[int(order[cursor % len(courses)])]
            cursor += 1
            policies.append(
                _policy(
                    spec,
                    student,
                    course.faculty,
                    course.location,
                    _term_variant(rng),
                    (course.start, course.end),
                )
            )
    return policies


# visiting hours per profile, in whole hours
_PROFILE_HOURS = {
    "visitor": (9, 18),
    "staff": (8, 17),
    "graduate": (8, 23),
    "undergrad": (8, 20),
    "faculty": (7, 20),
}


def _hours(profile: str, rng: np.random.Generator) -> tuple[time, time]:
    lo, hi = _PROFILE_HOURS.get(profile, (8, 17))
    if profile == "visitor":
        start = int(rng.integers(lo, hi - 1))
        return time(start), time(min(hi, start + int(rng.integers(2, 5))))
    return time(lo + int(rng.integers(0, 2))), time(hi - int(rng.integers(0, 2)))


def _space_dates(rng: np.random.Generator) -> tuple[date, date]:
    if rng.random() < 0.6:
        return TERM_START, TERM_END
    first = int(rng.integers(0, TERM_DAYS - 7))
    return _day(first), _day(min(TERM_DAYS, first + int(rng.integers(7, 61))))


def _space_policies(spec: ScenarioSpec, rng: np.random.Generator) -> list[Policy]:
    ids = spec.user_ids()
    queriers = [u for profile in spec.queriers for u in ids[profile]]
    spaces = {
        q: [int(v) for v in rng.choice(spec.locations, size=int(rng.integers(1, 4)), replace=False)]
        for q in queriers
    }
    policies = []
    for profile in spec.holders:
        for holder in ids[profile]:
            for _ in range(spec.policies_per_holder):
                querier = queriers[int(rng.integers(0, len(queriers)))]
                managed = spaces[querier]
                policies.append(
                    _policy(
                        spec,
                        holder,
                        querier,
                        managed[int(rng.integers(0, len(managed)))],
                        _space_dates(rng),
                        _hours(profile, rng),
                    )
                )
    return policies


def generate_policies(spec: ScenarioSpec, rng: np.random.Generator) -> list[Policy]:
    """
    ``policies_per_holder`` policies per holder with ids 1..N in generation order.

    Attendance policies tie a student to the classroom and class hours of a course
    taught by the querying faculty member; space-usage policies let a faculty or
    staff member monitor one of the spaces they manage during the holder's hours.
    """
    if spec.name == ATTENDANCE.name:
        policies = _attendance_policies(spec, rng)
    else:
        policies = _space_policies(spec, rng)
    return [p.with_identity(i, 0) for i, p in enumerate(policies, start=1)]


# queries


def zipf_pmf(n: int, alpha: float) -> np.ndarray:
    """Normalized pmf over ranks 1..n; alpha = 0 is uniform."""
    if n < 1:
        raise ContractViolation("Zipf distribution needs at least one rank")
    weights = 1.0 / np.power(np.arange(1, n + 1, dtype=float), alpha)
    return weights / weights.sum()


def _between(attribute: str, lo: Value, hi: Value) -> str:
    return f"W.{attribute} BETWEEN {sql_literal(lo)} AND {sql_literal(hi)}"


def _in(attribute: str, values: Iterable[Value]) -> str:
    return f"W.{attribute} IN ({', '.join(sql_literal(v) for v in sorted(set(values)))})"


def _sample(rng: np.random.Generator, items: Sequence, most: int) -> list:
    size = min(len(items), int(rng.integers(1, most + 1)))
    return [items[int(i)] for i in rng.choice(len(items), size=size, replace=False)]


def _conditions_of(policy: Policy) -> dict:
    return {c.attribute: c for c in policy.object_conditions}


def _query_window(policy: Policy, rng: np.random.Generator) -> tuple[str, str]:
    conditions = _conditions_of(policy)
    hours = conditions[TS_TIME].value
    first_day = int(rng.integers(0, TERM_DAYS))
    days = int(rng.integers(1, 15))
    dates = _between(TS_DATE, _day(first_day), _day(min(TERM_DAYS, first_day + days)))
    lo = max(0, hours.lo.hour - int(rng.integers(0, 2)))
    hi = min(23, hours.hi.hour + int(rng.integers(0, 2)))
    return _between(TS_TIME, time(lo), time(hi, 59, 59) if hi == 23 else time(hi)), dates


def _instantiate(
    spec: ScenarioSpec, template: str, own: Sequence[Policy], rng: np.random.Generator
) -> str:
    reference = own[int(rng.integers(0, len(own)))]
    times, dates = _query_window(reference, rng)
    table = f"SELECT * FROM {spec.relation} AS W WHERE"
    if template == "Q1":
        locations = [_conditions_of(p)[LOCATION].value for p in _sample(rng, own, 3)]
        return f"{table} {_in(LOCATION, locations)} AND {times} AND {dates}"
    if template == "Q2":
        owners = [p.owner for p in _sample(rng, own, 5)]
        return f"{table} {_in(OWNER, owners)} AND {times} AND {dates}"
    return (
        f"SELECT W.{LOCATION}, COUNT(*) FROM {spec.relation} AS W "
        f"WHERE {times} AND {dates} GROUP BY W.{LOCATION}"
    )


TEMPLATES = ("Q1", "Q2", "Q3")


def generate_queries(
    spec: ScenarioSpec,
    policies: Sequence[Policy],
    rng: np.random.Generator,
    zipf_alpha: float = 0.0,
    count: Optional[int] = None,
) -> list[GeneratedQuery]:
    """
    Half as many queries as policies by default. Queriers are drawn from those with
    at least one policy, by a Zipf distribution over a seeded random ranking.
    """
    count = len(policies) // 2 if count is None else count
    by_querier: dict[int, list[Policy]] = {}
    for policy in policies:
        by_querier.setdefault(policy.querier, []).append(policy)
    if not by_querier or count <= 0:
        return []
    queriers = sorted(by_querier)
    ranking = [queriers[int(i)] for i in rng.permutation(len(queriers))]
    drawn = rng.choice(len(ranking), size=count, p=zipf_pmf(len(ranking), zipf_alpha))
    templates = rng.integers(0, len(TEMPLATES), size=count)
    queries = []
    for rank, template_index in zip(drawn, templates):
        querier = ranking[int(rank)]
        template = TEMPLATES[int(template_index)]
        queries.append(
            GeneratedQuery(
                _instantiate(spec, template, by_querier[querier], rng),
                querier,
                spec.purpose,
                template,
            )
        )
    return queries


# interleaving


def interleave(
    policies: Sequence[Policy],
    queries: Sequence[GeneratedQuery],
    cfg: WorkloadConfig,
    rng: np.random.Generator,
) -> Iterator[WorkloadEvent]:
    """
    Emits epochs until the policy pool is empty at the start of an epoch, the unseen
    query pool runs dry, or the query budget is spent.
    """
    pending = deque(policies)
    unseen = iter(queries)
    window: deque = deque(maxlen=cfg.window_size)
    live: list[int] = []
    seq = emitted = slot = 0
    for epoch, (x, y) in enumerate(cfg.schedule(), start=1):
        if not pending:
            return
        for _ in range(min(x, len(pending))):
            policy = pending.popleft()
            live.append(policy.id)
            seq += 1
            yield WorkloadEvent(seq, epoch, EventKind.INSERT_POLICY, policy=policy)
        for _ in range(y):
            if cfg.max_queries is not None and emitted >= cfg.max_queries:
                return
            seen = slot % 2 == 1 and len(window) > 0
            slot += 1
            if seen:
                query = window[int(rng.integers(0, len(window)))]
            else:
                query = next(unseen, None)
                if query is None:
                    return
            window.append(query)
            emitted += 1
            seq += 1
            yield WorkloadEvent(seq, epoch, EventKind.QUERY, query=query, seen=seen)
        for _ in range(min(cfg.z, len(live))):
            i = int(rng.integers(0, len(live)))
            live[i], live[-1] = live[-1], live[i]
            seq += 1
            yield WorkloadEvent(seq, epoch, EventKind.DELETE_POLICY, policy_id=live.pop())


@dataclass
class Workload:
    spec: ScenarioSpec
    config: WorkloadConfig
    policies: list[Policy]
    queries: list[GeneratedQuery]
    events: list[WorkloadEvent] = field(default_factory=list)

    def stats(self) -> dict:
        return workload_stats(self.events)


def generate_workload(spec: ScenarioSpec, cfg: WorkloadConfig) -> Workload:
    rng = np.random.default_rng(cfg.seed)
    policies = generate_policies(spec, rng)
    queries = generate_queries(spec, policies, rng, cfg.zipf_alpha)
    events = list(interleave(policies, queries, cfg, rng))
    return Workload(spec, cfg, policies, queries, events)


def workload_stats(events: Iterable[WorkloadEvent]) -> dict:
    stats = {"policies": 0, "queries": 0, "deletions": 0, "epochs": 0, "queriers": set()}
    for event in events:
        stats["epochs"] = max(stats["epochs"], event.epoch)
        if event.kind is EventKind.INSERT_POLICY:
            stats["policies"] += 1
        elif event.kind is EventKind.QUERY:
            stats["queries"] += 1
            stats["queriers"].add(event.query.querier)
        else:
            stats["deletions"] += 1
    stats["queriers"] = len(stats["queriers"])
    return stats


# synthetic base relation


def generate_wifi_events(
    spec: ScenarioSpec,
    policies: Sequence[Policy],
    count: int,
    rng: np.random.Generator,
    affinity: float = 0.7,
) -> list[dict]:
    """
    WiFi connectivity rows (id, location_id, owner, ts_date, ts_time). With
    probability ``affinity`` a row falls inside one of its owner's policies, so
    users cluster around the classrooms and spaces their policies name.
    """
    by_owner: dict[int, list[Policy]] = {}
    for policy in policies:
        by_owner.setdefault(policy.owner, []).append(policy)
    owners = sorted(by_owner) or list(range(1, spec.holder_count + 1))
    rows = []
    for row_id in range(1, count + 1):
        owner = owners[int(rng.integers(0, len(owners)))]
        own = by_owner.get(owner)
        if own and rng.random() < affinity:
            conditions = _conditions_of(own[int(rng.integers(0, len(own)))])
            location = conditions[LOCATION].value
            dates, hours = conditions[TS_DATE].value, conditions[TS_TIME].value
            first = (dates.lo - TERM_START).days
            day = _day(rng.integers(first, (dates.hi - TERM_START).days + 1))
            lo = hours.lo.hour * 3600 + hours.lo.minute * 60
            hi = hours.hi.hour * 3600 + hours.hi.minute * 60
            seconds = int(rng.integers(lo, hi + 1))
        else:
            location = int(rng.integers(0, spec.locations))
            day = _day(rng.integers(0, TERM_DAYS + 1))
            seconds = int(rng.integers(7 * 3600, 23 * 3600))
        rows.append(
            {
                "id": row_id,
                LOCATION: location,
                OWNER: owner,
                TS_DATE: day,
                TS_TIME: time(seconds // 3600, seconds % 3600 // 60, seconds % 60),
            }
        )
    return rows


# files


def write_workload(events: Iterable[WorkloadEvent], path: str) -> int:
    count = 0
    with open(os.path.expanduser(path), "w") as f:
        for event in events:
            f.write(json.dumps(event.to_dict(), sort_keys=True) + "\n")
            count += 1
    return count


def read_workload(path: str) -> Iterator[WorkloadEvent]:
    """
    :raises WorkloadFormatError: on unreadable lines or non-increasing ``seq``
    """
    last = 0
    with open(os.path.expanduser(path)) as f:
        for number, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as e:
                raise WorkloadFormatError(f"{path}:{number}: invalid JSON ({e})") from e
            event = WorkloadEvent.from_dict(raw)
            if event.seq <= last:
                raise WorkloadFormatError(
                    f"{path}:{number}: seq {event.seq} does not increase past {last}"
                )
            last = event.seq
            yield event


def write_rows(rows: Iterable[dict], path: str) -> int:
    count = 0
    with open(os.path.expanduser(path), "w") as f:
        for row in rows:
            f.write(json.dumps({k: encode_value(v) for k, v in row.items()}) + "\n")
            count += 1
    return count
