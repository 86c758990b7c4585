from collections import deque
from datetime import time

import pytest
from hypothesis import given
from hypothesis import strategies as st

from sieve_fgac.src.sieve.cache import (
    ClockReplacer,
    GeCache,
    LookupOutcome,
    RefreshKind,
    RefreshStrategy,
    mergeable,
)
from sieve_fgac.src.sieve.errors import ContractViolation
from sieve_fgac.src.sieve.guard_selection import GeKey, GuardedExpression, GuardedPolicyExpression
from sieve_fgac.src.sieve.middleware import Sieve
from sieve_fgac.src.sieve.policy import QueryMetadata

from .utils import FACULTY, PURPOSE, STUDENT_QUERIER, between, eq, make_policy

QM = QueryMetadata(FACULTY, PURPOSE)


class SecondChanceFifo:
    """Queue model of clock replacement: the queue front is the hand."""

    def __init__(self, capacity):
        self.capacity = capacity
        self.queue = deque()
        self.bits = {}

    def get(self, key):
        if key in self.bits:
            self.bits[key] = True

    def put(self, key):
        if key in self.bits:
            self.bits[key] = True
            return None
        evicted = None
        if len(self.queue) == self.capacity:
            while True:
                candidate = self.queue.popleft()
                if self.bits[candidate]:
                    self.bits[candidate] = False
                    self.queue.append(candidate)
                    continue
                del self.bits[candidate]
                evicted = candidate
                break
        self.queue.append(key)
        self.bits[key] = True
        return evicted


operations = st.lists(st.tuples(st.sampled_from(["get", "put"]), st.integers(0, 7)), max_size=60)


@given(st.integers(1, 5), operations)
def test_clock_matches_second_chance_fifo(capacity, ops):
    clock = ClockReplacer(capacity)
    model = SecondChanceFifo(capacity)
    for op, key in ops:
        if op == "get":
            clock.get(key)
            model.get(key)
        else:
            assert clock.put(key, str(key)) == model.put(key)
        assert sorted(clock.keys()) == sorted(model.queue)
        assert len(clock) <= capacity


def test_clock_sweeps_past_referenced_slots():
    clock = ClockReplacer(3)
    for key in "abc":
        clock.put(key, key.upper())
    assert clock.use_bits() == [True, True, True]
    # every bit set: one full sweep, then the first slot goes
    assert clock.put("d", "D") == "a"
    assert clock.keys() == ["d", "b", "c"]
    assert clock.use_bits() == [True, False, False]
    assert clock.peek("b") == "B"
    assert clock.use_bits()[1] is False
    assert clock.get("b") == "B"
    assert clock.put("e", "E") == "c"
    assert "c" not in clock and "e" in clock


def test_clock_capacity_edges():
    empty = ClockReplacer(0)
    assert empty.put("a", 1) is None
    assert len(empty) == 0 and empty.get("a") is None
    with pytest.raises(ContractViolation):
        ClockReplacer(-1)


@pytest.fixture
def sieve(engine, store):
    return Sieve(engine, store=store)


def lookup(cache, sieve, qm=QM):
    return cache.lookup(qm, "wifi", sieve.store, sieve.build)


def test_miss_then_hit(sieve):
    cache = GeCache(4)
    first = lookup(cache, sieve)
    assert first.outcome is LookupOutcome.MISS
    assert first.policies_built == 5
    assert first.ge.built_over == frozenset({1, 2, 3, 4, 5})
    second = lookup(cache, sieve)
    assert second.outcome is LookupOutcome.HIT
    assert second.ge is first.ge
    assert cache.metrics.to_dict()["hit_rate"] == 0.5
    # builds are persisted
    assert sieve.store.fetch_ge(FACULTY, PURPOSE, "wifi") is not None


def test_b1_always_regenerates(sieve):
    cache = GeCache(4, RefreshStrategy.B1)
    lookup(cache, sieve)
    sieve.insert_policy(make_policy(2, eq("location_id", 3)))
    refreshed = lookup(cache, sieve)
    assert (refreshed.outcome, refreshed.refresh) == (LookupOutcome.SOFT_HIT, RefreshKind.REGENERATED)
    assert refreshed.policies_built == 6
    assert cache.metrics.regenerations == 1


def test_b2_regenerates_at_the_update_limit(sieve):
    cache = GeCache(4, RefreshStrategy.B2, update_limit=2)
    lookup(cache, sieve)
    new_id = sieve.insert_policy(make_policy(2, eq("location_id", 3)))
    updated = lookup(cache, sieve)
    assert updated.refresh is RefreshKind.UPDATED
    assert updated.policies_built == 1
    assert cache.entry(GeKey(FACULTY, PURPOSE, "wifi")).consecutive_updates == 1
    assert new_id in updated.ge.built_over
    sieve.insert_policy(make_policy(3, eq("location_id", 4)))
    assert lookup(cache, sieve).refresh is RefreshKind.REGENERATED
    assert cache.entry(GeKey(FACULTY, PURPOSE, "wifi")).consecutive_updates == 0


def test_deletions_force_regeneration(sieve):
    cache = GeCache(4, RefreshStrategy.B2, update_limit=100)
    lookup(cache, sieve)
    sieve.delete_policy(2)
    refreshed = lookup(cache, sieve)
    assert refreshed.refresh is RefreshKind.REGENERATED
    assert 2 not in refreshed.ge.built_over
    assert lookup(cache, sieve).outcome is LookupOutcome.HIT


def test_updated_expression_appends_guards(sieve):
    cache = GeCache(4, RefreshStrategy.O1)
    before = lookup(cache, sieve).ge
    # an owner nobody guards yet cannot merge into the existing guards
    new_id = sieve.insert_policy(make_policy(9))
    after = lookup(cache, sieve)
    assert after.refresh is RefreshKind.UPDATED
    assert after.ge.built_over == before.built_over | {new_id}
    assert [g.guard_id for g in after.ge.guards] == list(range(1, len(after.ge.guards) + 1))
    assert after.ge.built_at == sieve.store.clock


def test_regenerate_thresholds():
    assert GeCache(1, RefreshStrategy.O1).regenerate_threshold == 1.0
    assert GeCache(1, RefreshStrategy.O2).regenerate_threshold == 0.5
    assert GeCache(1, RefreshStrategy.O2, regenerate_threshold=0.2).regenerate_threshold == 0.2


def test_mergeable_fraction():
    key = GeKey(FACULTY, PURPOSE, "wifi")
    existing = make_policy(1, between("ts_time", time(8), time(12))).with_identity(1, 1)
    ge = GuardedPolicyExpression(
        key,
        (GuardedExpression(1, between("ts_time", time(8), time(12)), (existing,)),),
        1,
        frozenset({1}),
    )
    inside = make_policy(2, between("ts_time", time(9), time(10)))
    outside = make_policy(3, between("ts_time", time(11), time(14)))
    assert mergeable(ge, [inside]) == 1.0
    assert mergeable(ge, [inside, outside]) == 0.5
    assert mergeable(ge, []) == 0.0


def test_eviction_is_counted(sieve):
    cache = GeCache(1)
    lookup(cache, sieve)
    lookup(cache, sieve, QueryMetadata(STUDENT_QUERIER, PURPOSE))
    assert cache.metrics.evictions == 1
    assert len(cache) == 1
    assert GeKey(STUDENT_QUERIER, PURPOSE, "wifi") in cache
    assert lookup(cache, sieve).outcome is LookupOutcome.MISS


def test_cached_sieve_reports_lookups(engine, store):
    sieve = Sieve.with_cache(engine, store, capacity=2)
    sql = "SELECT * FROM wifi AS W WHERE W.location_id = 0"
    first = sieve.query(sql, QM)
    second = sieve.query(sql, QM)
    assert [lk.outcome for lk in first.lookups] == [LookupOutcome.MISS]
    assert [lk.outcome for lk in second.lookups] == [LookupOutcome.HIT]
    assert first.result.rows == second.result.rows
