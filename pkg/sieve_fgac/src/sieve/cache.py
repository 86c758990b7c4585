"""
Cache of guarded policy expressions keyed by (querier, purpose, relation), with
clock (second-chance) replacement and pluggable refresh strategies.
"""

import threading
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Generic, Hashable, NamedTuple, Optional, Sequence, TypeVar

from sieve_fgac.src.sieve.errors import ContractViolation
from sieve_fgac.src.sieve.guard_selection import GeKey, GuardedPolicyExpression
from sieve_fgac.src.sieve.policy import Policy, QueryMetadata
from sieve_fgac.src.sieve.store import PolicyStore

K = TypeVar("K", bound=Hashable)
V = TypeVar("V")

Builder = Callable[[GeKey, Sequence[Policy], int], GuardedPolicyExpression]


class ClockReplacer(Generic[K, V]):
    """
    Fixed-size circular slot array with one use bit per slot.

    Slots fill in order while there is room. Once full, the hand sweeps forward
    clearing set bits and evicts the first entry whose bit is already clear.
    """

    def __init__(self, capacity: int):
        if capacity < 0:
            raise ContractViolation("Cache capacity cannot be negative")
        self.capacity = capacity
        self.hand = 0
        self._keys: list[Optional[K]] = [None] * capacity
        self._bits = [False] * capacity
        self._values: list[Optional[V]] = [None] * capacity
        self._slot_of: dict[K, int] = {}

    def __len__(self) -> int:
        return len(self._slot_of)

    def __contains__(self, key: K) -> bool:
        return key in self._slot_of

    def keys(self) -> list[K]:
        return [k for k in self._keys if k is not None]

    def use_bits(self) -> list[bool]:
        return list(self._bits)

    def get(self, key: K) -> Optional[V]:
        slot = self._slot_of.get(key)
        if slot is None:
            return None
        self._bits[slot] = True
        return self._values[slot]

    def peek(self, key: K) -> Optional[V]:
        slot = self._slot_of.get(key)
        return None if slot is None else self._values[slot]

    def put(self, key: K, value: V) -> Optional[K]:
        """Inserts or replaces ``key``; returns the evicted key, if any."""
        if self.capacity == 0:
            return None
        slot = self._slot_of.get(key)
        if slot is not None:
            self._values[slot] = value
            self._bits[slot] = True
            return None
        evicted = None
        if len(self._slot_of) < self.capacity:
            slot = len(self._slot_of)
        else:
            slot = self.clock_evict()
            evicted = self._keys[slot]
            del self._slot_of[evicted]
            self.hand = (slot + 1) % self.capacity
        self._keys[slot] = key
        self._values[slot] = value
        self._bits[slot] = True
        self._slot_of[key] = slot
        return evicted

    def clock_evict(self) -> int:
        """Advances the hand to the victim slot; terminates within two sweeps."""
        for _ in range(2 * self.capacity):
            if not self._bits[self.hand]:
                return self.hand
            self._bits[self.hand] = False
            self.hand = (self.hand + 1) % self.capacity
        return self.hand


class RefreshStrategy(Enum):
    B1 = "b1"
    B2 = "b2"
    O1 = "o1"
    O2 = "o2"

    @property
    def description(self) -> str:
        return {
            RefreshStrategy.B1: "always regenerate",
            RefreshStrategy.B2: "update, regenerate after consecutive update limit",
            RefreshStrategy.O1: "regenerate when every new policy is mergeable",
            RefreshStrategy.O2: "regenerate when half the new policies are mergeable",
        }[self]


class LookupOutcome(Enum):
    HIT = "hit"
    SOFT_HIT = "soft_hit"
    MISS = "miss"


class RefreshKind(Enum):
    REGENERATED = "regenerated"
    UPDATED = "updated"


@dataclass
class CacheEntry:
    key: GeKey
    ge: GuardedPolicyExpression
    deletion_epoch: int
    consecutive_updates: int = 0


@dataclass
class CacheMetrics:
    hits: int = 0
    soft_hits: int = 0
    misses: int = 0
    regenerations: int = 0
    updates: int = 0
    evictions: int = 0

    @property
    def lookups(self) -> int:
        return self.hits + self.soft_hits + self.misses

    def _rate(self, count: int) -> float:
        return count / self.lookups if self.lookups else 0.0

    def to_dict(self) -> dict:
        return {
            "hits": self.hits,
            "soft_hits": self.soft_hits,
            "misses": self.misses,
            "regenerations": self.regenerations,
            "updates": self.updates,
            "evictions": self.evictions,
            "hit_rate": self._rate(self.hits),
            "soft_hit_rate": self._rate(self.soft_hits),
            "miss_rate": self._rate(self.misses),
        }


class CacheLookup(NamedTuple):
    ge: GuardedPolicyExpression
    outcome: LookupOutcome
    refresh: Optional[RefreshKind]
    policies_built: int


def mergeable(ge: GuardedPolicyExpression, new_policies: Sequence[Policy]) -> float:
    """
    Fraction of new policies with a condition contained in an existing guard on the
    same attribute.
    """
    if not new_policies:
        return 0.0
    guards_by_attribute: dict[str, list] = {}
    for guarded in ge.guards:
        guards_by_attribute.setdefault(guarded.guard.attribute, []).append(guarded.guard.interval())
    count = 0
    for policy in new_policies:
        for condition in policy.object_conditions:
            interval = condition.interval()
            if interval is None:
                continue
            if any(g.contains(interval) for g in guards_by_attribute.get(condition.attribute, ())):
                count += 1
                break
    return count / len(new_policies)


class GeCache:
    """
    :var update_limit: B2 regenerates once this many consecutive updates would be reached
    :var regenerate_threshold: mergeable fraction at which O1/O2 regenerate
    """

    def __init__(
        self,
        capacity: int,
        strategy: RefreshStrategy = RefreshStrategy.O1,
        update_limit: int = 10,
        regenerate_threshold: Optional[float] = None,
    ):
        self.strategy = strategy
        self.update_limit = update_limit
        if regenerate_threshold is None:
            regenerate_threshold = 0.5 if strategy is RefreshStrategy.O2 else 1.0
        self.regenerate_threshold = regenerate_threshold
        self.metrics = CacheMetrics()
        self._clock: ClockReplacer[GeKey, CacheEntry] = ClockReplacer(capacity)
        self._lock = threading.RLock()

    @property
    def capacity(self) -> int:
        return self._clock.capacity

    def __len__(self) -> int:
        return len(self._clock)

    def __contains__(self, key: GeKey) -> bool:
        return key in self._clock

    def entry(self, key: GeKey) -> Optional[CacheEntry]:
        return self._clock.peek(key)

    def lookup_or_build(
        self, qm: QueryMetadata, relation: str, store: PolicyStore, builder: Builder
    ) -> GuardedPolicyExpression:
        return self.lookup(qm, relation, store, builder).ge

    def lookup(
        self, qm: QueryMetadata, relation: str, store: PolicyStore, builder: Builder
    ) -> CacheLookup:
        key = GeKey(qm.querier, qm.purpose, relation)
        with self._lock:
            now = store.clock
            epoch = store.deletion_epoch(*key)
            entry = self._clock.get(key)
            if entry is None:
                self.metrics.misses += 1
                policies = store.fetch_policies(*key, since=0)
                ge = builder(key, policies, now)
                if self._clock.put(key, CacheEntry(key, ge, epoch)) is not None:
                    self.metrics.evictions += 1
                return CacheLookup(ge, LookupOutcome.MISS, None, len(policies))

            new_policies = store.fetch_policies(*key, since=entry.ge.built_at)
            if not new_policies and epoch == entry.deletion_epoch:
                self.metrics.hits += 1
                return CacheLookup(entry.ge, LookupOutcome.HIT, None, 0)

            self.metrics.soft_hits += 1
            if epoch != entry.deletion_epoch:
                # removals cannot be appended
                kind = RefreshKind.REGENERATED
            else:
                kind = self.decide(entry, new_policies)
            built_over = self.refresh(entry, new_policies, kind, store, builder, now)
            entry.deletion_epoch = epoch
            return CacheLookup(entry.ge, LookupOutcome.SOFT_HIT, kind, built_over)

    def decide(self, entry: CacheEntry, new_policies: Sequence[Policy]) -> RefreshKind:
        if self.strategy is RefreshStrategy.B1:
            return RefreshKind.REGENERATED
        if self.strategy is RefreshStrategy.B2:
            if entry.consecutive_updates + 1 >= self.update_limit:
                return RefreshKind.REGENERATED
            return RefreshKind.UPDATED
        if mergeable(entry.ge, new_policies) >= self.regenerate_threshold:
            return RefreshKind.REGENERATED
        return RefreshKind.UPDATED

    def refresh(
        self,
        entry: CacheEntry,
        new_policies: Sequence[Policy],
        kind: RefreshKind,
        store: PolicyStore,
        builder: Builder,
        now: int,
    ) -> int:
        """Rebuilds or extends the entry's GE in place; returns the policies built over."""
        if kind is RefreshKind.REGENERATED:
            policies = store.fetch_policies(*entry.key, since=0)
            entry.ge = builder(entry.key, policies, now)
            entry.consecutive_updates = 0
            self.metrics.regenerations += 1
            return len(policies)
        entry.ge = entry.ge.appended(builder(entry.key, new_policies, now), now)
        entry.consecutive_updates += 1
        self.metrics.updates += 1
        return len(new_policies)
