"""
Candidate guard generation: gather index-backed object conditions per attribute and
merge overlapping ranges whenever the merged guard is cheaper than the pair.
"""

import bisect
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

from sieve_fgac.src.sieve.cost_model import CostConstants, SelectivityEstimator, should_merge
from sieve_fgac.src.sieve.policy import (
    INTERVAL_OPERATORS,
    OWNER,
    ObjectCondition,
    Policy,
)
from sieve_fgac.src.sieve.values import Interval


class IndexCatalog:
    """Indexed attributes per relation. ``owner`` is always indexed."""

    def __init__(self, indexes: Optional[Mapping[str, Iterable[str]]] = None):
        self._indexes: dict[str, frozenset] = {}
        for relation, attributes in (indexes or {}).items():
            self.add(relation, attributes)

    def add(self, relation: str, attributes: Iterable[str]) -> None:
        self._indexes[relation] = frozenset(attributes) | {OWNER}

    def attributes(self, relation: str) -> frozenset:
        return self._indexes.get(relation, frozenset({OWNER}))

    def is_indexed(self, relation: str, attribute: str) -> bool:
        return attribute in self.attributes(relation)

    def relations(self) -> list[str]:
        return sorted(self._indexes)

    def to_dict(self) -> dict[str, list[str]]:
        return {r: sorted(a) for r, a in sorted(self._indexes.items())}


@dataclass(frozen=True)
class CandidateGuard:
    """
    :var predicate: the guard condition
    :var covered: ids of the policies this guard filters for
    :var provenance: pairs of predicates merged into this candidate, in merge order
    """

    predicate: ObjectCondition
    covered: frozenset
    provenance: tuple = field(default=(), compare=False)

    @property
    def attribute(self) -> str:
        return self.predicate.attribute

    @property
    def interval(self) -> Interval:
        return self.predicate.interval()

    def sort_key(self) -> tuple:
        interval = self.interval
        return interval.lower_key(), interval.upper_key(), min(self.covered)

    def to_dict(self) -> dict:
        return {
            "guard": self.predicate.to_dict(),
            "sql": self.predicate.to_sql(),
            "covered": sorted(self.covered),
            "merges": len(self.provenance),
        }


def is_guard_eligible(condition: ObjectCondition, relation: str, idx: IndexCatalog) -> bool:
    return (
        not condition.is_derived
        and condition.op in INTERVAL_OPERATORS
        and idx.is_indexed(relation, condition.attribute)
    )


def collect_candidates(
    policies: Iterable[Policy], idx: IndexCatalog
) -> dict[str, list[CandidateGuard]]:
    """
    One candidate per distinct guard-eligible condition, grouped by attribute and
    sorted by left bound (then right bound, then smallest covered policy id).
    """
    covered: dict[ObjectCondition, set] = defaultdict(set)
    for policy in policies:
        for condition in policy.object_conditions:
            if is_guard_eligible(condition, policy.relation, idx):
                covered[condition].add(policy.id)

    by_attribute: dict[str, list[CandidateGuard]] = defaultdict(list)
    for predicate, ids in covered.items():
        by_attribute[predicate.attribute].append(CandidateGuard(predicate, frozenset(ids)))
    for candidates in by_attribute.values():
        candidates.sort(key=CandidateGuard.sort_key)
    return dict(by_attribute)


def merge_pass(
    candidates: Sequence[CandidateGuard], est: SelectivityEstimator, k: CostConstants
) -> list[CandidateGuard]:
    """
    Merges candidates until no pair is worth merging. The first mergeable pair in
    sort order is merged each time; the scan from a candidate stops at its first
    disjoint successor, since every later candidate starts further right.

    After a merge the scan resumes at the earliest candidate that overlaps the
    widened guard, so merges that failed against the narrower guard are retried.
    """
    pending = sorted(candidates, key=CandidateGuard.sort_key)
    keys = [c.sort_key() for c in pending]
    i = 0
    while i < len(pending):
        current = pending[i]
        for j in range(i + 1, len(pending)):
            following = pending[j]
            if not current.interval.intersects(following.interval):
                break
            merged = should_merge(current.predicate, following.predicate, est, k)
            if merged is None:
                continue
            combined = CandidateGuard(
                merged,
                current.covered | following.covered,
                current.provenance
                + following.provenance
                + ((current.predicate, following.predicate),),
            )
            del pending[j], keys[j]
            del pending[i], keys[i]
            key = combined.sort_key()
            position = bisect.bisect_right(keys, key)
            pending.insert(position, combined)
            keys.insert(position, key)
            i = _first_overlapping(pending, combined, min(i, position))
            break
        else:
            i += 1
    return pending


def _first_overlapping(pending: list[CandidateGuard], merged: CandidateGuard, limit: int) -> int:
    interval = merged.interval
    first = limit
    for index in range(limit - 1, -1, -1):
        if pending[index].interval.intersects(interval):
            first = index
    return first


def generate_candidate_set(
    policies: Iterable[Policy],
    idx: IndexCatalog,
    est: SelectivityEstimator,
    k: CostConstants,
) -> list[CandidateGuard]:
    collected = collect_candidates(policies, idx)
    candidates = []
    for attribute in sorted(collected):
        candidates.extend(merge_pass(collected[attribute], est, k))
    return candidates
