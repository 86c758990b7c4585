"""
Greedy guard selection and the guarded policy expression it produces.

Selection is utility-ordered: the candidate with the highest benefit per unit read
cost is adopted first, its partition is removed from every other candidate, and the
affected candidates are re-queued with their new utility. The greedy cover is then
refined against the full guard cost, which the utility alone does not track.
"""

import heapq
from collections import Counter, defaultdict
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Iterable, Mapping, NamedTuple, Optional, Sequence

from sieve_fgac.src.sieve.cost_model import (
    CostConstants,
    ExecMode,
    SelectivityEstimator,
    choose_inline_or_delta,
    cost_eval_partition,
    cost_guarded_expression,
    utility_from_sel,
)
from sieve_fgac.src.sieve.errors import ContractViolation
from sieve_fgac.src.sieve.guard_generation import (
    CandidateGuard,
    IndexCatalog,
    generate_candidate_set,
)
from sieve_fgac.src.sieve.policy import ObjectCondition, Policy, Principal
from sieve_fgac.src.sieve.store import StoredGuard, StoredGuardedPolicyExpression

REFINE_SWEEPS = 32
_EPSILON = 1e-9


class GeKey(NamedTuple):
    querier: Principal
    purpose: str
    relation: str


@dataclass(frozen=True)
class GuardedExpression:
    guard_id: int
    guard: ObjectCondition
    policies: tuple[Policy, ...]
    exec_mode: ExecMode = ExecMode.INLINE

    @property
    def partition(self) -> tuple[int, ...]:
        return tuple(p.id for p in self.policies)

    @cached_property
    def by_owner(self) -> dict[Principal, list[Policy]]:
        grouped = defaultdict(list)
        for policy in self.policies:
            grouped[policy.owner].append(policy)
        return dict(grouped)

    def to_dict(self) -> dict:
        return {
            "guard_id": self.guard_id,
            "guard": self.guard.to_sql(),
            "partition": list(self.partition),
            "exec_mode": self.exec_mode.value,
        }


@dataclass(frozen=True)
class GuardedPolicyExpression:
    """
    :var built_at: store clock at build time
    :var built_over: ids of every policy covered; equals the union of the partitions
    """

    key: GeKey
    guards: tuple[GuardedExpression, ...]
    built_at: int
    built_over: frozenset

    def __post_init__(self):
        object.__setattr__(self, "guards", tuple(self.guards))
        object.__setattr__(self, "built_over", frozenset(self.built_over))
        seen = set()
        for ge in self.guards:
            partition = set(ge.partition)
            if len(partition) != len(ge.partition) or seen & partition:
                raise ContractViolation(
                    f"Guard {ge.guard_id} of {tuple(self.key)} overlaps another partition"
                )
            seen |= partition
        if seen != self.built_over:
            raise ContractViolation(
                f"Partitions of {tuple(self.key)} do not cover exactly the built policy set"
            )

    @property
    def policies(self) -> list[Policy]:
        return [p for ge in self.guards for p in ge.policies]

    @property
    def mean_partition_size(self) -> float:
        return len(self.built_over) / len(self.guards) if self.guards else 0.0

    def guard(self, guard_id: int) -> GuardedExpression:
        for ge in self.guards:
            if ge.guard_id == guard_id:
                return ge
        raise ContractViolation(f"No guard {guard_id} in {tuple(self.key)}")

    def appended(self, other: "GuardedPolicyExpression", built_at: int) -> "GuardedPolicyExpression":
        """Adds the guards of ``other`` (built over new policies only) after ours."""
        next_id = max((ge.guard_id for ge in self.guards), default=0) + 1
        extra = tuple(
            GuardedExpression(next_id + offset, ge.guard, ge.policies, ge.exec_mode)
            for offset, ge in enumerate(other.guards)
        )
        return GuardedPolicyExpression(
            key=self.key,
            guards=self.guards + extra,
            built_at=built_at,
            built_over=self.built_over | other.built_over,
        )

    def to_stored(self) -> StoredGuardedPolicyExpression:
        return StoredGuardedPolicyExpression(
            id=None,
            querier=self.key.querier,
            purpose=self.key.purpose,
            relation=self.key.relation,
            guards=tuple(
                StoredGuard(ge.guard_id, ge.guard, ge.partition, ge.exec_mode.value)
                for ge in self.guards
            ),
            inserted_at=self.built_at,
        )

    @classmethod
    def from_stored(
        cls, stored: StoredGuardedPolicyExpression, policies: Mapping[int, Policy]
    ) -> "GuardedPolicyExpression":
        guards = tuple(
            GuardedExpression(
                g.guard_id,
                g.guard,
                tuple(policies[pid] for pid in g.partition),
                ExecMode(g.exec_mode),
            )
            for g in stored.guards
        )
        return cls(
            key=GeKey(*stored.key),
            guards=guards,
            built_at=stored.inserted_at,
            built_over=stored.policy_ids,
        )

    def to_dict(self) -> dict:
        return {
            "querier": self.key.querier,
            "purpose": self.key.purpose,
            "relation": self.key.relation,
            "built_at": self.built_at,
            "policies": len(self.built_over),
            "guards": [ge.to_dict() for ge in self.guards],
        }


def _policy_order(policy: Policy) -> tuple:
    return policy.inserted_at, policy.id


def _guard_cost(sel: float, size: int, k: CostConstants) -> float:
    if size == 0:
        return 0.0
    return sel * (k.c_r + cost_eval_partition(size, k))


def _lazy_greedy(
    remaining: list[set],
    candidates_of: Mapping[int, list[int]],
    priority: Callable[[int, set], tuple],
) -> list[tuple[int, set]]:
    """
    Repeatedly adopts the candidate with the smallest ``priority`` and subtracts its
    partition from every other candidate. Stale heap entries are skipped through
    per-candidate version counters.
    """
    remaining = [set(covered) for covered in remaining]
    versions = [0] * len(remaining)
    heap = [priority(i, remaining[i]) + (i, 0) for i, covered in enumerate(remaining) if covered]
    heapq.heapify(heap)
    chosen: list[tuple[int, set]] = []
    while heap:
        *_, i, version = heapq.heappop(heap)
        if version != versions[i] or not remaining[i]:
            continue
        partition = remaining[i]
        remaining[i] = set()
        chosen.append((i, partition))
        affected = {j for pid in partition for j in candidates_of[pid] if remaining[j]}
        for j in sorted(affected):
            remaining[j] -= partition
            versions[j] += 1
            if remaining[j]:
                heapq.heappush(heap, priority(j, remaining[j]) + (j, versions[j]))
    return chosen


class _Cover:
    """A policy → candidate assignment, with the members of every candidate."""

    def __init__(self, chosen: Sequence[tuple[int, set]], sels: Sequence[float], k: CostConstants):
        self.sels = sels
        self.k = k
        self.order = [i for i, _ in chosen]
        self.owner_of = {pid: i for i, partition in chosen for pid in partition}
        self.members: dict[int, set] = defaultdict(set)
        for pid, i in self.owner_of.items():
            self.members[i].add(pid)

    def cost(self, i: int, size: Optional[int] = None) -> float:
        return _guard_cost(self.sels[i], len(self.members[i]) if size is None else size, self.k)

    @property
    def total(self) -> float:
        return sum(self.cost(i) for i in self.members)

    def shift(self, i: int, by: int) -> float:
        return self.cost(i, len(self.members[i]) + by) - self.cost(i)

    def move(self, pids: Iterable[int], target: int) -> None:
        if not self.members[target]:
            if target in self.order:
                self.order.remove(target)
            self.order.append(target)
        for pid in pids:
            self.members[self.owner_of[pid]].discard(pid)
            self.members[target].add(pid)
            self.owner_of[pid] = target

    def partitions(self) -> list[tuple[int, set]]:
        return [(i, set(self.members[i])) for i in self.order if self.members[i]]


def _refine(
    cover: _Cover, remaining: Sequence[set], candidates_of: Mapping[int, list[int]], sweeps: int
) -> _Cover:
    """
    Local search over the assignment: a candidate may take over every policy it
    covers, a guard may hand all its policies to other guards, and single policies
    may move to a cheaper guard. Each applied move strictly lowers the total cost.
    """
    for _ in range(sweeps):
        improved = False
        for g, covered in enumerate(remaining):
            movers = [pid for pid in sorted(covered) if cover.owner_of[pid] != g]
            if not movers:
                continue
            leaving = Counter(cover.owner_of[pid] for pid in movers)
            delta = cover.shift(g, len(movers))
            delta += sum(cover.shift(h, -n) for h, n in leaving.items())
            if delta < -_EPSILON:
                cover.move(movers, g)
                improved = True

        for g in list(cover.order):
            members = sorted(cover.members[g])
            if not members:
                continue
            targets = {}
            for pid in members:
                options = [h for h in candidates_of[pid] if h != g]
                if not options:
                    break
                targets[pid] = min(options, key=lambda h: (cover.shift(h, 1), h))
            else:
                arriving = Counter(targets.values())
                delta = -cover.cost(g) + sum(cover.shift(h, n) for h, n in arriving.items())
                if delta < -_EPSILON:
                    for h, n in sorted(arriving.items()):
                        cover.move([pid for pid in members if targets[pid] == h], h)
                    improved = True

        for pid in sorted(cover.owner_of):
            current = cover.owner_of[pid]
            release = cover.shift(current, -1)
            best, best_delta = None, -_EPSILON
            for h in candidates_of[pid]:
                if h == current:
                    continue
                delta = release + cover.shift(h, 1)
                if delta < best_delta:
                    best, best_delta = h, delta
            if best is not None:
                cover.move([pid], best)
                improved = True
        if not improved:
            break
    return cover


def select_guards(
    cands: Sequence[CandidateGuard],
    policies: Iterable[Policy],
    k: CostConstants,
    est: SelectivityEstimator,
    key: Optional[GeKey] = None,
    built_at: int = 0,
    sweeps: int = REFINE_SWEEPS,
) -> GuardedPolicyExpression:
    """
    Picks a subset of candidates whose shrunken partitions cover every policy
    exactly once.

    The utility-ordered greedy runs first; ties on utility go to the smaller
    selectivity, then to the guard's SQL text. A cost-per-policy greedy and the
    cheapest guard of every single policy give two more starting covers. Each start
    is refined by local search and the cheapest result wins, the utility start on
    ties. Guards keep the order in which their start adopted them.

    :raises ContractViolation: when a policy is covered by no candidate
    """
    by_id = {p.id: p for p in policies}
    remaining = [set(c.covered) & by_id.keys() for c in cands]
    uncovered = set(by_id)
    for covered in remaining:
        uncovered -= covered
    if uncovered:
        raise ContractViolation(
            f"Policies {sorted(uncovered)[:10]} are not covered by any candidate guard"
        )

    sels = [est.estimate_cardinality(c.predicate) for c in cands]
    identities = [c.predicate.to_sql() for c in cands]
    candidates_of = defaultdict(list)
    for i, covered in enumerate(remaining):
        for pid in covered:
            candidates_of[pid].append(i)

    def by_utility(i: int, partition: set) -> tuple:
        utility = utility_from_sel(sels[i], len(partition), est.row_count, k)
        return -utility, sels[i], identities[i]

    def by_cost_per_policy(i: int, partition: set) -> tuple:
        return _guard_cost(sels[i], len(partition), k) / len(partition), sels[i], identities[i]

    singles = defaultdict(set)
    for pid in sorted(by_id):
        cheapest = min(
            candidates_of[pid], key=lambda i: (_guard_cost(sels[i], 1, k), identities[i], i)
        )
        singles[cheapest].add(pid)

    starts = [
        _lazy_greedy(remaining, candidates_of, by_utility),
        _lazy_greedy(remaining, candidates_of, by_cost_per_policy),
        list(singles.items()),
    ]
    best = None
    for chosen in starts:
        cover = _refine(_Cover(chosen, sels, k), remaining, candidates_of, sweeps)
        if best is None or cover.total < best.total - _EPSILON:
            best = cover
    guards = []
    for guard_id, (i, partition) in enumerate(best.partitions(), start=1):
        members = tuple(sorted((by_id[pid] for pid in partition), key=_policy_order))
        guards.append(
            GuardedExpression(
                guard_id,
                cands[i].predicate,
                members,
                choose_inline_or_delta(len(members), k),
            )
        )
    return GuardedPolicyExpression(
        key=key or GeKey("", "", ""),
        guards=tuple(guards),
        built_at=built_at,
        built_over=frozenset(by_id),
    )


def build_guarded_expression(
    key: GeKey,
    policies: Sequence[Policy],
    idx: IndexCatalog,
    est: SelectivityEstimator,
    k: CostConstants,
    built_at: int,
) -> GuardedPolicyExpression:
    if not policies:
        return GuardedPolicyExpression(key, (), built_at, frozenset())
    candidates = generate_candidate_set(policies, idx, est, k)
    return select_guards(candidates, policies, k, est, key=key, built_at=built_at)


def ge_total_cost(
    ge: GuardedPolicyExpression, est: SelectivityEstimator, k: CostConstants
) -> float:
    return sum(
        cost_guarded_expression(g.guard, len(g.policies), est, k) for g in ge.guards
    )
