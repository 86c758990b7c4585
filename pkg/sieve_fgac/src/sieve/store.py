"""
Policy and guarded-expression storage with freshness tracking.

Timestamps come from a store-wide logical clock that ticks on every insert and
delete. Policies are indexed per (querier, purpose, relation) in insertion order, so
``fetch_policies(..., since=t)`` is a bisect plus a k-way merge over the querier and
its groups.
"""

import heapq
import json
import os
import threading
from bisect import bisect_right
from collections import Counter, defaultdict
from dataclasses import dataclass, replace
from typing import Any, Iterable, Iterator, Mapping, Optional

from sieve_fgac.src.sieve.errors import (
    ContractViolation,
    PolicyConflictError,
    PolicyNotFoundError,
)
from sieve_fgac.src.sieve.policy import (
    EMPTY_GROUPS,
    GroupDirectory,
    ObjectCondition,
    Policy,
    Principal,
    principals_for,
)


@dataclass(frozen=True)
class StoredGuard:
    guard_id: int
    guard: ObjectCondition
    partition: tuple[int, ...]
    exec_mode: str = "inline"

    def to_dict(self) -> dict:
        return {
            "guard_id": self.guard_id,
            "guard": self.guard.to_dict(),
            "partition": list(self.partition),
            "exec_mode": self.exec_mode,
        }

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "StoredGuard":
        return cls(
            guard_id=raw["guard_id"],
            guard=ObjectCondition.from_dict(raw["guard"]),
            partition=tuple(raw["partition"]),
            exec_mode=raw.get("exec_mode", "inline"),
        )


@dataclass(frozen=True)
class StoredGuardedPolicyExpression:
    id: Optional[int]
    querier: Principal
    purpose: str
    relation: str
    guards: tuple[StoredGuard, ...]
    outdated: bool = False
    inserted_at: int = 0

    def __post_init__(self):
        object.__setattr__(self, "guards", tuple(self.guards))
        seen = set()
        for stored in self.guards:
            overlap = seen.intersection(stored.partition)
            if overlap or len(set(stored.partition)) != len(stored.partition):
                raise ContractViolation(
                    f"Guard partitions of ({self.querier}, {self.purpose}, {self.relation}) "
                    f"are not disjoint: {sorted(overlap) or list(stored.partition)}"
                )
            seen.update(stored.partition)

    @property
    def key(self) -> tuple:
        return self.querier, self.purpose, self.relation

    @property
    def policy_ids(self) -> frozenset:
        return frozenset(pid for g in self.guards for pid in g.partition)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "querier": self.querier,
            "purpose": self.purpose,
            "relation": self.relation,
            "outdated": self.outdated,
            "inserted_at": self.inserted_at,
            "guards": [g.to_dict() for g in self.guards],
        }

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "StoredGuardedPolicyExpression":
        return cls(
            id=raw.get("id"),
            querier=raw["querier"],
            purpose=raw["purpose"],
            relation=raw["relation"],
            guards=tuple(StoredGuard.from_dict(g) for g in raw["guards"]),
            outdated=raw.get("outdated", False),
            inserted_at=raw.get("inserted_at", 0),
        )


def _dump_line(record: dict) -> str:
    return json.dumps(record, sort_keys=True, separators=(",", ":"))


class _KeyedPolicies:
    """Policies of one (principal, purpose, relation), kept in inserted_at order."""

    __slots__ = ("timestamps", "policies")

    def __init__(self):
        self.timestamps: list[int] = []
        self.policies: list[Policy] = []

    def add(self, policy: Policy):
        position = bisect_right(self.timestamps, policy.inserted_at)
        self.timestamps.insert(position, policy.inserted_at)
        self.policies.insert(position, policy)

    def remove(self, policy: Policy):
        position = bisect_right(self.timestamps, policy.inserted_at) - 1
        while position >= 0 and self.timestamps[position] == policy.inserted_at:
            if self.policies[position].id == policy.id:
                del self.timestamps[position]
                del self.policies[position]
                return
            position -= 1

    def since(self, since: int) -> list[Policy]:
        return self.policies[bisect_right(self.timestamps, since) :]


class PolicyStore:
    """
    :var clock: current logical timestamp; the first insert gets timestamp 1
    :var groups: group directory used for fetches and invalidation
    """

    def __init__(
        self, groups: GroupDirectory = EMPTY_GROUPS, journal_path: Optional[str] = None
    ):
        self.groups = groups
        self.journal_path = os.path.expanduser(journal_path) if journal_path else None
        self.clock = 0
        self._next_id = 1
        self._next_ge_id = 1
        self._policies: dict[int, Policy] = {}
        self._keyed: dict[tuple, _KeyedPolicies] = defaultdict(_KeyedPolicies)
        self._deletion_epochs: Counter = Counter()
        self._ges: dict[tuple, StoredGuardedPolicyExpression] = {}
        self._lock = threading.RLock()

    def __len__(self) -> int:
        return len(self._policies)

    def __contains__(self, policy_id: int) -> bool:
        return policy_id in self._policies

    # writers

    def insert_policy(self, policy: Policy) -> int:
        with self._lock:
            stamped = self._stamp(policy)
            self._add(stamped)
            self._journal(stamped.to_dict())
            return stamped.id

    def delete_policy(self, policy_id: int) -> None:
        with self._lock:
            policy = self._remove(policy_id)
            self._journal({"delete": policy.id})

    def store_ge(self, ge: StoredGuardedPolicyExpression) -> int:
        with self._lock:
            stored = self._place_ge(replace(ge, outdated=False, inserted_at=self.clock))
            self._journal({"ge": stored.to_dict()})
            return stored.id

    # readers

    def get_policy(self, policy_id: int) -> Policy:
        try:
            return self._policies[policy_id]
        except KeyError:
            raise PolicyNotFoundError(f"No policy with id {policy_id}")

    def all_policies(self) -> list[Policy]:
        return sorted(self._policies.values(), key=lambda p: (p.inserted_at, p.id))

    def queriers(self) -> set[Principal]:
        return {p.querier for p in self._policies.values()}

    def fetch_policies(
        self, querier: Principal, purpose: str, relation: str, since: int = 0
    ) -> list[Policy]:
        """
        Policies governing (querier, purpose, relation), directly or through one of
        the querier's groups, inserted strictly after ``since``.
        """
        with self._lock:
            runs = [
                self._keyed[(principal, purpose, relation)].since(since)
                for principal in principals_for(querier, self.groups)
                if (principal, purpose, relation) in self._keyed
            ]
        return list(heapq.merge(*runs, key=lambda p: (p.inserted_at, p.id)))

    def deletion_epoch(self, querier: Principal, purpose: str, relation: str) -> int:
        with self._lock:
            return sum(
                self._deletion_epochs[(principal, purpose, relation)]
                for principal in principals_for(querier, self.groups)
            )

    def fetch_ge(
        self, querier: Principal, purpose: str, relation: str
    ) -> Optional[StoredGuardedPolicyExpression]:
        return self._ges.get((querier, purpose, relation))

    # journal

    def export_jsonl(self, path: str) -> int:
        """Writes live policies then stored GEs; returns the number of lines written."""
        with self._lock:
            lines = [_dump_line(p.to_dict()) for p in self.all_policies()]
            lines += [
                _dump_line({"ge": ge.to_dict()})
                for ge in sorted(self._ges.values(), key=lambda g: g.id)
            ]
        with open(os.path.expanduser(path), "w") as f:
            for line in lines:
                f.write(line + "\n")
        return len(lines)

    def import_jsonl(self, path: str) -> int:
        """Replays a journal or export file, keeping recorded ids and timestamps."""
        count = 0
        with self._lock:
            for record in read_journal(path):
                self._apply(record)
                count += 1
        return count

    def replay(self, records: Iterable[dict]) -> None:
        with self._lock:
            for record in records:
                self._apply(record)

    # internals

    def _stamp(self, policy: Policy) -> Policy:
        policy_id = policy.id
        if policy_id is None:
            policy_id = self._next_id
        elif policy_id in self._policies:
            raise PolicyConflictError(f"A policy with id {policy_id} already exists")
        self.clock += 1
        return policy.with_identity(policy_id, self.clock)

    def _add(self, policy: Policy) -> None:
        self._policies[policy.id] = policy
        self._next_id = max(self._next_id, policy.id + 1)
        self._keyed[(policy.querier, policy.purpose, policy.relation)].add(policy)
        self._mark_outdated(policy)

    def _remove(self, policy_id: int) -> Policy:
        try:
            policy = self._policies.pop(policy_id)
        except KeyError:
            raise PolicyNotFoundError(f"No policy with id {policy_id}")
        self._keyed[(policy.querier, policy.purpose, policy.relation)].remove(policy)
        self.clock += 1
        self._deletion_epochs[(policy.querier, policy.purpose, policy.relation)] += 1
        self._mark_outdated(policy)
        return policy

    def _place_ge(self, ge: StoredGuardedPolicyExpression) -> StoredGuardedPolicyExpression:
        if ge.id is None:
            ge = replace(ge, id=self._next_ge_id)
        self._next_ge_id = max(self._next_ge_id, ge.id + 1)
        self._ges[ge.key] = ge
        return ge

    def _mark_outdated(self, policy: Policy) -> None:
        affected = {policy.querier} | self.groups.members_of(policy.querier)
        for querier in affected:
            key = (querier, policy.purpose, policy.relation)
            ge = self._ges.get(key)
            if ge is not None and not ge.outdated:
                self._ges[key] = replace(ge, outdated=True)

    def _apply(self, record: dict) -> None:
        if "delete" in record:
            self._remove(record["delete"])
        elif "ge" in record:
            self._place_ge(StoredGuardedPolicyExpression.from_dict(record["ge"]))
        else:
            policy = Policy.from_dict(record)
            if policy.id is None or not policy.inserted_at:
                policy = self._stamp(policy)
            elif policy.id in self._policies:
                raise PolicyConflictError(f"A policy with id {policy.id} already exists")
            else:
                self.clock = max(self.clock, policy.inserted_at)
            self._add(policy)

    def _journal(self, record: dict) -> None:
        if self.journal_path is None:
            return
        with open(self.journal_path, "a") as f:
            f.write(_dump_line(record) + "\n")

    @classmethod
    def from_journal(
        cls, path: str, groups: GroupDirectory = EMPTY_GROUPS
    ) -> "PolicyStore":
        """Rebuilds a store from its journal and keeps appending to it."""
        store = cls(groups=groups)
        if os.path.exists(os.path.expanduser(path)):
            store.import_jsonl(path)
        store.journal_path = os.path.expanduser(path)
        return store


def read_journal(path: str) -> Iterator[dict]:
    with open(os.path.expanduser(path)) as f:
        for number, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as e:
                raise ContractViolation(f"{path}:{number}: invalid JSON ({e})") from e
