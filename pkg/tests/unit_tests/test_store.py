import json

import pytest

from sieve_fgac.src.sieve.errors import PolicyConflictError, PolicyNotFoundError
from sieve_fgac.src.sieve.policy import GroupDirectory
from sieve_fgac.src.sieve.store import PolicyStore, StoredGuard, StoredGuardedPolicyExpression

from .utils import FACULTY, PURPOSE, STUDENT_QUERIER, eq, make_policy, sample_policies


def stored_ge(querier=FACULTY, partition=(1,)) -> StoredGuardedPolicyExpression:
    return StoredGuardedPolicyExpression(
        id=None,
        querier=querier,
        purpose=PURPOSE,
        relation="wifi",
        guards=(StoredGuard(1, eq("owner", 1), partition),),
    )


def test_clock_ticks_on_inserts_and_deletes():
    store = PolicyStore()
    first = store.insert_policy(make_policy(1))
    second = store.insert_policy(make_policy(2))
    assert (first, second) == (1, 2)
    assert store.get_policy(second).inserted_at == 2
    store.delete_policy(first)
    assert store.clock == 3
    assert len(store) == 1
    assert first not in store


def test_duplicate_and_missing_ids():
    store = PolicyStore()
    store.insert_policy(make_policy(1, policy_id=5))
    with pytest.raises(PolicyConflictError):
        store.insert_policy(make_policy(2, policy_id=5))
    with pytest.raises(PolicyNotFoundError):
        store.delete_policy(99)
    with pytest.raises(PolicyNotFoundError):
        store.get_policy(99)
    # fresh ids continue after explicit ones
    assert store.insert_policy(make_policy(3)) == 6


def test_fetch_policies_merges_groups_and_honours_since(store):
    direct = [p.id for p in store.fetch_policies(FACULTY, PURPOSE, "wifi")]
    assert direct == [1, 2, 3, 4, 5]
    assert [p.id for p in store.fetch_policies(FACULTY, PURPOSE, "wifi", since=3)] == [4, 5]
    assert [p.id for p in store.fetch_policies(STUDENT_QUERIER, PURPOSE, "wifi")] == [6]
    assert store.fetch_policies(FACULTY, "other", "wifi") == []
    assert store.fetch_policies(FACULTY, PURPOSE, "rooms") == []


def test_deletion_epoch_counts_group_deletions(store):
    assert store.deletion_epoch(FACULTY, PURPOSE, "wifi") == 0
    store.delete_policy(5)
    assert store.deletion_epoch(FACULTY, PURPOSE, "wifi") == 1
    assert store.deletion_epoch(STUDENT_QUERIER, PURPOSE, "wifi") == 0


def test_stored_ges_are_marked_outdated(store):
    ge_id = store.store_ge(stored_ge())
    ge = store.fetch_ge(FACULTY, PURPOSE, "wifi")
    assert ge.id == ge_id
    assert ge.inserted_at == store.clock
    assert not ge.outdated
    # a group policy touches every member's expression
    store.insert_policy(make_policy(2, querier="faculty"))
    assert store.fetch_ge(FACULTY, PURPOSE, "wifi").outdated


def test_stored_ge_rejects_overlapping_partitions():
    with pytest.raises(ValueError):
        StoredGuardedPolicyExpression(
            id=None,
            querier=FACULTY,
            purpose=PURPOSE,
            relation="wifi",
            guards=(
                StoredGuard(1, eq("owner", 1), (1, 2)),
                StoredGuard(2, eq("owner", 2), (2,)),
            ),
        )


def test_export_is_ordered_and_import_restores(store, tmp_path, groups):
    store.store_ge(stored_ge())
    store.delete_policy(2)
    path = tmp_path / "export.jsonl"
    assert store.export_jsonl(str(path)) == len(store) + 1

    lines = path.read_text().splitlines()
    records = [json.loads(line) for line in lines]
    assert [r["id"] for r in records[:-1]] == [1, 3, 4, 5, 6]
    assert "ge" in records[-1]
    assert lines[0] == json.dumps(records[0], sort_keys=True, separators=(",", ":"))

    restored = PolicyStore(groups=groups)
    assert restored.import_jsonl(str(path)) == len(records)
    assert restored.all_policies() == store.all_policies()
    assert restored.fetch_ge(FACULTY, PURPOSE, "wifi").guards == stored_ge().guards
    with pytest.raises(PolicyConflictError):
        restored.import_jsonl(str(path))


def test_journal_replays_inserts_deletes_and_ges(tmp_path):
    path = tmp_path / "store.jsonl"
    store = PolicyStore.from_journal(str(path))
    for policy in sample_policies():
        store.insert_policy(policy)
    store.delete_policy(3)
    store.store_ge(stored_ge())

    reopened = PolicyStore.from_journal(str(path), GroupDirectory())
    assert [p.id for p in reopened.all_policies()] == [1, 2, 4, 5, 6]
    assert reopened.clock == store.clock
    assert reopened.fetch_ge(FACULTY, PURPOSE, "wifi") is not None
    assert reopened.deletion_epoch(FACULTY, PURPOSE, "wifi") == 1
