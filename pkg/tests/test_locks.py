"""Lock table and all-or-nothing acquisition protocol."""

import threading
import time

import numpy as np
import pytest

from qnetsim import errors as E
from qnetsim.locks import (
    KIND_QUBIT,
    KIND_REGISTER,
    AcquireResult,
    LockId,
    LockPolicy,
    LockTable,
    acquire_all,
    release_all,
)


def rid(node, n):
    return LockId(node, KIND_REGISTER, n)


def qid(node, n):
    return LockId(node, KIND_QUBIT, n)


class LocalClient:
    """LockClient facade over a single in-process table."""

    def __init__(self, table):
        self.table = table

    def try_acquire(self, txn, lock_id, wait_s):
        return self.table.try_acquire(txn, lock_id, wait_s)

    def release(self, txn, lock_ids):
        for lid in lock_ids:
            self.table.release(txn, lid)


class TestLockId:
    def test_total_order_is_node_kind_id(self):
        ids = [
            rid("b", 1),
            qid("a", 9),
            rid("a", 2),
            rid("a", 1),
            qid("a", 1),
            rid("b", 0),
        ]
        assert sorted(ids) == [
            qid("a", 1),
            qid("a", 9),
            rid("a", 1),
            rid("a", 2),
            rid("b", 0),
            rid("b", 1),
        ]

    def test_hashable_and_equal_by_value(self):
        assert rid("a", 1) == rid("a", 1)
        assert len({rid("a", 1), rid("a", 1), qid("a", 1)}) == 2


class TestLockTable:
    def test_grant_and_release(self):
        table = LockTable()
        assert table.try_acquire("t1", rid("a", 1), wait_s=0.0)
        assert table.holder(rid("a", 1)) == "t1"
        table.release("t1", rid("a", 1))
        assert table.holder(rid("a", 1)) is None

    def test_contended_lock_times_out(self):
        table = LockTable()
        table.try_acquire("t1", rid("a", 1), wait_s=0.0)
        t0 = time.monotonic()
        assert not table.try_acquire("t2", rid("a", 1), wait_s=0.05)
        assert time.monotonic() - t0 >= 0.05
        assert table.metrics.conflicts == 1

    def test_waiter_wakes_on_release(self):
        table = LockTable()
        table.try_acquire("t1", rid("a", 1), wait_s=0.0)
        got = []
        thread = threading.Thread(
            target=lambda: got.append(table.try_acquire("t2", rid("a", 1), 5.0))
        )
        thread.start()
        time.sleep(0.05)
        table.release("t1", rid("a", 1))
        thread.join(timeout=5.0)
        assert got == [True]
        assert table.holder(rid("a", 1)) == "t2"

    def test_waiters_granted_in_arrival_order(self):
        table = LockTable()
        table.try_acquire("t0", rid("a", 1), wait_s=0.0)
        order = []
        order_lock = threading.Lock()

        def waiter(txn):
            assert table.try_acquire(txn, rid("a", 1), 10.0)
            with order_lock:
                order.append(txn)
            table.release(txn, rid("a", 1))

        threads = []
        for txn in ("t1", "t2", "t3"):
            thread = threading.Thread(target=waiter, args=(txn,))
            thread.start()
            threads.append(thread)
            time.sleep(0.05)
        table.release("t0", rid("a", 1))
        for thread in threads:
            thread.join(timeout=10.0)
        assert order == ["t1", "t2", "t3"]

    def test_reacquire_while_holding_is_a_bug(self):
        table = LockTable()
        table.try_acquire("t1", rid("a", 1), wait_s=0.0)
        with pytest.raises(E.InternalError):
            table.try_acquire("t1", rid("a", 1), wait_s=0.0)

    def test_release_of_foreign_lock_is_a_bug(self):
        table = LockTable()
        table.try_acquire("t1", rid("a", 1), wait_s=0.0)
        with pytest.raises(E.InternalError):
            table.release("t2", rid("a", 1))

    def test_release_owned_drops_everything(self):
        table = LockTable()
        for n in range(4):
            table.try_acquire("t1", rid("a", n), wait_s=0.0)
        table.try_acquire("t2", rid("a", 9), wait_s=0.0)
        assert table.release_owned("t1") == 4
        assert table.held_by("t1") == []
        assert table.held_by("t2") == [rid("a", 9)]


class TestAcquireAll:
    def test_acquires_sorted_and_deduplicated(self):
        table = LockTable()
        client = LocalClient(table)
        wanted = [rid("b", 1), qid("a", 3), rid("b", 1), rid("a", 2)]
        result = acquire_all(client, "t1", wanted, np.random.default_rng(0))
        assert result.acquired == [qid("a", 3), rid("a", 2), rid("b", 1)]
        assert table.held_by("t1") == result.acquired
        release_all(client, result)
        assert table.held_by("t1") == []
        assert result.acquired == []

    def test_failure_releases_partial_set(self):
        table = LockTable()
        client = LocalClient(table)
        table.try_acquire("other", rid("b", 1), wait_s=0.0)
        policy = LockPolicy(attempts=2, backoff_s=(0.001, 0.002), wait_s=0.01)
        with pytest.raises(E.LockTimeoutError):
            acquire_all(
                client,
                "t1",
                [rid("a", 1), rid("b", 1)],
                np.random.default_rng(0),
                policy,
            )
        # Nothing may be left behind after giving up.
        assert table.held_by("t1") == []
        assert table.holder(rid("b", 1)) == "other"

    def test_backoff_count_matches_attempts(self):
        table = LockTable()
        client = LocalClient(table)
        table.try_acquire("other", rid("a", 1), wait_s=0.0)
        backoffs = []
        policy = LockPolicy(attempts=3, backoff_s=(0.001, 0.002), wait_s=0.001)
        with pytest.raises(E.LockTimeoutError):
            acquire_all(
                client,
                "t1",
                [rid("a", 1)],
                np.random.default_rng(0),
                policy,
                on_backoff=backoffs.append,
            )
        assert backoffs == [0, 1]

    def test_succeeds_once_contender_releases(self):
        table = LockTable()
        client = LocalClient(table)
        table.try_acquire("other", rid("a", 1), wait_s=0.0)
        threading.Timer(0.05, lambda: table.release("other", rid("a", 1))).start()
        result = acquire_all(
            client,
            "t1",
            [rid("a", 1), rid("a", 2)],
            np.random.default_rng(0),
            LockPolicy(attempts=50, backoff_s=(0.001, 0.005), wait_s=0.5),
        )
        assert result.acquired == [rid("a", 1), rid("a", 2)]

    def test_crossed_order_requests_never_deadlock(self):
        # Two transactions want the same pair in opposite caller order;
        # global LockId ordering must serialize them without help.
        table = LockTable()
        client = LocalClient(table)
        pair = [rid("a", 1), rid("b", 1)]
        policy = LockPolicy(attempts=200, backoff_s=(0.0001, 0.001), wait_s=0.05)
        failures = []

        def worker(txn, wanted):
            rng = np.random.default_rng(hash(txn) % 2**32)
            try:
                for _ in range(50):
                    result = acquire_all(client, txn, wanted, rng, policy)
                    release_all(client, result)
            except E.QnetError as exc:
                failures.append(exc)

        threads = [
            threading.Thread(target=worker, args=("t1", pair)),
            threading.Thread(target=worker, args=("t2", pair[::-1])),
        ]
        for thread in threads:
            thread.start()
        for thread in threads:
            thread.join(timeout=30.0)
            assert not thread.is_alive(), "acquisition workers deadlocked"
        assert failures == []
        assert table.held_by("t1") == [] and table.held_by("t2") == []

    def test_release_all_is_idempotent(self):
        table = LockTable()
        client = LocalClient(table)
        result = acquire_all(client, "t1", [rid("a", 1)], np.random.default_rng(0))
        release_all(client, result)
        release_all(client, result)
        assert table.holder(rid("a", 1)) is None

    def test_empty_lock_set_succeeds(self):
        client = LocalClient(LockTable())
        result = acquire_all(client, "t1", [], np.random.default_rng(0))
        assert result == AcquireResult("t1", [])
