"""Two-class lock manager for cross-node register transactions.

Register locks serialize every operation touching a register's state;
qubit locks pin the two operand qubits of a merge. Lock ids order
totally by (node, kind, id) and transactions acquire their whole set in
that order, so lock-order cycles cannot form. Conflicts that waiting
cannot clear (a holder re-resolving, a stale id) fall back to releasing
everything and retrying after a uniform random backoff; between
attempts a transaction holds nothing.
"""

from __future__ import annotations

import threading
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np

from .errors import InternalError, LockTimeoutError

KIND_REGISTER = "register"
KIND_QUBIT = "qubit"

DEFAULT_ATTEMPTS = 50
DEFAULT_BACKOFF_S = (0.010, 0.100)
DEFAULT_WAIT_S = 1.0


@dataclass(frozen=True, order=True)
class LockId:
    """Globally ordered lock name: (node, kind, id)."""

    node: str
    kind: str
    id: int


@dataclass
class LockMetrics:
    acquisitions: int = 0
    conflicts: int = 0
    backoffs: int = 0

    def snapshot(self) -> dict[str, int]:
        return {
            "lock_acquisitions": self.acquisitions,
            "lock_conflicts": self.conflicts,
            "lock_backoffs": self.backoffs,
        }


class LockTable:
    """Per-node lock state with FIFO waiter wakeup."""

    def __init__(self) -> None:
        self._held: dict[LockId, str] = {}
        self._waiters: dict[LockId, deque[str]] = {}
        self._cond = threading.Condition()
        self.metrics = LockMetrics()

    def try_acquire(self, txn: str, lock_id: LockId, wait_s: float) -> bool:
        """Grant the lock to txn, waiting up to wait_s for the holder.

        Grants respect waiter arrival order. Returns False on timeout.
        Re-acquiring a lock the transaction already holds is a bug.
        """
        deadline = time.monotonic() + wait_s
        with self._cond:
            if self._held.get(lock_id) == txn:
                raise InternalError(f"{txn} re-acquired {lock_id} while holding it")
            queue = self._waiters.setdefault(lock_id, deque())
            queue.append(txn)
            try:
                while True:
                    if lock_id not in self._held and queue[0] == txn:
                        queue.popleft()
                        self._held[lock_id] = txn
                        self.metrics.acquisitions += 1
                        return True
                    remaining = deadline - time.monotonic()
                    if remaining <= 0:
                        self.metrics.conflicts += 1
                        return False
                    self._cond.wait(remaining)
            finally:
                if queue and txn in queue:
                    queue.remove(txn)
                if not queue:
                    self._waiters.pop(lock_id, None)

    def release(self, txn: str, lock_id: LockId) -> None:
        with self._cond:
            holder = self._held.get(lock_id)
            if holder != txn:
                raise InternalError(
                    f"{txn} released {lock_id} held by {holder!r}"
                )
            del self._held[lock_id]
            self._cond.notify_all()

    def release_owned(self, txn: str) -> int:
        """Drop every lock txn holds; returns how many were held."""
        with self._cond:
            owned = [lid for lid, t in self._held.items() if t == txn]
            for lid in owned:
                del self._held[lid]
            if owned:
                self._cond.notify_all()
            return len(owned)

    def holder(self, lock_id: LockId) -> str | None:
        with self._cond:
            return self._held.get(lock_id)

    def held_by(self, txn: str) -> list[LockId]:
        with self._cond:
            return sorted(lid for lid, t in self._held.items() if t == txn)


class LockClient(Protocol):
    """Routes lock calls to the local table or a remote node."""

    def try_acquire(self, txn: str, lock_id: LockId, wait_s: float) -> bool: ...

    def release(self, txn: str, lock_ids: Sequence[LockId]) -> None: ...


@dataclass
class LockPolicy:
    attempts: int = DEFAULT_ATTEMPTS
    backoff_s: tuple[float, float] = DEFAULT_BACKOFF_S
    wait_s: float = DEFAULT_WAIT_S


@dataclass
class AcquireResult:
    """Held lock set plus the acquisition order (for order auditing)."""

    txn: str
    acquired: list[LockId] = field(default_factory=list)


def acquire_all(
    client: LockClient,
    txn: str,
    lock_ids: Sequence[LockId],
    rng: np.random.Generator,
    policy: LockPolicy | None = None,
    on_backoff: Callable[[int], None] | None = None,
) -> AcquireResult:
    """All-or-nothing acquisition of the deduplicated, ordered lock set.

    Each attempt walks the set in LockId order; the first refusal
    releases everything acquired so far, then the transaction sleeps a
    uniform random backoff and retries. Raises LockTimeoutError once
    the attempt budget is exhausted.
    """
    policy = policy or LockPolicy()
    ordered = sorted(set(lock_ids))
    result = AcquireResult(txn)
    for attempt in range(policy.attempts):
        acquired: list[LockId] = []
        ok = True
        for lid in ordered:
            if client.try_acquire(txn, lid, policy.wait_s):
                acquired.append(lid)
            else:
                ok = False
                break
        if ok:
            result.acquired = acquired
            return result
        if acquired:
            client.release(txn, list(reversed(acquired)))
        if attempt == policy.attempts - 1:
            break
        low, high = policy.backoff_s
        time.sleep(rng.uniform(low, high))
        if on_backoff is not None:
            on_backoff(attempt)
    raise LockTimeoutError(
        f"{txn} gave up on {ordered} after {policy.attempts} attempts"
    )


def release_all(client: LockClient, result: AcquireResult) -> None:
    if result.acquired:
        client.release(result.txn, list(reversed(result.acquired)))
        result.acquired = []
