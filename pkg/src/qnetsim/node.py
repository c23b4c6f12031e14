"""Per-node simulation state and the operations applications drive.

Each node tracks two kinds of qubit:

* VirtualQubit: what an application holds. Owned by exactly one app on
  exactly one node; transferable between nodes without touching state.
* SimulatedQubit: a (register, position) slot in some node's engine.
  Never migrates on its own, only when its whole register is absorbed
  by a merge.

Every active simulated qubit is referenced by exactly one virtual qubit
network-wide, and each virtual qubit records where its simulated qubit
lives. Two-qubit gates between different registers trigger a merge
hosted wherever the control qubit is simulated: the target's register
is locked, serialized, shipped over, and absorbed, and every node
holding a virtual qubit of a shipped slot gets a remap push inside the
same transaction. Old slot ids keep forwarding tombstones so requests
racing the merge are redirected rather than lost.

Locking: every register operation runs under that register's lock; a
merge additionally pins its two operand qubits with qubit locks. Locks
are acquired in global (node, kind, id) order with randomized backoff,
and nothing is held between attempts.
"""

from __future__ import annotations

import json
import logging
import threading
import time
import zlib
from collections import deque
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from . import errors as E
from .engine import Gate, RegisterEngine, StateVectorEngine, gate_from_command
from .locks import (
    KIND_QUBIT,
    KIND_REGISTER,
    AcquireResult,
    LockId,
    LockPolicy,
    LockTable,
    acquire_all,
    release_all,
)
from .netconf import NodeDirectory
from .peerlink import codec as pc
from .peerlink.transport import (
    PeerOpError,
    PeerServer,
    raise_from_status,
)

log = logging.getLogger("qnetsim.node")

MAX_VIRT_ID = 0xFFFF
ROUTE_HOPS = 8


@dataclass
class NodeLimits:
    max_qubits: int = 4096
    max_register_qubits: int = 20
    recv_queue_size: int = 64
    recv_timeout_s: float = 30.0
    rpc_timeout_s: float = 30.0
    lock_attempts: int = 50
    lock_backoff_s: tuple[float, float] = (0.010, 0.100)
    lock_wait_s: float = 1.0
    peer_window_s: float = 10.0
    peer_retry_interval_s: float = 0.25


@dataclass
class VirtualQubit:
    virt_id: int
    owner_app_id: int
    sim_host: str
    sim_id: int


@dataclass
class SimulatedQubit:
    sim_id: int
    register_ref: int
    position: int
    created_at: int
    holder: pc.QubitHolder


@dataclass(frozen=True)
class EntanglementId:
    node_a: str
    node_b: str
    sequence: int
    created_at: int


@dataclass
class _Tombstone:
    new_host: str
    new_sim: int


class _AppQueues:
    """Bounded delivery queues for one application id."""

    def __init__(self, cap: int):
        self.cap = cap
        self.recv: deque = deque()
        self.epr: deque = deque()
        self.cond = threading.Condition()


@dataclass
class NodeMetrics:
    qubits_created: int = 0
    peak_register_qubits: int = 0
    merges_local: int = 0
    merges_pulled: int = 0
    remote_ops: int = 0


class VirtualNode:
    """One simulation server: engine, qubit tables, locks, peer links."""

    def __init__(
        self,
        name: str,
        directory: NodeDirectory,
        seed: int | None = None,
        limits: NodeLimits | None = None,
        engine: RegisterEngine | None = None,
    ):
        if name not in directory:
            raise E.ConfigError(f"node {name!r} is not in the directory")
        self.name = name
        self.directory = directory
        self.limits = limits or NodeLimits()
        self.engine = engine or StateVectorEngine(self.limits.max_register_qubits)
        self.lock_table = LockTable()
        self.metrics = NodeMetrics()

        self._mutex = threading.RLock()
        self._registers: dict[int, object] = {}
        self._members: dict[int, set[int]] = {}
        self._sims: dict[int, SimulatedQubit] = {}
        self._virts: dict[int, VirtualQubit] = {}
        self._tombstones: dict[int, _Tombstone] = {}
        self._released: set[int] = set()
        self._queues: dict[int, _AppQueues] = {}
        self._next_virt = 1
        self._next_sim = 1
        self._next_txn = 1
        self._ent_seq: dict[str, int] = {}

        name_salt = zlib.crc32(name.encode("utf-8"))
        if seed is None:
            self._measure_rng = np.random.default_rng()
            self._backoff_rng = np.random.default_rng()
        else:
            self._measure_rng = np.random.default_rng([seed, name_salt])
            self._backoff_rng = np.random.default_rng([seed, name_salt, 1])
        self._rng_lock = threading.Lock()

        self._lock_policy = LockPolicy(
            attempts=self.limits.lock_attempts,
            backoff_s=self.limits.lock_backoff_s,
            wait_s=self.limits.lock_wait_s,
        )
        self._lock_client = _NodeLockClient(self)
        self._server: PeerServer | None = None

    # ------------------------------------------------------------------
    # lifecycle

    def start(self) -> None:
        entry = self.directory.get(self.name)
        self._server = PeerServer(
            self.name, entry.host, entry.backend_port, self._dispatch_peer
        )
        self._server.start()

    def connect_peers(self, window_s: float | None = None) -> None:
        """Dial lexicographically greater peers, wait for the rest."""
        if self._server is None:
            raise E.InternalError("start() must run before connect_peers()")
        window = window_s if window_s is not None else self.limits.peer_window_s
        others = [n for n in self.directory.names() if n != self.name]
        for peer in others:
            if self.name < peer:
                entry = self.directory.get(peer)
                self._server.dial(
                    peer, entry.host, entry.backend_port,
                    window_s=window,
                    interval_s=self.limits.peer_retry_interval_s,
                )
        deadline = time.monotonic() + window
        while True:
            missing = set(others) - set(self._server.connected_peers())
            if not missing:
                return
            if time.monotonic() > deadline:
                raise ConnectionError(
                    f"{self.name}: peers never connected: {sorted(missing)}"
                )
            time.sleep(0.02)

    def stop(self) -> None:
        if self._server is not None:
            self._server.stop()

    # ------------------------------------------------------------------
    # small helpers

    def _now_ms(self) -> int:
        return int(time.time() * 1000)

    def _draw(self) -> np.random.Generator:
        return self._measure_rng

    def _new_txn(self) -> str:
        with self._mutex:
            txn = f"{self.name}:{self._next_txn}"
            self._next_txn += 1
            return txn

    def _alloc_virt(self) -> int:
        if self._next_virt > MAX_VIRT_ID:
            raise E.ResourceError("virtual qubit ids exhausted (16-bit space)")
        virt = self._next_virt
        self._next_virt += 1
        return virt

    def _alloc_sim(self) -> int:
        sim = self._next_sim
        self._next_sim += 1
        return sim

    def _app_queues(self, app_id: int) -> _AppQueues:
        with self._mutex:
            q = self._queues.get(app_id)
            if q is None:
                q = _AppQueues(self.limits.recv_queue_size)
                self._queues[app_id] = q
            return q

    def _resolve_virt(self, app_id: int, virt_id: int) -> VirtualQubit:
        with self._mutex:
            vq = self._virts.get(virt_id)
            if vq is None:
                if virt_id in self._released:
                    raise E.ExpiredQubitError(f"qubit {virt_id} was released")
                raise E.UnknownQubitError(f"no qubit {virt_id} at {self.name}")
            if vq.owner_app_id != app_id:
                raise E.DeniedError(
                    f"qubit {virt_id} belongs to app {vq.owner_app_id}"
                )
            return vq

    def _local_sim_or_moved(self, sim_id: int) -> SimulatedQubit:
        """Caller must hold the mutex."""
        sq = self._sims.get(sim_id)
        if sq is not None:
            return sq
        tomb = self._tombstones.get(sim_id)
        if tomb is not None:
            raise E.MovedError(tomb.new_host, tomb.new_sim)
        raise E.UnknownQubitError(f"no simulated qubit {sim_id} at {self.name}")

    def _learn_move(self, virt_id: int, old_host: str, old_sim: int,
                    new_host: str, new_sim: int) -> None:
        with self._mutex:
            vq = self._virts.get(virt_id)
            if vq is not None and vq.sim_host == old_host and vq.sim_id == old_sim:
                vq.sim_host = new_host
                vq.sim_id = new_sim

    def _rpc(self, host: str, req, timeout: float | None = None):
        if self._server is None:
            raise E.InternalError("node is not started")
        conn = self._server.get(host, timeout=self.limits.peer_window_s)
        self.metrics.remote_ops += 1
        try:
            return conn.request(req, timeout or self.limits.rpc_timeout_s)
        except PeerOpError as exc:
            raise_from_status(exc)

    def _bump_watermark(self, qubits: int) -> None:
        if qubits > self.metrics.peak_register_qubits:
            self.metrics.peak_register_qubits = qubits

    # ------------------------------------------------------------------
    # local register transactions

    def _acquire(self, txn: str, lock_ids) -> AcquireResult:
        return acquire_all(
            self._lock_client, txn, lock_ids, self._backoff_rng, self._lock_policy
        )

    def _with_local_register(self, sim_id: int, fn):
        """Run fn(reg, sq) under the register's lock, following renames.

        fn runs without the mutex but with the register lock held, so
        engine state and qubit positions are stable inside it.
        """
        for _ in range(ROUTE_HOPS):
            with self._mutex:
                sq = self._local_sim_or_moved(sim_id)
                reg_id = sq.register_ref
            txn = self._new_txn()
            held = self._acquire(txn, [LockId(self.name, KIND_REGISTER, reg_id)])
            try:
                with self._mutex:
                    sq = self._sims.get(sim_id)
                    if sq is None:
                        self._local_sim_or_moved(sim_id)  # raises Moved/Unknown
                    if sq.register_ref != reg_id:
                        continue  # register merged away while we waited
                    reg = self._registers[reg_id]
                return fn(reg, sq)
            finally:
                release_all(self._lock_client, held)
        raise E.InternalError("register resolution did not settle")

    def _require_lock(self, txn: str, lock_id: LockId) -> None:
        if self.lock_table.holder(lock_id) != txn:
            raise E.ProtocolError(
                f"{txn} operated on {lock_id} without holding its lock"
            )

    def _demolish_slot(self, reg, sq: SimulatedQubit) -> None:
        """Table cleanup after the engine dropped sq's position."""
        with self._mutex:
            reg_id = sq.register_ref
            pos = sq.position
            group = self._members.get(reg_id, set())
            group.discard(sq.sim_id)
            self._sims.pop(sq.sim_id, None)
            for other_id in group:
                other = self._sims[other_id]
                if other.position > pos:
                    other.position -= 1
            if reg.num_qubits == 0:
                self._registers.pop(reg_id, None)
                self._members.pop(reg_id, None)

    # ------------------------------------------------------------------
    # app-facing operations

    def create_qubit(self, app_id: int) -> int:
        with self._mutex:
            if len(self._sims) >= self.limits.max_qubits:
                raise E.ResourceError(
                    f"{self.name} is at its {self.limits.max_qubits}-qubit capacity"
                )
            reg = self.engine.new_register()
            self.engine.add_qubit(reg)
            sim_id = self._alloc_sim()
            virt_id = self._alloc_virt()
            holder = pc.QubitHolder(self.name, app_id, virt_id)
            self._sims[sim_id] = SimulatedQubit(
                sim_id, reg.register_id, 0, self._now_ms(), holder
            )
            self._registers[reg.register_id] = reg
            self._members[reg.register_id] = {sim_id}
            self._virts[virt_id] = VirtualQubit(virt_id, app_id, self.name, sim_id)
            self.metrics.qubits_created += 1
            self._bump_watermark(1)
            return virt_id

    def allocate(self, app_id: int, count: int) -> list[int]:
        return [self.create_qubit(app_id) for _ in range(count)]

    def apply_gate(self, app_id: int, virt_id: int, code: str, step: int = 0) -> None:
        gate = gate_from_command(code, step)
        if gate.arity != 1:
            raise E.InvalidOperationError(f"{code} needs two qubits")

        def local(sim_id: int):
            return self._with_local_register(
                sim_id, lambda reg, sq: self.engine.apply_single(reg, sq.position, gate)
            )

        def remote(host: str, sim_id: int):
            return self._rpc(host, pc.ApplyGateReq(sim_id, code, step))

        self._routed(app_id, virt_id, local, remote)

    def measure_qubit(self, app_id: int, virt_id: int, inplace: bool = False) -> int:
        demolition = not inplace

        def local(sim_id: int):
            def fn(reg, sq):
                out = self.engine.measure(reg, sq.position, demolition, self._draw())
                if demolition:
                    self._demolish_slot(reg, sq)
                return out.bit

            return self._with_local_register(sim_id, fn)

        def remote(host: str, sim_id: int):
            resp = self._rpc(host, pc.MeasureReq(sim_id, demolition))
            return resp.bit

        bit = self._routed(app_id, virt_id, local, remote)
        if demolition:
            with self._mutex:
                self._virts.pop(virt_id, None)
        return bit

    def reset_qubit(self, app_id: int, virt_id: int) -> None:
        if self.measure_qubit(app_id, virt_id, inplace=True) == 1:
            self.apply_gate(app_id, virt_id, "X")

    def release_qubit(self, app_id: int, virt_id: int) -> None:
        """Deactivate and discard; the id is remembered as expired."""

        def local(sim_id: int):
            def fn(reg, sq):
                self.engine.remove_qubit(reg, sq.position, self._draw())
                self._demolish_slot(reg, sq)

            return self._with_local_register(sim_id, fn)

        def remote(host: str, sim_id: int):
            return self._rpc(host, pc.RemoveReq(sim_id))

        self._routed(app_id, virt_id, local, remote)
        with self._mutex:
            self._virts.pop(virt_id, None)
            self._released.add(virt_id)

    def get_time(self, app_id: int, virt_id: int) -> int:
        def local(sim_id: int):
            with self._mutex:
                return self._local_sim_or_moved(sim_id).created_at

        def remote(host: str, sim_id: int):
            return self._rpc(host, pc.GetTimeReq(sim_id)).created_at

        return self._routed(app_id, virt_id, local, remote)

    def _routed(self, app_id: int, virt_id: int, local, remote):
        """Run an op at the simulating host, chasing merge redirects."""
        for _ in range(ROUTE_HOPS):
            vq = self._resolve_virt(app_id, virt_id)
            host, sim_id = vq.sim_host, vq.sim_id
            try:
                if host == self.name:
                    return local(sim_id)
                return remote(host, sim_id)
            except E.MovedError as exc:
                self._learn_move(virt_id, host, sim_id, exc.new_host, exc.new_sim_id)
        raise E.InternalError("qubit forwarding chain did not settle")

    # -- two-qubit gates and merges

    def apply_two_qubit(
        self, app_id: int, control_virt: int, target_virt: int, code: str
    ) -> None:
        if control_virt == target_virt:
            raise E.InvalidOperationError("control and target must differ")
        gate = gate_from_command(code)
        if gate.arity != 2:
            raise E.InvalidOperationError(f"{code} is a single-qubit gate")

        for attempt in range(self._lock_policy.attempts):
            vqc = self._resolve_virt(app_id, control_virt)
            vqt = self._resolve_virt(app_id, target_virt)
            c_host, c_sim = vqc.sim_host, vqc.sim_id
            t_host, t_sim = vqt.sim_host, vqt.sim_id
            try:
                c_info = self._qubit_info(c_host, c_sim)
                t_info = self._qubit_info(t_host, t_sim)
            except E.MovedError as exc:
                self._learn_from_info_move(vqc, vqt, exc)
                continue

            lock_ids = [
                LockId(c_host, KIND_REGISTER, c_info.register_ref),
                LockId(t_host, KIND_REGISTER, t_info.register_ref),
                LockId(c_host, KIND_QUBIT, c_sim),
                LockId(t_host, KIND_QUBIT, t_sim),
            ]
            txn = self._new_txn()
            held = self._acquire(txn, lock_ids)
            try:
                try:
                    c_now = self._qubit_info(c_host, c_sim)
                    t_now = self._qubit_info(t_host, t_sim)
                except E.MovedError as exc:
                    self._learn_from_info_move(vqc, vqt, exc)
                    continue
                if (c_now.register_ref != c_info.register_ref
                        or t_now.register_ref != t_info.register_ref):
                    continue  # placement changed while locking; replan

                if c_host == t_host and c_info.register_ref == t_info.register_ref:
                    if c_host == self.name:
                        self._apply_two_local(txn, c_sim, t_sim, code)
                    else:
                        self._rpc(c_host, pc.ApplyTwoReq(txn, c_sim, t_sim, code))
                else:
                    req = pc.MergeExecReq(
                        txn, c_sim, t_host, t_sim, t_info.register_ref, code
                    )
                    if c_host == self.name:
                        self._merge_exec(req)
                    else:
                        self._rpc(c_host, req)
                return
            finally:
                release_all(self._lock_client, held)
        raise E.LockTimeoutError(
            f"two-qubit gate on ({control_virt},{target_virt}) kept losing races"
        )

    def _learn_from_info_move(self, vqc: VirtualQubit, vqt: VirtualQubit,
                              exc: E.MovedError) -> None:
        # The MovedError does not say which operand moved; refresh both
        # mappings that still point at a tombstoned slot.
        for vq in (vqc, vqt):
            try:
                self._qubit_info(vq.sim_host, vq.sim_id)
            except E.MovedError as sub:
                self._learn_move(
                    vq.virt_id, vq.sim_host, vq.sim_id, sub.new_host, sub.new_sim_id
                )
            except E.QnetError:
                pass

    def _qubit_info(self, host: str, sim_id: int) -> pc.QubitInfoResp:
        if host == self.name:
            with self._mutex:
                sq = self._local_sim_or_moved(sim_id)
                return pc.QubitInfoResp(sq.register_ref, sq.position, sq.created_at)
        return self._rpc(host, pc.QubitInfoReq(sim_id))

    def _apply_two_local(self, txn: str, control_sim: int, target_sim: int,
                         code: str) -> None:
        gate = gate_from_command(code)
        with self._mutex:
            sqc = self._local_sim_or_moved(control_sim)
            sqt = self._local_sim_or_moved(target_sim)
            if sqc.register_ref != sqt.register_ref:
                raise E.InternalError("operands drifted apart under their locks")
            reg = self._registers[sqc.register_ref]
            c_pos, t_pos = sqc.position, sqt.position
        self._require_lock(txn, LockId(self.name, KIND_REGISTER, reg.register_id))
        self.engine.apply_two(reg, c_pos, t_pos, gate)

    def _merge_exec(self, req: pc.MergeExecReq) -> None:
        """Absorb the target's register into the control's (runs at the
        control's host, on behalf of the requester's transaction)."""
        txn = req.txn
        with self._mutex:
            sqc = self._local_sim_or_moved(req.control_sim)
            c_reg_id = sqc.register_ref
        self._require_lock(txn, LockId(self.name, KIND_REGISTER, c_reg_id))
        self._require_lock(txn, LockId(self.name, KIND_QUBIT, req.control_sim))

        if req.target_host == self.name:
            target_sim = self._merge_local(txn, c_reg_id, req)
        else:
            target_sim = self._merge_pulled(txn, c_reg_id, req)

        gate = gate_from_command(req.code)
        with self._mutex:
            reg = self._registers[c_reg_id]
            c_pos = self._sims[req.control_sim].position
            t_pos = self._sims[target_sim].position
            self._bump_watermark(reg.num_qubits)
        self.engine.apply_two(reg, c_pos, t_pos, gate)

    def _merge_local(self, txn: str, c_reg_id: int, req: pc.MergeExecReq) -> int:
        with self._mutex:
            sqt = self._local_sim_or_moved(req.target_sim)
            t_reg_id = sqt.register_ref
            if t_reg_id != req.target_register:
                raise E.InternalError("target register changed under its lock")
            if t_reg_id == c_reg_id:
                return req.target_sim
            creg = self._registers[c_reg_id]
            treg = self._registers[t_reg_id]
        self._require_lock(txn, LockId(self.name, KIND_REGISTER, t_reg_id))
        with self._mutex:
            offset = self.engine.merge(creg, treg)
            moved = self._members.pop(t_reg_id, set())
            for sid in moved:
                sq = self._sims[sid]
                sq.register_ref = c_reg_id
                sq.position += offset
            self._members[c_reg_id].update(moved)
            self._registers.pop(t_reg_id, None)
        self.metrics.merges_local += 1
        return req.target_sim

    def _merge_pulled(self, txn: str, c_reg_id: int, req: pc.MergeExecReq) -> int:
        resp = self._rpc(req.target_host, pc.MergePullReq(txn, req.target_register))
        payload = resp.payload
        shipped = self.engine.register_from_amplitudes(
            payload.num_qubits, payload.amplitudes
        )

        mapping: list[tuple[int, int]] = []
        by_holder: dict[str, list[pc.RemapItem]] = {}
        new_target = None
        with self._mutex:
            creg = self._registers[c_reg_id]
            offset = self.engine.merge(creg, shipped)
            for q in payload.qubits:
                new_sim = self._alloc_sim()
                self._sims[new_sim] = SimulatedQubit(
                    new_sim, c_reg_id, offset + q.position, q.created_at, q.holder
                )
                self._members[c_reg_id].add(new_sim)
                mapping.append((q.sim_id, new_sim))
                by_holder.setdefault(q.holder.node, []).append(pc.RemapItem(
                    q.holder.app_id, q.holder.virt_id,
                    req.target_host, q.sim_id, self.name, new_sim,
                ))
                if q.sim_id == req.target_sim:
                    new_target = new_sim
        if new_target is None:
            raise E.InternalError("pulled register did not contain the target")

        # Remap pushes happen inside the transaction, before the victim
        # commits, so holders learn the new address before the locks drop.
        for holder_node, items in by_holder.items():
            if holder_node == self.name:
                self._apply_remap(items)
            else:
                self._rpc(holder_node, pc.RemapReq(items))
        self._rpc(
            req.target_host,
            pc.MergeCommitReq(req.target_register, self.name, mapping),
        )
        self.metrics.merges_pulled += 1
        return new_target

    def _apply_remap(self, items: list[pc.RemapItem]) -> None:
        with self._mutex:
            for item in items:
                vq = self._virts.get(item.virt_id)
                if (vq is not None and vq.owner_app_id == item.app_id
                        and vq.sim_host == item.old_host
                        and vq.sim_id == item.old_sim):
                    vq.sim_host = item.new_host
                    vq.sim_id = item.new_sim

    # -- qubit transfer and entanglement

    def send_qubit(self, app_id: int, virt_id: int, dest_node: str,
                   dest_app_id: int) -> None:
        vq = self._resolve_virt(app_id, virt_id)
        dest = self.directory.get(dest_node)  # ConfigError if unknown
        with self._mutex:
            self._virts.pop(virt_id, None)
        try:
            if dest.name == self.name:
                self._deliver_xfer(dest_app_id, vq.sim_host, vq.sim_id, None)
            else:
                self._rpc(
                    dest.name, pc.XferQubitReq(dest_app_id, vq.sim_host, vq.sim_id)
                )
        except Exception:
            with self._mutex:
                self._virts[virt_id] = vq
            raise

    def recv_qubit(self, app_id: int, timeout_s: float | None = None) -> int:
        q = self._app_queues(app_id)
        deadline = time.monotonic() + (
            timeout_s if timeout_s is not None else self.limits.recv_timeout_s
        )
        with q.cond:
            while not q.recv:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    raise E.RecvTimeoutError("no qubit arrived in time")
                q.cond.wait(remaining)
            return q.recv.popleft()

    def create_epr(self, app_id: int, peer_node: str,
                   peer_app_id: int) -> tuple[int, EntanglementId]:
        peer = self.directory.get(peer_node)
        with self._mutex:
            if len(self._sims) + 2 > self.limits.max_qubits:
                raise E.ResourceError(f"{self.name} lacks capacity for a pair")
            reg = self.engine.new_register()
            self.engine.add_qubit(reg)
            self.engine.add_qubit(reg)
        self.engine.apply_single(reg, 0, gate_from_command("H"))
        self.engine.apply_two(reg, 0, 1, gate_from_command("CNOT"))
        now = self._now_ms()
        with self._mutex:
            sim0 = self._alloc_sim()
            sim1 = self._alloc_sim()
            virt0 = self._alloc_virt()
            seq = self._ent_seq.get(peer.name, 0) + 1
            self._ent_seq[peer.name] = seq
            ent = EntanglementId(self.name, peer.name, seq, now)
            self._sims[sim0] = SimulatedQubit(
                sim0, reg.register_id, 0, now,
                pc.QubitHolder(self.name, app_id, virt0),
            )
            self._sims[sim1] = SimulatedQubit(
                sim1, reg.register_id, 1, now,
                pc.QubitHolder(peer.name, peer_app_id, 0),
            )
            self._registers[reg.register_id] = reg
            self._members[reg.register_id] = {sim0, sim1}
            self._virts[virt0] = VirtualQubit(virt0, app_id, self.name, sim0)
            self.metrics.qubits_created += 2
            self._bump_watermark(2)
        try:
            offer = pc.EprOfferReq(
                peer_app_id, self.name, sim1,
                ent.node_a, ent.node_b, ent.sequence, ent.created_at,
            )
            if peer.name == self.name:
                self._deliver_xfer(peer_app_id, self.name, sim1, ent)
            else:
                self._rpc(peer.name, offer)
        except Exception:
            with self._mutex:
                self._virts.pop(virt0, None)
                self._sims.pop(sim0, None)
                self._sims.pop(sim1, None)
                self._registers.pop(reg.register_id, None)
                self._members.pop(reg.register_id, None)
                self.metrics.qubits_created -= 2
            raise
        return virt0, ent

    def recv_epr(self, app_id: int,
                 timeout_s: float | None = None) -> tuple[int, EntanglementId]:
        q = self._app_queues(app_id)
        deadline = time.monotonic() + (
            timeout_s if timeout_s is not None else self.limits.recv_timeout_s
        )
        with q.cond:
            while not q.epr:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    raise E.RecvTimeoutError("no entangled pair arrived in time")
                q.cond.wait(remaining)
            return q.epr.popleft()

    def swap_measure(self, app_id: int, virt_a: int, virt_b: int) -> tuple[int, int]:
        """Local pair measurement in the entangled basis (CNOT, H, two
        demolition measurements); consumes both qubits."""
        self.apply_two_qubit(app_id, virt_a, virt_b, "CNOT")
        self.apply_gate(app_id, virt_a, "H")
        m_a = self.measure_qubit(app_id, virt_a, inplace=False)
        m_b = self.measure_qubit(app_id, virt_b, inplace=False)
        return m_a, m_b

    def _deliver_xfer(self, app_id: int, sim_host: str, sim_id: int,
                      ent: EntanglementId | None) -> int:
        q = self._app_queues(app_id)
        with self._mutex:
            with q.cond:
                depth = len(q.epr if ent is not None else q.recv)
            if depth >= q.cap:
                raise E.UnavailableError(
                    f"app {app_id} receive queue at capacity {q.cap}"
                )
            virt = self._alloc_virt()
            self._virts[virt] = VirtualQubit(virt, app_id, sim_host, sim_id)

        holder = pc.QubitHolder(self.name, app_id, virt)
        for _ in range(ROUTE_HOPS):
            with self._mutex:
                vq = self._virts[virt]
                host, sid = vq.sim_host, vq.sim_id
            try:
                if host == self.name:
                    with self._mutex:
                        self._local_sim_or_moved(sid).holder = holder
                else:
                    self._rpc(host, pc.SetHolderReq(sid, holder))
                break
            except E.MovedError as exc:
                self._learn_move(virt, host, sid, exc.new_host, exc.new_sim_id)
        else:
            raise E.InternalError("holder update chain did not settle")

        with q.cond:
            if ent is None:
                q.recv.append(virt)
            else:
                q.epr.append((virt, ent))
            q.cond.notify_all()
        return virt

    # ------------------------------------------------------------------
    # peer dispatch

    def _dispatch_peer(self, peer_name: str, op: pc.Op, req):
        if op is pc.Op.PEER_HELLO:
            return pc.PeerHello(self.name)
        if op is pc.Op.APPLY_GATE:
            gate = gate_from_command(req.code, req.step)
            self._with_local_register(
                req.sim_id,
                lambda reg, sq: self.engine.apply_single(reg, sq.position, gate),
            )
            return pc.EmptyBody()
        if op is pc.Op.APPLY_TWO:
            self._apply_two_local(req.txn, req.control_sim, req.target_sim, req.code)
            return pc.EmptyBody()
        if op is pc.Op.MEASURE:
            def fn(reg, sq):
                out = self.engine.measure(
                    reg, sq.position, req.demolition, self._draw()
                )
                if req.demolition:
                    self._demolish_slot(reg, sq)
                return out
            out = self._with_local_register(req.sim_id, fn)
            return pc.MeasureResp(out.bit, out.probability)
        if op is pc.Op.REMOVE:
            def fn(reg, sq):
                self.engine.remove_qubit(reg, sq.position, self._draw())
                self._demolish_slot(reg, sq)
            self._with_local_register(req.sim_id, fn)
            return pc.EmptyBody()
        if op is pc.Op.QUBIT_INFO:
            with self._mutex:
                sq = self._local_sim_or_moved(req.sim_id)
                return pc.QubitInfoResp(sq.register_ref, sq.position, sq.created_at)
        if op is pc.Op.MERGE_PULL:
            return self._serve_merge_pull(req)
        if op is pc.Op.MERGE_EXEC:
            self._merge_exec(req)
            return pc.EmptyBody()
        if op is pc.Op.MERGE_COMMIT:
            self._serve_merge_commit(req)
            return pc.EmptyBody()
        if op is pc.Op.REMAP:
            self._apply_remap(req.items)
            return pc.EmptyBody()
        if op is pc.Op.SET_HOLDER:
            with self._mutex:
                self._local_sim_or_moved(req.sim_id).holder = req.holder
            return pc.EmptyBody()
        if op is pc.Op.XFER_QUBIT:
            virt = self._deliver_xfer(req.app_id, req.sim_host, req.sim_id, None)
            return pc.XferQubitResp(virt)
        if op is pc.Op.EPR_OFFER:
            ent = EntanglementId(
                req.ent_node_a, req.ent_node_b, req.ent_sequence, req.ent_created_at
            )
            virt = self._deliver_xfer(req.app_id, req.sim_host, req.sim_id, ent)
            return pc.XferQubitResp(virt)
        if op is pc.Op.LOCK_ACQ:
            return self._serve_lock_acq(req)
        if op is pc.Op.LOCK_REL:
            for lid in req.locks:
                self.lock_table.release(req.txn, lid)
            return pc.EmptyBody()
        if op is pc.Op.GET_TIME:
            with self._mutex:
                sq = self._local_sim_or_moved(req.sim_id)
                return pc.GetTimeResp(sq.created_at)
        if op is pc.Op.NODE_STATE_DUMP:
            return pc.BlobResp(json.dumps(self.dump_state()).encode("utf-8"))
        raise E.UnsupportedError(f"peer op {op} not handled")

    def _serve_merge_pull(self, req: pc.MergePullReq) -> pc.MergePullResp:
        self._require_lock(
            req.txn, LockId(self.name, KIND_REGISTER, req.register_ref)
        )
        with self._mutex:
            reg = self._registers.get(req.register_ref)
            if reg is None:
                raise E.UnknownQubitError(
                    f"register {req.register_ref} not at {self.name}"
                )
            qubits = []
            for sid in sorted(self._members.get(req.register_ref, set())):
                sq = self._sims[sid]
                qubits.append(pc.ShippedQubit(
                    sid, sq.position, sq.created_at, sq.holder
                ))
            payload = pc.RegisterPayload(
                reg.num_qubits, reg.amplitudes.copy(), qubits
            )
        return pc.MergePullResp(payload)

    def _serve_merge_commit(self, req: pc.MergeCommitReq) -> None:
        with self._mutex:
            for old, new in req.mapping:
                self._tombstones[old] = _Tombstone(req.new_host, new)
                self._sims.pop(old, None)
            reg = self._registers.pop(req.register_ref, None)
            self._members.pop(req.register_ref, None)
            if reg is not None:
                reg.valid = False

    def _serve_lock_acq(self, req: pc.LockAcqReq) -> pc.LockAcqResp:
        acquired: list[LockId] = []
        for lid in sorted(req.locks):
            if lid.node != self.name:
                raise E.ProtocolError(f"lock {lid} is not hosted here")
            if self.lock_table.try_acquire(req.txn, lid, req.wait_ms / 1000.0):
                acquired.append(lid)
            else:
                for held in reversed(acquired):
                    self.lock_table.release(req.txn, held)
                return pc.LockAcqResp(False)
        return pc.LockAcqResp(True)

    # ------------------------------------------------------------------
    # introspection

    def connected_peer_names(self) -> list[str]:
        if self._server is None:
            return []
        return [n for n in self._server.connected_peers() if n in self.directory]

    def node_status(self) -> dict:
        with self._mutex:
            status = {
                "name": self.name,
                "peers_connected": len(self.connected_peer_names()),
                "virtual_qubits": len(self._virts),
                "simulated_qubits": len(self._sims),
                "registers": len(self._registers),
                "released_qubits": len(self._released),
                "qubits_created": self.metrics.qubits_created,
                "peak_register_qubits": self.metrics.peak_register_qubits,
                "merges_local": self.metrics.merges_local,
                "merges_pulled": self.metrics.merges_pulled,
                "remote_ops": self.metrics.remote_ops,
            }
        status.update(self.lock_table.metrics.snapshot())
        return status

    def dump_state(self) -> dict:
        """Debug snapshot: registers with "re,im" amplitude pairs at 12
        significant digits, plus both qubit tables."""
        with self._mutex:
            registers = []
            for reg_id in sorted(self._registers):
                reg = self._registers[reg_id]
                amps = reg.amplitudes  # snapshot; qubit count follows its length
                registers.append({
                    "register_id": reg_id,
                    "num_qubits": int(len(amps)).bit_length() - 1,
                    "amplitudes": [
                        f"{a.real:.12g},{a.imag:.12g}" for a in amps
                    ],
                })
            sims = [
                {
                    "sim_id": sq.sim_id,
                    "register_ref": sq.register_ref,
                    "position": sq.position,
                    "created_at": sq.created_at,
                    "holder_node": sq.holder.node,
                    "holder_app_id": sq.holder.app_id,
                    "holder_virt_id": sq.holder.virt_id,
                }
                for sq in (self._sims[k] for k in sorted(self._sims))
            ]
            virts = [
                {
                    "virt_id": vq.virt_id,
                    "owner_app_id": vq.owner_app_id,
                    "sim_host": vq.sim_host,
                    "sim_id": vq.sim_id,
                }
                for vq in (self._virts[k] for k in sorted(self._virts))
            ]
            snapshot = {
                "node": self.name,
                "registers": registers,
                "simulated_qubits": sims,
                "virtual_qubits": virts,
                "released": sorted(self._released),
            }
        snapshot["status"] = self.node_status()
        return snapshot


class _NodeLockClient:
    """Routes lock traffic between the local table and peer tables."""

    def __init__(self, node: VirtualNode):
        self._node = node

    def try_acquire(self, txn: str, lock_id: LockId, wait_s: float) -> bool:
        node = self._node
        if lock_id.node == node.name:
            return node.lock_table.try_acquire(txn, lock_id, wait_s)
        resp = node._rpc(
            lock_id.node,
            pc.LockAcqReq(txn, [lock_id], int(wait_s * 1000)),
            timeout=wait_s + node.limits.rpc_timeout_s,
        )
        return resp.granted

    def release(self, txn: str, lock_ids) -> None:
        node = self._node
        by_node: dict[str, list[LockId]] = {}
        for lid in lock_ids:
            by_node.setdefault(lid.node, []).append(lid)
        for host, lids in by_node.items():
            if host == node.name:
                for lid in lids:
                    node.lock_table.release(txn, lid)
            else:
                node._rpc(host, pc.LockRelReq(txn, lids))
