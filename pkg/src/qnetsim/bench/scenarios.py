"""Scripted network scenarios: timing, statistics, and protocol checks.

Each scenario drives a live network purely through control-channel
clients, one sequential client per role, roles running concurrently.
Classical coordination between roles (measurement corrections,
readiness and flow-control signals) travels over plain length-prefixed
byte channels. Results land in one CSV row per trial:

    scenario,n,mode,trial,wall_time_s,extra

Under a fixed seed everything except the wall_time_s column is
reproducible.
"""

from __future__ import annotations

import csv
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import errors as E
from ..cqc import codec as cc
from ..cqc.codec import Cmd, MsgType, Opt
from .classical import ClassicalListener, classical_connect
from .client import CqcClient, ReplyError
from .harness import make_network, ring_names
from .states import locate_qubit, states_equal_up_to_global_phase

CSV_HEADER = ("scenario", "n", "mode", "trial", "wall_time_s", "extra")

# Critical value of the chi-square distribution, 1 degree of freedom,
# at the 0.01 significance level: uniformity passes below it.
CHI2_CRITICAL_1DOF_P01 = 6.63489660102

SQRT_HALF = 1.0 / np.sqrt(2.0)

# Preparation recipe and resulting single-qubit state for each Pauli
# eigenstate, starting from |0>.
PAULI_EIGENSTATES: dict[str, tuple[list, np.ndarray]] = {
    "z+": ([], np.array([1.0, 0.0], dtype=complex)),
    "z-": ([("X",)], np.array([0.0, 1.0], dtype=complex)),
    "x+": ([("H",)], np.array([SQRT_HALF, SQRT_HALF], dtype=complex)),
    "x-": ([("X",), ("H",)], np.array([SQRT_HALF, -SQRT_HALF], dtype=complex)),
    "y+": ([("H",), ("ROT_Z", 64)], np.array([SQRT_HALF, SQRT_HALF * 1j])),
    "y-": ([("H",), ("ROT_Z", 192)], np.array([SQRT_HALF, -SQRT_HALF * 1j])),
}


class ScenarioFailure(AssertionError):
    """A scenario's correctness check did not hold."""


@dataclass
class ScenarioResult:
    scenario: str
    n: int
    mode: str
    trials: int
    wall_time: float
    outcome_stats: dict[str, float]
    rows: list[tuple] = field(default_factory=list)
    node_stats: dict[str, dict] = field(default_factory=dict)
    report: dict = field(default_factory=dict)


def write_csv(path: str | Path, results: list[ScenarioResult]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for result in results:
            writer.writerows(result.rows)


class _Crew:
    """Run one callable per role; join all; re-raise the first failure."""

    def run(self, roles: dict[str, object]) -> None:
        failures: dict[str, BaseException] = {}
        threads = []
        for name, fn in roles.items():
            def wrap(fn=fn, name=name):
                try:
                    fn()
                except BaseException as exc:  # noqa: BLE001 - reported below
                    failures[name] = exc

            t = threading.Thread(target=wrap, name=f"role-{name}", daemon=True)
            threads.append(t)
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        if failures:
            name = sorted(failures)[0]
            raise failures[name]


def _prepare(client: CqcClient, qubit: int, state: str) -> None:
    for op in PAULI_EIGENSTATES[state][0]:
        if op[0].startswith("ROT_"):
            client.rotate(op[0][-1], qubit, op[1])
        else:
            client.gate(op[0], qubit)


def _bell_measure(client: CqcClient, qubit: int, half: int) -> tuple[int, int]:
    client.cnot(qubit, half)
    client.gate("H", qubit)
    return client.measure(qubit), client.measure(half)


def _apply_corrections(client: CqcClient, qubit: int, a: int, b: int) -> None:
    if b:
        client.gate("X", qubit)
    if a:
        client.gate("Z", qubit)


def _collect_node_stats(net, names: list[str]) -> dict[str, dict]:
    return {name: net.status(name) for name in names}


# ----------------------------------------------------------------------
# ring

def ring_teleport(n: int, mode: str = "fly", trials: int = 1,
                  seed: int | None = None, network=None,
                  backend: str = "inproc", **net_kwargs) -> ScenarioResult:
    """Teleport one qubit around an n-node ring, once per trial.

    mode "fly": each node creates its pair with the next node only
    after the state reached it. mode "first": every node starts pair
    creation up front, and each teleport fires as soon as its pair is
    ready (readiness signaled over the classical channel).
    """
    if n < 2:
        raise ValueError("a ring needs at least 2 nodes")
    if mode not in ("fly", "first"):
        raise ValueError(f"unknown ring mode {mode!r}")
    names = ring_names(n)
    own = network is None
    net = network or make_network(names, backend=backend, seed=seed, **net_kwargs)
    rows: list[tuple] = []
    times: list[float] = []
    verified = 0
    try:
        for trial in range(trials):
            app = trial + 1
            clients = [net.client(names[i], app) for i in range(n)]
            listeners = [ClassicalListener() for _ in range(n)]
            outcome: dict[str, int] = {}

            def make_role(i: int):
                def role():
                    cl = clients[i]
                    nxt = (i + 1) % n
                    conn_next = classical_connect(
                        listeners[nxt].host, listeners[nxt].port
                    )
                    conn_prev = listeners[i].accept()
                    try:
                        if mode == "first":
                            self_half = cl.create_epr(net.entry(names[nxt]), app)
                            inbound = cl.recv_epr()
                            conn_prev.send_msg(b"R")
                            if i == 0:
                                q = cl.new_qubit()
                                cl.gate("H", q)
                            else:
                                corr = conn_prev.recv_msg()
                                _apply_corrections(
                                    cl, inbound.qubit_id, corr[0], corr[1]
                                )
                                q = inbound.qubit_id
                            if conn_next.recv_msg() != b"R":
                                raise ScenarioFailure("bad readiness signal")
                            a, b = _bell_measure(cl, q, self_half.qubit_id)
                            conn_next.send_msg(bytes([a, b]))
                            if i == 0:
                                corr = conn_prev.recv_msg()
                                _apply_corrections(
                                    cl, inbound.qubit_id, corr[0], corr[1]
                                )
                                cl.gate("H", inbound.qubit_id)
                                outcome["verify"] = cl.measure(inbound.qubit_id)
                        else:
                            if i == 0:
                                q = cl.new_qubit()
                                cl.gate("H", q)
                                self_half = cl.create_epr(
                                    net.entry(names[nxt]), app
                                )
                                a, b = _bell_measure(cl, q, self_half.qubit_id)
                                conn_next.send_msg(bytes([a, b]))
                                inbound = cl.recv_epr()
                                corr = conn_prev.recv_msg()
                                _apply_corrections(
                                    cl, inbound.qubit_id, corr[0], corr[1]
                                )
                                cl.gate("H", inbound.qubit_id)
                                outcome["verify"] = cl.measure(inbound.qubit_id)
                            else:
                                inbound = cl.recv_epr()
                                corr = conn_prev.recv_msg()
                                _apply_corrections(
                                    cl, inbound.qubit_id, corr[0], corr[1]
                                )
                                self_half = cl.create_epr(
                                    net.entry(names[nxt]), app
                                )
                                a, b = _bell_measure(
                                    cl, inbound.qubit_id, self_half.qubit_id
                                )
                                conn_next.send_msg(bytes([a, b]))
                    finally:
                        conn_next.close()
                        conn_prev.close()
                return role

            start = time.perf_counter()
            try:
                _Crew().run({names[i]: make_role(i) for i in range(n)})
            finally:
                for listener in listeners:
                    listener.close()
                for client in clients:
                    client.close()
            elapsed = time.perf_counter() - start

            if outcome.get("verify") != 0:
                raise ScenarioFailure(
                    f"ring trial {trial}: returned state failed verification"
                )
            verified += 1
            times.append(elapsed)
            rows.append(
                ("ring", n, mode, trial, f"{elapsed:.6f}", "verify=0")
            )
        stats = _collect_node_stats(net, names)
        return ScenarioResult(
            "ring", n, mode, trials, sum(times),
            {"verified": verified / trials}, rows, stats,
        )
    finally:
        if own:
            net.stop()


# ----------------------------------------------------------------------
# ping-pong

def pingpong_teleport(rounds: int, trials: int = 1, seed: int | None = None,
                      network=None, backend: str = "inproc",
                      **net_kwargs) -> ScenarioResult:
    """Teleport one qubit back and forth between two nodes."""
    if rounds < 1:
        raise ValueError("rounds must be at least 1")
    names = ["ping", "pong"]
    own = network is None
    net = network or make_network(names, backend=backend, seed=seed, **net_kwargs)
    rows: list[tuple] = []
    times: list[float] = []
    try:
        for trial in range(trials):
            app = trial + 1
            ca = net.client("ping", app)
            cb = net.client("pong", app)
            listener = ClassicalListener()
            outcome: dict[str, int] = {}

            def role_a():
                chan = classical_connect(listener.host, listener.port)
                try:
                    q = ca.new_qubit()
                    ca.gate("H", q)
                    for _ in range(rounds):
                        half = ca.create_epr(net.entry("pong"), app)
                        a, b = _bell_measure(ca, q, half.qubit_id)
                        chan.send_msg(bytes([a, b]))
                        back = ca.recv_epr()
                        corr = chan.recv_msg()
                        _apply_corrections(ca, back.qubit_id, corr[0], corr[1])
                        q = back.qubit_id
                    ca.gate("H", q)
                    outcome["verify"] = ca.measure(q)
                finally:
                    chan.close()

            def role_b():
                chan = listener.accept()
                try:
                    for _ in range(rounds):
                        inbound = cb.recv_epr()
                        corr = chan.recv_msg()
                        _apply_corrections(
                            cb, inbound.qubit_id, corr[0], corr[1]
                        )
                        half = cb.create_epr(net.entry("ping"), app)
                        a, b = _bell_measure(
                            cb, inbound.qubit_id, half.qubit_id
                        )
                        chan.send_msg(bytes([a, b]))
                finally:
                    chan.close()

            start = time.perf_counter()
            try:
                _Crew().run({"ping": role_a, "pong": role_b})
            finally:
                listener.close()
                ca.close()
                cb.close()
            elapsed = time.perf_counter() - start
            if outcome.get("verify") != 0:
                raise ScenarioFailure(
                    f"ping-pong trial {trial}: state failed verification"
                )
            times.append(elapsed)
            rows.append(
                ("pingpong", rounds, "", trial, f"{elapsed:.6f}", "verify=0")
            )
        stats = _collect_node_stats(net, names)
        return ScenarioResult(
            "pingpong", rounds, "", trials, sum(times),
            {"verified": 1.0}, rows, stats,
        )
    finally:
        if own:
            net.stop()


# ----------------------------------------------------------------------
# create & measure

def create_measure(n: int, trials: int = 1, seed: int | None = None,
                   network=None, backend: str = "inproc",
                   **net_kwargs) -> ScenarioResult:
    """Create n independent qubits, then measure them all."""
    if n < 1:
        raise ValueError("n must be at least 1")
    names = ["solo"]
    own = network is None
    net = network or make_network(names, backend=backend, seed=seed, **net_kwargs)
    rows: list[tuple] = []
    times: list[float] = []
    try:
        for trial in range(trials):
            cl = net.client("solo", trial + 1)
            try:
                start = time.perf_counter()
                ids = [cl.new_qubit() for _ in range(n)]
                registers = net.status("solo")["registers"]
                bits = [cl.measure(q) for q in ids]
                elapsed = time.perf_counter() - start
            finally:
                cl.close()
            if registers != n:
                raise ScenarioFailure(
                    f"expected {n} independent registers, saw {registers}"
                )
            if any(bits):
                raise ScenarioFailure("fresh qubits must measure 0")
            times.append(elapsed)
            rows.append(
                ("create", n, "", trial, f"{elapsed:.6f}", f"registers={registers}")
            )
        stats = _collect_node_stats(net, names)
        return ScenarioResult(
            "create", n, "", trials, sum(times), {"0": 1.0}, rows, stats
        )
    finally:
        if own:
            net.stop()


# ----------------------------------------------------------------------
# GHZ build & measure

def _ghz_chain(ids: list[int]) -> cc.ParsedCommand:
    """One chained message: H on the first qubit, then the CNOT chain,
    then a measurement of every qubit."""
    block = [
        CqcClient.command(
            Cmd.CNOT, ids[i], options=Opt.BLOCK,
            extra=cc.ExtraHeader(extra_qubit_id=ids[i + 1]),
        )
        for i in range(len(ids) - 1)
    ]
    block += [
        CqcClient.command(Cmd.MEASURE, q, options=Opt.BLOCK) for q in ids
    ]
    return CqcClient.command(
        Cmd.H, ids[0], options=Opt.NOTIFY | Opt.BLOCK | Opt.ACTION, block=block
    )


def ghz_create_measure(n: int, trials: int = 1, seed: int | None = None,
                       network=None, backend: str = "inproc",
                       **net_kwargs) -> ScenarioResult:
    """Entangle n qubits into a GHZ state and measure them all.

    The gate-and-measure circuit rides in a single chained message, so
    the timing reflects simulation cost rather than round trips.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    names = ["solo"]
    own = network is None
    net = network or make_network(names, backend=backend, seed=seed, **net_kwargs)
    rows: list[tuple] = []
    times: list[float] = []
    counts = {"all0": 0, "all1": 0}
    try:
        for trial in range(trials):
            cl = net.client("solo", trial + 1)
            try:
                ids = cl.allocate(n)
                start = time.perf_counter()
                replies = cl.run_command(_ghz_chain(ids))
                elapsed = time.perf_counter() - start
            except ReplyError as exc:
                if exc.msg_type == MsgType.ERR_NOQUBIT:
                    raise E.ResourceError(
                        f"{n} qubits exceed the register capacity"
                    ) from exc
                raise
            finally:
                cl.close()
            bits = [cc.unpack_measout(r.payload) for r in replies]
            if len(bits) != n or len(set(bits)) != 1:
                raise ScenarioFailure(f"GHZ outcomes disagree: {bits}")
            counts["all1" if bits[0] else "all0"] += 1
            times.append(elapsed)
            rows.append(
                ("ghz", n, "", trial, f"{elapsed:.6f}", f"bit={bits[0]}")
            )
        stats = _collect_node_stats(net, names)
        return ScenarioResult(
            "ghz", n, "", trials, sum(times),
            {k: v / trials for k, v in counts.items()}, rows, stats,
        )
    finally:
        if own:
            net.stop()


# ----------------------------------------------------------------------
# protocol suite

def _bb84_combo(net, h_a: int, x: int, h_b: int, app: int,
                trials: int) -> list[int]:
    ca = net.client("alice", app)
    cb = net.client("bob", app)
    listener = ClassicalListener()
    bits: list[int] = []

    def role_a():
        chan = classical_connect(listener.host, listener.port)
        try:
            for _ in range(trials):
                q = ca.new_qubit()
                if x:
                    ca.gate("X", q)
                if h_a:
                    ca.gate("H", q)
                ca.send_qubit(q, net.entry("bob"), app)
                chan.recv_msg()  # lockstep: wait for the measurement
        finally:
            chan.close()

    def role_b():
        chan = listener.accept()
        try:
            for _ in range(trials):
                q = cb.recv_qubit()
                if h_b:
                    cb.gate("H", q)
                bit = cb.measure(q)
                bits.append(bit)
                chan.send_msg(bytes([bit]))
        finally:
            chan.close()

    try:
        _Crew().run({"alice": role_a, "bob": role_b})
    finally:
        listener.close()
        ca.close()
        cb.close()
    return bits


def _teleport_once(net, state: str, app: int) -> tuple[int, dict]:
    """Teleport one prepared state; returns bob's qubit id and context."""
    ca = net.client("alice", app)
    cb = net.client("bob", app)
    listener = ClassicalListener()
    received: dict[str, int] = {}

    def role_a():
        chan = classical_connect(listener.host, listener.port)
        try:
            q = ca.new_qubit()
            _prepare(ca, q, state)
            half = ca.create_epr(net.entry("bob"), app)
            a, b = _bell_measure(ca, q, half.qubit_id)
            chan.send_msg(bytes([a, b]))
        finally:
            chan.close()

    def role_b():
        chan = listener.accept()
        try:
            inbound = cb.recv_epr()
            corr = chan.recv_msg()
            _apply_corrections(cb, inbound.qubit_id, corr[0], corr[1])
            received["qubit"] = inbound.qubit_id
        finally:
            chan.close()

    try:
        _Crew().run({"alice": role_a, "bob": role_b})
    finally:
        listener.close()
        ca.close()

    return received["qubit"], {"client_b": cb}


def _teleport_plus_stats(net, app: int, trials: int) -> tuple[int, int]:
    ca = net.client("alice", app)
    cb = net.client("bob", app)
    listener = ClassicalListener()
    ones = 0

    def role_a():
        chan = classical_connect(listener.host, listener.port)
        try:
            for _ in range(trials):
                q = ca.new_qubit()
                ca.gate("H", q)
                half = ca.create_epr(net.entry("bob"), app)
                a, b = _bell_measure(ca, q, half.qubit_id)
                chan.send_msg(bytes([a, b]))
                chan.recv_msg()  # lockstep: bob finished this round
        finally:
            chan.close()

    def role_b():
        nonlocal ones
        chan = listener.accept()
        try:
            for _ in range(trials):
                inbound = cb.recv_epr()
                corr = chan.recv_msg()
                _apply_corrections(cb, inbound.qubit_id, corr[0], corr[1])
                bit = cb.measure(inbound.qubit_id)
                ones += bit
                chan.send_msg(bytes([bit]))
        finally:
            chan.close()

    try:
        _Crew().run({"alice": role_a, "bob": role_b})
    finally:
        listener.close()
        ca.close()
        cb.close()
    return trials - ones, ones


def run_protocol_suite(seed: int | None = None, network=None,
                       backend: str = "inproc",
                       matched_trials: int = 100,
                       mismatched_trials: int = 1000,
                       plus_trials: int = 1000,
                       **net_kwargs) -> ScenarioResult:
    """Basis-encoding determinism plus teleportation correctness.

    Runs the send-and-measure protocol for every basis/bit combination
    and the teleportation protocol for all six Pauli eigenstates, then
    checks the |+> teleport outcome distribution for uniformity.
    """
    names = ["alice", "bob"]
    own = network is None
    net = network or make_network(names, backend=backend, seed=seed, **net_kwargs)
    rows: list[tuple] = []
    report: dict = {"bb84": {}, "teleport": {}}
    start = time.perf_counter()
    try:
        app = 1
        trial_idx = 0
        for h_a in (0, 1):
            for x in (0, 1):
                for h_b in (0, 1):
                    trials = matched_trials if h_a == h_b else mismatched_trials
                    combo_start = time.perf_counter()
                    bits = _bb84_combo(net, h_a, x, h_b, app, trials)
                    combo_time = time.perf_counter() - combo_start
                    app += 1
                    ones = sum(bits)
                    freq = ones / trials
                    if h_a == h_b:
                        if any(bit != x for bit in bits):
                            raise ScenarioFailure(
                                f"matched bases hA={h_a} x={x}: "
                                f"outcome disagreed with the encoded bit"
                            )
                    elif not 0.4 <= freq <= 0.6:
                        raise ScenarioFailure(
                            f"mismatched bases hA={h_a} hB={h_b}: "
                            f"frequency {freq} outside [0.4, 0.6]"
                        )
                    report["bb84"][(h_a, x, h_b)] = freq
                    rows.append((
                        "protocols", 2, "bb84", trial_idx, f"{combo_time:.6f}",
                        f"hA={h_a};x={x};hB={h_b};ones={ones};trials={trials}",
                    ))
                    trial_idx += 1

        for state, (_, expected) in PAULI_EIGENSTATES.items():
            combo_start = time.perf_counter()
            qubit, ctx = _teleport_once(net, state, app)
            dumps = {name: net.dump(name) for name in names}
            amps, position, num_qubits = locate_qubit(dumps, "bob", app, qubit)
            ok = (
                num_qubits == 1
                and position == 0
                and states_equal_up_to_global_phase(amps, expected, atol=1e-9)
            )
            ctx["client_b"].measure(qubit)
            ctx["client_b"].close()
            combo_time = time.perf_counter() - combo_start
            app += 1
            if not ok:
                raise ScenarioFailure(
                    f"teleported state {state} did not match: {amps}"
                )
            report["teleport"][state] = True
            rows.append((
                "protocols", 2, "teleport", trial_idx, f"{combo_time:.6f}",
                f"state={state};ok=1",
            ))
            trial_idx += 1

        combo_start = time.perf_counter()
        zeros, ones = _teleport_plus_stats(net, app, plus_trials)
        plus_time = time.perf_counter() - combo_start
        expected_half = plus_trials / 2.0
        chi2 = (
            (zeros - expected_half) ** 2 / expected_half
            + (ones - expected_half) ** 2 / expected_half
        )
        report["teleport"]["plus_chi2"] = chi2
        if chi2 >= CHI2_CRITICAL_1DOF_P01:
            raise ScenarioFailure(
                f"teleported |+> outcomes non-uniform: chi2={chi2:.4f}"
            )
        rows.append((
            "protocols", 2, "teleport", trial_idx, f"{plus_time:.6f}",
            f"state=plus;ones={ones};trials={plus_trials};chi2={chi2:.6f}",
        ))

        elapsed = time.perf_counter() - start
        stats = _collect_node_stats(net, names)
        return ScenarioResult(
            "protocols", 2, "", trial_idx + 1, elapsed,
            {"ok": 1.0}, rows, stats, report,
        )
    finally:
        if own:
            net.stop()
