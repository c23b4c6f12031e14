"""Random distributed programs plus a single-register reference executor.

A program is a flat list of ops over logical qubits numbered in creation
order. The same list runs two ways: against a live multi-node network
through control-channel clients, and against one brute-force state
vector that never splits into registers. Measurement outcomes recorded
by the live run are replayed as projections in the reference run, so
the two final states are directly comparable.

Op forms:
    ("new", node)                 create one qubit at node
    ("epr", node_a, node_b)       entangled pair, one qubit per node
    ("gate", name, q)             single-qubit gate
    ("rot", axis, q, step)        rotation by step * 2*pi/256
    ("two", kind, q_control, q_target)   CNOT or CPHASE, co-owned qubits
    ("send", q, node)             move ownership of q to node
    ("measure", q)                demolition measurement, outcome recorded
"""

from __future__ import annotations

import numpy as np

from . import oracle

GATES = ("X", "Y", "Z", "H", "K", "T")
AXES = ("x", "y", "z")
TWO_KINDS = ("CNOT", "CPHASE")


def generate_program(rng: np.random.Generator, nodes: tuple[str, ...],
                     max_ops: int = 12, max_qubits: int = 4) -> list[tuple]:
    ops: list[tuple] = []
    owner: dict[int, str] = {}
    created = 0
    target_len = int(rng.integers(1, max_ops + 1))

    def pick(seq):
        return seq[int(rng.integers(0, len(seq)))]

    while len(ops) < target_len:
        kinds: list[str] = []
        weights: list[float] = []

        def offer(kind: str, weight: float) -> None:
            kinds.append(kind)
            weights.append(weight)

        if created < max_qubits:
            offer("new", 2.0)
        if created + 2 <= max_qubits and len(nodes) >= 2:
            offer("epr", 2.0)
        if owner:
            offer("gate", 2.0)
            offer("rot", 1.0)
            offer("measure", 1.0)
            if len(nodes) >= 2:
                offer("send", 2.0)
        pairs = [
            (a, b)
            for a in owner
            for b in owner
            if a != b and owner[a] == owner[b]
        ]
        if pairs:
            offer("two", 2.5)

        probs = np.array(weights) / sum(weights)
        kind = kinds[int(rng.choice(len(kinds), p=probs))]

        if kind == "new":
            ops.append(("new", pick(nodes)))
            owner[created] = ops[-1][1]
            created += 1
        elif kind == "epr":
            node_a = pick(nodes)
            node_b = pick([n for n in nodes if n != node_a])
            ops.append(("epr", node_a, node_b))
            owner[created] = node_a
            owner[created + 1] = node_b
            created += 2
        elif kind == "gate":
            ops.append(("gate", pick(GATES), pick(sorted(owner))))
        elif kind == "rot":
            ops.append(
                ("rot", pick(AXES), pick(sorted(owner)),
                 int(rng.integers(0, 256)))
            )
        elif kind == "two":
            control, target = pick(pairs)
            ops.append(("two", pick(TWO_KINDS), control, target))
        elif kind == "send":
            q = pick(sorted(owner))
            dest = pick([n for n in nodes if n != owner[q]])
            ops.append(("send", q, dest))
            owner[q] = dest
        else:
            q = pick(sorted(owner))
            ops.append(("measure", q))
            del owner[q]
    return ops


def run_distributed(net, app_id: int, ops: list[tuple],
                    nodes: tuple[str, ...]):
    """Execute ops over live control channels.

    Returns (outcomes, qubit_map, clients): recorded measurement bits per
    logical qubit, the owner/virtual-id of each still-live qubit, and the
    open clients (caller releases qubits and closes).
    """
    clients = {name: net.client(name, app_id) for name in nodes}
    qmap: dict[int, tuple[str, int]] = {}
    outcomes: dict[int, int] = {}
    next_q = 0
    for op in ops:
        if op[0] == "new":
            _, node = op
            qmap[next_q] = (node, clients[node].new_qubit())
            next_q += 1
        elif op[0] == "epr":
            _, node_a, node_b = op
            ent_a = clients[node_a].create_epr(
                net.entry(node_b), remote_app_id=app_id
            )
            ent_b = clients[node_b].recv_epr()
            qmap[next_q] = (node_a, ent_a.qubit_id)
            qmap[next_q + 1] = (node_b, ent_b.qubit_id)
            next_q += 2
        elif op[0] == "gate":
            _, name, q = op
            node, virt = qmap[q]
            clients[node].gate(name, virt)
        elif op[0] == "rot":
            _, axis, q, step = op
            node, virt = qmap[q]
            clients[node].rotate(axis, virt, step)
        elif op[0] == "two":
            _, kind, qc, qt = op
            node, virt_c = qmap[qc]
            _, virt_t = qmap[qt]
            if kind == "CNOT":
                clients[node].cnot(virt_c, virt_t)
            else:
                clients[node].cphase(virt_c, virt_t)
        elif op[0] == "send":
            _, q, dest = op
            node, virt = qmap[q]
            clients[node].send_qubit(virt, net.entry(dest), remote_app_id=app_id)
            qmap[q] = (dest, clients[dest].recv_qubit())
        else:
            _, q = op
            node, virt = qmap[q]
            outcomes[q] = clients[node].measure(virt)
            del qmap[q]
    return outcomes, qmap, clients


def run_reference(ops: list[tuple], outcomes: dict[int, int],
                  min_branch_prob: float = 1e-12):
    """Replay ops on one flat state vector, projecting measurements onto
    the recorded outcomes. Returns (state, order) with order listing the
    live logical qubits by creation."""
    state = np.array([1.0], dtype=np.complex128)
    order: list[int] = []
    next_q = 0

    def pos(q: int) -> int:
        return order.index(q)

    for op in ops:
        if op[0] == "new":
            state = np.kron(state, np.array([1.0, 0.0]))
            order.append(next_q)
            next_q += 1
        elif op[0] == "epr":
            state = np.kron(state, np.array([1.0, 0.0, 0.0, 0.0]))
            order.extend([next_q, next_q + 1])
            state = oracle.apply_single(state, pos(next_q), oracle.SINGLE["H"])
            state = oracle.apply_controlled(
                state, pos(next_q), pos(next_q + 1), oracle.CONTROLLED["CNOT"]
            )
            next_q += 2
        elif op[0] == "gate":
            _, name, q = op
            state = oracle.apply_single(state, pos(q), oracle.SINGLE[name])
        elif op[0] == "rot":
            _, axis, q, step = op
            state = oracle.apply_single(state, pos(q), oracle.rotation(axis, step))
        elif op[0] == "two":
            _, kind, qc, qt = op
            state = oracle.apply_controlled(
                state, pos(qc), pos(qt), oracle.CONTROLLED[kind]
            )
        elif op[0] == "send":
            pass  # ownership only; the state is unaffected
        else:
            _, q = op
            bit = outcomes[q]
            p_one = oracle.p_one(state, pos(q))
            prob = p_one if bit else 1.0 - p_one
            if prob <= min_branch_prob:
                raise AssertionError(
                    f"recorded outcome {bit} for qubit {q} has probability {prob}"
                )
            state, _ = oracle.project(state, pos(q), bit, demolition=True)
            order.remove(q)
    return state, order


def gather_distributed(net, nodes: tuple[str, ...], app_id: int,
                       qmap: dict[int, tuple[str, int]],
                       order: list[int]) -> np.ndarray:
    """Stitch the live qubits' registers into one vector aligned with
    the reference executor's qubit order."""
    if not order:
        return np.array([1.0], dtype=np.complex128)
    dumps = {name: net.dump(name) for name in nodes}
    placements: dict[int, tuple[tuple[str, int], int]] = {}
    registers: dict[tuple[str, int], dict] = {}
    for q in order:
        owner, virt = qmap[q]
        vq = next(
            v for v in dumps[owner]["virtual_qubits"]
            if v["virt_id"] == virt and v["owner_app_id"] == app_id
        )
        host = vq["sim_host"]
        sq = next(
            s for s in dumps[host]["simulated_qubits"]
            if s["sim_id"] == vq["sim_id"]
        )
        key = (host, sq["register_ref"])
        placements[q] = (key, sq["position"])
        registers[key] = next(
            r for r in dumps[host]["registers"]
            if r["register_id"] == sq["register_ref"]
        )

    keys = sorted(registers)
    offsets: dict[tuple[str, int], int] = {}
    total = 0
    for key in keys:
        offsets[key] = total
        total += registers[key]["num_qubits"]
    if total != len(order):
        raise AssertionError(
            f"{len(order)} live qubits but {total} register positions"
        )
    combined = oracle.kron_all(
        [_amplitudes(registers[key]) for key in keys]
    )
    perm = [
        offsets[placements[q][0]] + placements[q][1] for q in order
    ]
    if sorted(perm) != list(range(total)):
        raise AssertionError(f"register positions do not tile: {perm}")
    return oracle.permute_qubits(combined, perm)


def _amplitudes(register: dict) -> np.ndarray:
    out = np.empty(len(register["amplitudes"]), dtype=np.complex128)
    for i, pair in enumerate(register["amplitudes"]):
        re, im = pair.split(",")
        out[i] = complex(float(re), float(im))
    return out
