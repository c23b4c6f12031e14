"""Brute-force reference implementation used to check the simulator.

Everything here is deliberately computed by a different route than the
production code: full operator matrices via Kronecker chains and flat
index arithmetic instead of tensor reshapes, and rotations via the
matrix exponential. A shared bug would have to be a shared *idea*, not
shared code.

Conventions match the engine: qubit position 0 is the most significant
bit of the amplitude index, merging appends the source register's
qubits after the destination's, and a measurement draws
``1 if rng.random() < p_one else 0``.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import expm

SQ2 = 1.0 / np.sqrt(2.0)

I2 = np.eye(2, dtype=complex)
P0 = np.array([[1, 0], [0, 0]], dtype=complex)
P1 = np.array([[0, 0], [0, 1]], dtype=complex)

SINGLE = {
    "I": I2,
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
    "H": SQ2 * np.array([[1, 1], [1, -1]], dtype=complex),
    "K": SQ2 * np.array([[1, -1j], [1j, -1]], dtype=complex),
    "T": np.array([[1, 0], [0, SQ2 + SQ2 * 1j]], dtype=complex),
}

# Two-qubit gates in controlled form: identity on the control-0 branch,
# this unitary on the target when the control is 1.
CONTROLLED = {"CNOT": SINGLE["X"], "CPHASE": SINGLE["Z"]}


def rotation(axis: str, step: int) -> np.ndarray:
    """R_axis(step * 2*pi/256) built through the matrix exponential."""
    theta = step * 2.0 * np.pi / 256.0
    return expm(-1j * (theta / 2.0) * SINGLE[axis.upper()])


def gate_matrix(code: str, step: int = 0) -> np.ndarray:
    if code.startswith("ROT_"):
        return rotation(code[-1], step)
    return SINGLE[code]


def single_op(num_qubits: int, pos: int, u: np.ndarray) -> np.ndarray:
    """Full 2^n operator applying u at pos (MSB-first kron chain)."""
    op = np.ones((1, 1), dtype=complex)
    for i in range(num_qubits):
        op = np.kron(op, u if i == pos else I2)
    return op


def controlled_op(
    num_qubits: int, control: int, target: int, u: np.ndarray
) -> np.ndarray:
    """Full operator for a controlled-u between two positions."""
    hold = np.ones((1, 1), dtype=complex)
    fire = np.ones((1, 1), dtype=complex)
    for i in range(num_qubits):
        hold = np.kron(hold, P0 if i == control else I2)
        fire = np.kron(fire, P1 if i == control else (u if i == target else I2))
    return hold + fire


def apply_single(state: np.ndarray, pos: int, u: np.ndarray) -> np.ndarray:
    n = int(len(state)).bit_length() - 1
    return single_op(n, pos, u) @ state


def apply_controlled(
    state: np.ndarray, control: int, target: int, u: np.ndarray
) -> np.ndarray:
    n = int(len(state)).bit_length() - 1
    return controlled_op(n, control, target, u) @ state


def p_one(state: np.ndarray, pos: int) -> float:
    """Probability that measuring pos yields 1, via index arithmetic."""
    n = int(len(state)).bit_length() - 1
    idx = np.arange(len(state))
    mask = ((idx >> (n - 1 - pos)) & 1) == 1
    return float(np.sum(np.abs(state[mask]) ** 2))


def project(
    state: np.ndarray, pos: int, bit: int, demolition: bool
) -> tuple[np.ndarray, float]:
    """Collapse pos onto bit; returns (new state, branch probability)."""
    n = int(len(state)).bit_length() - 1
    idx = np.arange(len(state))
    on_branch = ((idx >> (n - 1 - pos)) & 1) == bit
    prob = float(np.sum(np.abs(state[on_branch]) ** 2))
    if prob <= 0.0:
        raise ValueError(f"projection onto bit {bit} at {pos} has probability 0")
    if demolition:
        # Ascending flat indices with one bit deleted keep the remaining
        # qubits in their original relative order.
        new = state[on_branch] / np.sqrt(prob)
    else:
        new = np.where(on_branch, state, 0.0) / np.sqrt(prob)
    return new, prob


def measure(
    state: np.ndarray, pos: int, rng: np.random.Generator, demolition: bool = True
) -> tuple[np.ndarray, int, float]:
    """Sample pos exactly as the engine does (same draw, same collapse)."""
    prob_one = p_one(state, pos)
    bit = 1 if rng.random() < prob_one else 0
    new, prob = project(state, pos, bit, demolition)
    return new, bit, prob


def kron_all(vectors: list[np.ndarray]) -> np.ndarray:
    out = np.ones(1, dtype=complex)
    for v in vectors:
        out = np.kron(out, v)
    return out


def permute_qubits(state: np.ndarray, perm: list[int]) -> np.ndarray:
    """Reorder so new position j holds the qubit currently at perm[j]."""
    n = int(len(state)).bit_length() - 1
    if sorted(perm) != list(range(n)):
        raise ValueError(f"{perm} is not a permutation of 0..{n - 1}")
    t = state.reshape((2,) * n)
    return t.transpose(perm).reshape(-1)


def phase_aligned(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """v rotated by the global phase that lines it up with u."""
    if u.shape != v.shape:
        raise ValueError(f"shape mismatch {u.shape} vs {v.shape}")
    anchor = int(np.argmax(np.abs(u)))
    if abs(v[anchor]) == 0.0:
        return v.copy()
    phase = (u[anchor] / abs(u[anchor])) / (v[anchor] / abs(v[anchor]))
    return v * phase


def max_deviation(u: np.ndarray, v: np.ndarray) -> float:
    """Largest amplitude difference after global-phase alignment."""
    return float(np.max(np.abs(u - phase_aligned(u, v))))
