"""Dense state-vector register engine.

A register holds the joint pure state of ``n`` qubits as a vector of
``2**n`` complex amplitudes. Conventions used throughout:

* Qubit ordering: position 0 is the most significant bit of the
  amplitude index, i.e. basis state ``|q0 q1 .. q_{n-1}>`` lives at
  index ``sum_j q_j * 2**(n-1-j)``.
* Merging register ``src`` into ``dst`` is the tensor product
  ``dst (x) src``: dst positions are unchanged, src position ``p``
  becomes ``dst.num_qubits + p``.
* Rotation angles are discretized: ``theta = step * 2*pi/256`` with
  ``step`` a single byte, and ``R_a(theta) = exp(-i*theta/2 * sigma_a)``.
* The state norm is checked after every mutating operation and the
  vector is renormalized after every projection.

The engine knows nothing about nodes or networking; it is driven
through :class:`RegisterEngine` so an alternative backend (e.g. a
density-matrix engine) can be substituted without touching the node
layer.
"""

from __future__ import annotations

import abc
import threading
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    InternalError,
    InvalidOperationError,
    InvalidQubitError,
    ResourceError,
)

SQRT_HALF = 1.0 / np.sqrt(2.0)
ROTATION_UNIT = 2.0 * np.pi / 256.0
NORM_TOL = 1e-9

# Gate codes accepted by gate_from_command. Rotations take a step byte,
# everything else ignores it.
SINGLE_QUBIT_CODES = (
    "I", "X", "Y", "Z", "H", "K", "T", "ROT_X", "ROT_Y", "ROT_Z",
)
TWO_QUBIT_CODES = ("CNOT", "CPHASE")

_PAULI = {
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}

_FIXED = {
    "I": np.eye(2, dtype=complex),
    "X": _PAULI["X"],
    "Y": _PAULI["Y"],
    "Z": _PAULI["Z"],
    "H": SQRT_HALF * np.array([[1, 1], [1, -1]], dtype=complex),
    # K maps Z to Y: K = (Y + Z)/sqrt(2), its own inverse.
    "K": SQRT_HALF * np.array([[1, -1j], [1j, -1]], dtype=complex),
    "T": np.array([[1, 0], [0, np.exp(1j * np.pi / 4)]], dtype=complex),
    "CNOT": np.array(
        [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]],
        dtype=complex,
    ),
    "CPHASE": np.diag([1, 1, 1, -1]).astype(complex),
}


@dataclass(frozen=True)
class Gate:
    """A unitary with its arity; two-qubit matrices index (control, target)."""

    code: str
    arity: int
    matrix: np.ndarray = field(repr=False)

    def is_unitary(self, tol: float = NORM_TOL) -> bool:
        eye = np.eye(self.matrix.shape[0])
        return bool(np.allclose(self.matrix.conj().T @ self.matrix, eye, atol=tol))


def gate_from_command(code: str, step: int = 0) -> Gate:
    """Build the Gate for a command code; rotations use the step byte."""
    if code in ("ROT_X", "ROT_Y", "ROT_Z"):
        if not 0 <= step <= 255:
            raise InvalidOperationError(f"rotation step {step} outside one byte")
        theta = step * ROTATION_UNIT
        sigma = _PAULI[code[-1]]
        matrix = (
            np.cos(theta / 2) * np.eye(2) - 1j * np.sin(theta / 2) * sigma
        ).astype(complex)
        return Gate(code, 1, matrix)
    if code in _FIXED:
        arity = 2 if code in TWO_QUBIT_CODES else 1
        return Gate(code, arity, _FIXED[code])
    raise InvalidOperationError(f"unknown gate code {code!r}")


@dataclass
class MeasurementOutcome:
    bit: int
    probability: float


class StateRegister:
    """Mutable amplitude vector; only the engine may write to it."""

    def __init__(self, register_id: int, amplitudes: np.ndarray, num_qubits: int):
        self.register_id = register_id
        self.amplitudes = amplitudes
        self.num_qubits = num_qubits
        self.valid = True

    def __repr__(self) -> str:
        return f"StateRegister(id={self.register_id}, qubits={self.num_qubits})"


class RegisterEngine(abc.ABC):
    """Backend interface the node layer drives."""

    @abc.abstractmethod
    def new_register(self) -> StateRegister: ...

    @abc.abstractmethod
    def register_from_amplitudes(
        self, num_qubits: int, amplitudes: np.ndarray
    ) -> StateRegister: ...

    @abc.abstractmethod
    def add_qubit(self, reg: StateRegister) -> int: ...

    @abc.abstractmethod
    def apply_single(self, reg: StateRegister, pos: int, gate: Gate) -> None: ...

    @abc.abstractmethod
    def apply_two(
        self, reg: StateRegister, control: int, target: int, gate: Gate
    ) -> None: ...

    @abc.abstractmethod
    def measure(
        self,
        reg: StateRegister,
        pos: int,
        demolition: bool,
        rng: np.random.Generator,
    ) -> MeasurementOutcome: ...

    @abc.abstractmethod
    def remove_qubit(
        self, reg: StateRegister, pos: int, rng: np.random.Generator
    ) -> None: ...

    @abc.abstractmethod
    def merge(self, dst: StateRegister, src: StateRegister) -> int: ...

    @abc.abstractmethod
    def dump_register(self, reg: StateRegister) -> str: ...


class StateVectorEngine(RegisterEngine):
    """Pure state-vector backend."""

    def __init__(self, max_register_qubits: int = 20):
        if max_register_qubits < 1:
            raise InvalidOperationError("max_register_qubits must be >= 1")
        self.max_register_qubits = max_register_qubits
        self._next_register_id = 1
        self._id_lock = threading.Lock()

    # -- lifecycle

    def new_register(self) -> StateRegister:
        reg = StateRegister(self._alloc_id(), np.ones(1, dtype=complex), 0)
        return reg

    def register_from_amplitudes(
        self, num_qubits: int, amplitudes: np.ndarray
    ) -> StateRegister:
        """Rebuild a register from serialized amplitudes (merge shipping)."""
        amps = np.asarray(amplitudes, dtype=complex).reshape(-1)
        if num_qubits < 0 or amps.shape[0] != 1 << num_qubits:
            raise InvalidOperationError("amplitude count does not match qubit count")
        if num_qubits > self.max_register_qubits:
            raise ResourceError(f"register of {num_qubits} qubits exceeds cap")
        reg = StateRegister(self._alloc_id(), amps.copy(), num_qubits)
        self._check_norm(reg)
        return reg

    def _alloc_id(self) -> int:
        with self._id_lock:
            rid = self._next_register_id
            self._next_register_id += 1
            return rid

    # -- operations

    def add_qubit(self, reg: StateRegister) -> int:
        self._check_valid(reg)
        if reg.num_qubits + 1 > self.max_register_qubits:
            raise ResourceError(
                f"register {reg.register_id} at cap {self.max_register_qubits}"
            )
        reg.amplitudes = np.kron(reg.amplitudes, np.array([1, 0], dtype=complex))
        reg.num_qubits += 1
        return reg.num_qubits - 1

    def apply_single(self, reg: StateRegister, pos: int, gate: Gate) -> None:
        self._check_valid(reg)
        self._check_pos(reg, pos)
        if gate.arity != 1:
            raise InvalidOperationError(f"{gate.code} is not a single-qubit gate")
        t = reg.amplitudes.reshape([2] * reg.num_qubits)
        t = np.moveaxis(t, pos, 0)
        t = np.tensordot(gate.matrix, t, axes=(1, 0))
        t = np.moveaxis(t, 0, pos)
        reg.amplitudes = np.ascontiguousarray(t).reshape(-1)
        self._check_norm(reg)

    def apply_two(
        self, reg: StateRegister, control: int, target: int, gate: Gate
    ) -> None:
        self._check_valid(reg)
        self._check_pos(reg, control)
        self._check_pos(reg, target)
        if control == target:
            raise InvalidOperationError("control and target must differ")
        if gate.arity != 2:
            raise InvalidOperationError(f"{gate.code} is not a two-qubit gate")
        n = reg.num_qubits
        t = reg.amplitudes.reshape([2] * n)
        t = np.moveaxis(t, (control, target), (0, 1))
        rest = t.shape[2:]
        t = gate.matrix @ t.reshape(4, -1)
        t = t.reshape((2, 2) + rest)
        t = np.moveaxis(t, (0, 1), (control, target))
        reg.amplitudes = np.ascontiguousarray(t).reshape(-1)
        self._check_norm(reg)

    def measure(
        self,
        reg: StateRegister,
        pos: int,
        demolition: bool,
        rng: np.random.Generator,
    ) -> MeasurementOutcome:
        self._check_valid(reg)
        self._check_pos(reg, pos)
        # Copy before projecting: readers of the old vector (debug dumps)
        # must never observe a half-written buffer.
        t = reg.amplitudes.reshape([2] * reg.num_qubits).copy()
        t = np.moveaxis(t, pos, 0)
        p_one = float(np.sum(np.abs(t[1]) ** 2))
        bit = 1 if rng.random() < p_one else 0
        prob = p_one if bit else 1.0 - p_one
        if prob <= 0.0:
            # rng.random() < p_one cannot pick a zero-probability branch;
            # reaching this means the state was already denormalized.
            raise InternalError("measured a zero-probability branch")
        scale = 1.0 / np.sqrt(prob)
        if demolition:
            kept = np.ascontiguousarray(t[bit]) * scale
            reg.amplitudes = kept.reshape(-1)
            reg.num_qubits -= 1
        else:
            t[1 - bit] = 0.0
            t = np.moveaxis(t, 0, pos) * scale
            reg.amplitudes = np.ascontiguousarray(t).reshape(-1)
        self._check_norm(reg)
        return MeasurementOutcome(bit, prob)

    def remove_qubit(
        self, reg: StateRegister, pos: int, rng: np.random.Generator
    ) -> None:
        # Discarding is a demolition measurement with the outcome dropped;
        # for an unentangled qubit the remaining state is untouched either way.
        self.measure(reg, pos, demolition=True, rng=rng)

    def merge(self, dst: StateRegister, src: StateRegister) -> int:
        self._check_valid(dst)
        self._check_valid(src)
        if dst is src or dst.register_id == src.register_id:
            raise InvalidOperationError("cannot merge a register with itself")
        total = dst.num_qubits + src.num_qubits
        if total > self.max_register_qubits:
            raise ResourceError(
                f"merge of {total} qubits exceeds cap {self.max_register_qubits}"
            )
        offset = dst.num_qubits
        dst.amplitudes = np.kron(dst.amplitudes, src.amplitudes)
        dst.num_qubits = total
        src.valid = False
        src.amplitudes = np.ones(0, dtype=complex)
        self._check_norm(dst)
        return offset

    def dump_register(self, reg: StateRegister) -> str:
        """Debug dump: id, size, then one "re,im" pair per amplitude."""
        self._check_valid(reg)
        lines = [f"register {reg.register_id} qubits={reg.num_qubits}"]
        lines.extend(f"{a.real:.12g},{a.imag:.12g}" for a in reg.amplitudes)
        return "\n".join(lines)

    # -- checks

    @staticmethod
    def _check_valid(reg: StateRegister) -> None:
        if not reg.valid:
            raise InvalidOperationError(
                f"register {reg.register_id} was absorbed by a merge"
            )

    @staticmethod
    def _check_pos(reg: StateRegister, pos: int) -> None:
        if not 0 <= pos < reg.num_qubits:
            raise InvalidQubitError(
                f"position {pos} outside register of {reg.num_qubits} qubits"
            )

    @staticmethod
    def _check_norm(reg: StateRegister) -> None:
        norm = float(np.sum(np.abs(reg.amplitudes) ** 2))
        if abs(norm - 1.0) > NORM_TOL:
            raise InternalError(
                f"register {reg.register_id} norm drifted to {norm!r}"
            )
