"""Frame and body codec for the backend peer protocol.

Frame layout, all integers big-endian:

    length      u32   bytes after this field (min 10)
    request_id  u64   correlation id, unique per connection
    kind        u8    0 = request, 1 = response
    op          u8    operation code
    body        ...   op-specific, may be empty

A header-only frame is therefore 14 bytes on the wire. Responses carry
a leading status byte; non-zero status replaces the op payload with an
error record (code, message, and a forwarding address for MOVED).

Register payloads serialize amplitudes as interleaved float64
(re, im) pairs, big-endian, most-significant qubit first.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from ..errors import ProtocolError
from ..locks import LockId

MAX_FRAME = 64 * 1024 * 1024
HEADER = struct.Struct(">QBB")  # request_id, kind, op (after the length field)

KIND_REQUEST = 0
KIND_RESPONSE = 1


class Op(IntEnum):
    APPLY_GATE = 1
    APPLY_TWO = 2
    MEASURE = 3
    REMOVE = 4
    MERGE_PULL = 5
    XFER_QUBIT = 6
    EPR_OFFER = 7
    LOCK_ACQ = 8
    LOCK_REL = 9
    GET_TIME = 10
    NODE_STATE_DUMP = 11
    QUBIT_INFO = 12
    MERGE_EXEC = 13
    MERGE_COMMIT = 14
    REMAP = 15
    SET_HOLDER = 16
    PEER_HELLO = 17


class Status(IntEnum):
    OK = 0
    UNKNOWN_ID = 1
    NO_QUBIT = 2
    DENIED = 3
    UNAVAILABLE = 4
    PROTOCOL = 5
    LOCK_FAILED = 6
    MOVED = 7
    INTERNAL = 8
    UNSUPPORTED = 9
    TIMEOUT = 10


@dataclass
class PeerFrame:
    request_id: int
    kind: int
    op: int
    body: bytes = b""


def encode_frame(frame: PeerFrame) -> bytes:
    payload = HEADER.pack(frame.request_id, frame.kind, frame.op) + frame.body
    if len(payload) + 4 > MAX_FRAME:
        raise ProtocolError(f"frame of {len(payload) + 4} bytes exceeds cap")
    return struct.pack(">I", len(payload)) + payload


def decode_frame(data: bytes) -> PeerFrame:
    if len(data) < 4:
        raise ProtocolError("frame shorter than its length field")
    (length,) = struct.unpack_from(">I", data)
    if length < HEADER.size or length + 4 > MAX_FRAME:
        raise ProtocolError(f"frame length {length} out of range")
    if len(data) != length + 4:
        raise ProtocolError("frame length field does not match data")
    request_id, kind, op = HEADER.unpack_from(data, 4)
    if kind not in (KIND_REQUEST, KIND_RESPONSE):
        raise ProtocolError(f"unknown frame kind {kind}")
    return PeerFrame(request_id, kind, op, data[4 + HEADER.size :])


def read_frame(recv_exactly) -> PeerFrame:
    """Read one frame via a recv_exactly(n) -> bytes callable."""
    (length,) = struct.unpack(">I", recv_exactly(4))
    if length < HEADER.size or length + 4 > MAX_FRAME:
        raise ProtocolError(f"frame length {length} out of range")
    return decode_frame(struct.pack(">I", length) + recv_exactly(length))


# -- body primitives


class ByteWriter:
    def __init__(self) -> None:
        self._parts: list[bytes] = []

    def u8(self, v: int) -> "ByteWriter":
        self._parts.append(struct.pack(">B", v))
        return self

    def u16(self, v: int) -> "ByteWriter":
        self._parts.append(struct.pack(">H", v))
        return self

    def u32(self, v: int) -> "ByteWriter":
        self._parts.append(struct.pack(">I", v))
        return self

    def u64(self, v: int) -> "ByteWriter":
        self._parts.append(struct.pack(">Q", v))
        return self

    def f64(self, v: float) -> "ByteWriter":
        self._parts.append(struct.pack(">d", v))
        return self

    def text(self, v: str) -> "ByteWriter":
        raw = v.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise ProtocolError("string field exceeds 64 KiB")
        self._parts.append(struct.pack(">H", len(raw)) + raw)
        return self

    def blob(self, v: bytes) -> "ByteWriter":
        self._parts.append(struct.pack(">I", len(v)) + v)
        return self

    def getvalue(self) -> bytes:
        return b"".join(self._parts)


class ByteReader:
    def __init__(self, data: bytes):
        self._data = data
        self._off = 0

    def _take(self, fmt: str):
        size = struct.calcsize(fmt)
        if self._off + size > len(self._data):
            raise ProtocolError("body truncated")
        (v,) = struct.unpack_from(fmt, self._data, self._off)
        self._off += size
        return v

    def u8(self) -> int:
        return self._take(">B")

    def u16(self) -> int:
        return self._take(">H")

    def u32(self) -> int:
        return self._take(">I")

    def u64(self) -> int:
        return self._take(">Q")

    def f64(self) -> float:
        return self._take(">d")

    def text(self) -> str:
        size = self.u16()
        if self._off + size > len(self._data):
            raise ProtocolError("body truncated")
        raw = self._data[self._off : self._off + size]
        self._off += size
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ProtocolError("string field is not valid UTF-8") from exc

    def blob(self) -> bytes:
        size = self.u32()
        if self._off + size > len(self._data):
            raise ProtocolError("body truncated")
        raw = self._data[self._off : self._off + size]
        self._off += size
        return raw

    def done(self) -> None:
        if self._off != len(self._data):
            raise ProtocolError(f"{len(self._data) - self._off} trailing bytes")


# -- shared records


@dataclass
class QubitHolder:
    """Backreference from a simulated qubit to its owning virtual qubit."""

    node: str
    app_id: int
    virt_id: int

    def pack(self, w: ByteWriter) -> None:
        w.text(self.node).u16(self.app_id).u16(self.virt_id)

    @classmethod
    def unpack(cls, r: ByteReader) -> "QubitHolder":
        return cls(r.text(), r.u16(), r.u16())


@dataclass
class ShippedQubit:
    sim_id: int
    position: int
    created_at: int
    holder: QubitHolder

    def pack(self, w: ByteWriter) -> None:
        w.u64(self.sim_id).u16(self.position).u64(self.created_at)
        self.holder.pack(w)

    @classmethod
    def unpack(cls, r: ByteReader) -> "ShippedQubit":
        return cls(r.u64(), r.u16(), r.u64(), QubitHolder.unpack(r))


@dataclass
class RegisterPayload:
    """A serialized register in transit between hosts."""

    num_qubits: int
    amplitudes: np.ndarray
    qubits: list[ShippedQubit] = field(default_factory=list)

    def pack(self, w: ByteWriter) -> None:
        if self.amplitudes.shape[0] != 1 << self.num_qubits:
            raise ProtocolError("amplitude count does not match qubit count")
        w.u16(self.num_qubits)
        interleaved = np.empty(2 * self.amplitudes.shape[0], dtype=">f8")
        interleaved[0::2] = self.amplitudes.real
        interleaved[1::2] = self.amplitudes.imag
        w.blob(interleaved.tobytes())
        w.u16(len(self.qubits))
        for q in self.qubits:
            q.pack(w)

    @classmethod
    def unpack(cls, r: ByteReader) -> "RegisterPayload":
        num_qubits = r.u16()
        raw = r.blob()
        expected = (1 << num_qubits) * 16
        if len(raw) != expected:
            raise ProtocolError(
                f"register payload carries {len(raw)} amplitude bytes, "
                f"expected {expected}"
            )
        flat = np.frombuffer(raw, dtype=">f8")
        amps = (flat[0::2] + 1j * flat[1::2]).astype(complex)
        norm = float(np.sum(np.abs(amps) ** 2))
        if abs(norm - 1.0) > 1e-9:
            raise ProtocolError(f"shipped register norm {norm!r} violates unit norm")
        count = r.u16()
        qubits = [ShippedQubit.unpack(r) for _ in range(count)]
        return cls(num_qubits, amps, qubits)


def pack_lock_id(w: ByteWriter, lid: LockId) -> None:
    w.text(lid.node).text(lid.kind).u64(lid.id)


def unpack_lock_id(r: ByteReader) -> LockId:
    return LockId(r.text(), r.text(), r.u64())


# -- request bodies


@dataclass
class PeerHello:
    node_name: str

    OP = Op.PEER_HELLO

    def pack(self) -> bytes:
        return ByteWriter().text(self.node_name).getvalue()

    @classmethod
    def unpack(cls, data: bytes) -> "PeerHello":
        r = ByteReader(data)
        v = cls(r.text())
        r.done()
        return v


@dataclass
class ApplyGateReq:
    sim_id: int
    code: str
    step: int = 0

    OP = Op.APPLY_GATE

    def pack(self) -> bytes:
        return ByteWriter().u64(self.sim_id).text(self.code).u8(self.step).getvalue()

    @classmethod
    def unpack(cls, data: bytes) -> "ApplyGateReq":
        r = ByteReader(data)
        v = cls(r.u64(), r.text(), r.u8())
        r.done()
        return v


@dataclass
class ApplyTwoReq:
    txn: str
    control_sim: int
    target_sim: int
    code: str

    OP = Op.APPLY_TWO

    def pack(self) -> bytes:
        return (
            ByteWriter()
            .text(self.txn)
            .u64(self.control_sim)
            .u64(self.target_sim)
            .text(self.code)
            .getvalue()
        )

    @classmethod
    def unpack(cls, data: bytes) -> "ApplyTwoReq":
        r = ByteReader(data)
        v = cls(r.text(), r.u64(), r.u64(), r.text())
        r.done()
        return v


@dataclass
class MeasureReq:
    sim_id: int
    demolition: bool

    OP = Op.MEASURE

    def pack(self) -> bytes:
        return ByteWriter().u64(self.sim_id).u8(int(self.demolition)).getvalue()

    @classmethod
    def unpack(cls, data: bytes) -> "MeasureReq":
        r = ByteReader(data)
        v = cls(r.u64(), bool(r.u8()))
        r.done()
        return v


@dataclass
class MeasureResp:
    bit: int
    probability: float

    def pack(self) -> bytes:
        return ByteWriter().u8(self.bit).f64(self.probability).getvalue()

    @classmethod
    def unpack(cls, data: bytes) -> "MeasureResp":
        r = ByteReader(data)
        v = cls(r.u8(), r.f64())
        r.done()
        return v


@dataclass
class RemoveReq:
    sim_id: int

    OP = Op.REMOVE

    def pack(self) -> bytes:
        return ByteWriter().u64(self.sim_id).getvalue()

    @classmethod
    def unpack(cls, data: bytes) -> "RemoveReq":
        r = ByteReader(data)
        v = cls(r.u64())
        r.done()
        return v


@dataclass
class QubitInfoReq:
    sim_id: int

    OP = Op.QUBIT_INFO

    def pack(self) -> bytes:
        return ByteWriter().u64(self.sim_id).getvalue()

    @classmethod
    def unpack(cls, data: bytes) -> "QubitInfoReq":
        r = ByteReader(data)
        v = cls(r.u64())
        r.done()
        return v


@dataclass
class QubitInfoResp:
    register_ref: int
    position: int
    created_at: int

    def pack(self) -> bytes:
        return (
            ByteWriter()
            .u64(self.register_ref)
            .u16(self.position)
            .u64(self.created_at)
            .getvalue()
        )

    @classmethod
    def unpack(cls, data: bytes) -> "QubitInfoResp":
        r = ByteReader(data)
        v = cls(r.u64(), r.u16(), r.u64())
        r.done()
        return v


@dataclass
class MergePullReq:
    txn: str
    register_ref: int

    OP = Op.MERGE_PULL

    def pack(self) -> bytes:
        return ByteWriter().text(self.txn).u64(self.register_ref).getvalue()

    @classmethod
    def unpack(cls, data: bytes) -> "MergePullReq":
        r = ByteReader(data)
        v = cls(r.text(), r.u64())
        r.done()
        return v


@dataclass
class MergePullResp:
    payload: RegisterPayload

    def pack(self) -> bytes:
        w = ByteWriter()
        self.payload.pack(w)
        return w.getvalue()

    @classmethod
    def unpack(cls, data: bytes) -> "MergePullResp":
        r = ByteReader(data)
        v = cls(RegisterPayload.unpack(r))
        r.done()
        return v


@dataclass
class MergeExecReq:
    txn: str
    control_sim: int
    target_host: str
    target_sim: int
    target_register: int
    code: str

    OP = Op.MERGE_EXEC

    def pack(self) -> bytes:
        return (
            ByteWriter()
            .text(self.txn)
            .u64(self.control_sim)
            .text(self.target_host)
            .u64(self.target_sim)
            .u64(self.target_register)
            .text(self.code)
            .getvalue()
        )

    @classmethod
    def unpack(cls, data: bytes) -> "MergeExecReq":
        r = ByteReader(data)
        v = cls(r.text(), r.u64(), r.text(), r.u64(), r.u64(), r.text())
        r.done()
        return v


@dataclass
class MergeCommitReq:
    register_ref: int
    new_host: str
    mapping: list[tuple[int, int]]

    OP = Op.MERGE_COMMIT

    def pack(self) -> bytes:
        w = ByteWriter().u64(self.register_ref).text(self.new_host)
        w.u16(len(self.mapping))
        for old, new in self.mapping:
            w.u64(old).u64(new)
        return w.getvalue()

    @classmethod
    def unpack(cls, data: bytes) -> "MergeCommitReq":
        r = ByteReader(data)
        reg = r.u64()
        host = r.text()
        mapping = [(r.u64(), r.u64()) for _ in range(r.u16())]
        r.done()
        return cls(reg, host, mapping)


@dataclass
class RemapItem:
    app_id: int
    virt_id: int
    old_host: str
    old_sim: int
    new_host: str
    new_sim: int

    def pack(self, w: ByteWriter) -> None:
        w.u16(self.app_id).u16(self.virt_id).text(self.old_host)
        w.u64(self.old_sim).text(self.new_host).u64(self.new_sim)

    @classmethod
    def unpack(cls, r: ByteReader) -> "RemapItem":
        return cls(r.u16(), r.u16(), r.text(), r.u64(), r.text(), r.u64())


@dataclass
class RemapReq:
    items: list[RemapItem]

    OP = Op.REMAP

    def pack(self) -> bytes:
        w = ByteWriter().u16(len(self.items))
        for item in self.items:
            item.pack(w)
        return w.getvalue()

    @classmethod
    def unpack(cls, data: bytes) -> "RemapReq":
        r = ByteReader(data)
        items = [RemapItem.unpack(r) for _ in range(r.u16())]
        r.done()
        return cls(items)


@dataclass
class SetHolderReq:
    sim_id: int
    holder: QubitHolder

    OP = Op.SET_HOLDER

    def pack(self) -> bytes:
        w = ByteWriter().u64(self.sim_id)
        self.holder.pack(w)
        return w.getvalue()

    @classmethod
    def unpack(cls, data: bytes) -> "SetHolderReq":
        r = ByteReader(data)
        v = cls(r.u64(), QubitHolder.unpack(r))
        r.done()
        return v


@dataclass
class XferQubitReq:
    app_id: int
    sim_host: str
    sim_id: int

    OP = Op.XFER_QUBIT

    def pack(self) -> bytes:
        return (
            ByteWriter().u16(self.app_id).text(self.sim_host).u64(self.sim_id).getvalue()
        )

    @classmethod
    def unpack(cls, data: bytes) -> "XferQubitReq":
        r = ByteReader(data)
        v = cls(r.u16(), r.text(), r.u64())
        r.done()
        return v


@dataclass
class XferQubitResp:
    virt_id: int

    def pack(self) -> bytes:
        return ByteWriter().u16(self.virt_id).getvalue()

    @classmethod
    def unpack(cls, data: bytes) -> "XferQubitResp":
        r = ByteReader(data)
        v = cls(r.u16())
        r.done()
        return v


@dataclass
class EprOfferReq:
    app_id: int
    sim_host: str
    sim_id: int
    ent_node_a: str
    ent_node_b: str
    ent_sequence: int
    ent_created_at: int

    OP = Op.EPR_OFFER

    def pack(self) -> bytes:
        return (
            ByteWriter()
            .u16(self.app_id)
            .text(self.sim_host)
            .u64(self.sim_id)
            .text(self.ent_node_a)
            .text(self.ent_node_b)
            .u32(self.ent_sequence)
            .u64(self.ent_created_at)
            .getvalue()
        )

    @classmethod
    def unpack(cls, data: bytes) -> "EprOfferReq":
        r = ByteReader(data)
        v = cls(r.u16(), r.text(), r.u64(), r.text(), r.text(), r.u32(), r.u64())
        r.done()
        return v


@dataclass
class LockAcqReq:
    txn: str
    locks: list[LockId]
    wait_ms: int

    OP = Op.LOCK_ACQ

    def pack(self) -> bytes:
        w = ByteWriter().text(self.txn).u16(len(self.locks))
        for lid in self.locks:
            pack_lock_id(w, lid)
        w.u32(self.wait_ms)
        return w.getvalue()

    @classmethod
    def unpack(cls, data: bytes) -> "LockAcqReq":
        r = ByteReader(data)
        txn = r.text()
        locks = [unpack_lock_id(r) for _ in range(r.u16())]
        wait_ms = r.u32()
        r.done()
        return cls(txn, locks, wait_ms)


@dataclass
class LockAcqResp:
    granted: bool

    def pack(self) -> bytes:
        return ByteWriter().u8(int(self.granted)).getvalue()

    @classmethod
    def unpack(cls, data: bytes) -> "LockAcqResp":
        r = ByteReader(data)
        v = cls(bool(r.u8()))
        r.done()
        return v


@dataclass
class LockRelReq:
    txn: str
    locks: list[LockId]

    OP = Op.LOCK_REL

    def pack(self) -> bytes:
        w = ByteWriter().text(self.txn).u16(len(self.locks))
        for lid in self.locks:
            pack_lock_id(w, lid)
        return w.getvalue()

    @classmethod
    def unpack(cls, data: bytes) -> "LockRelReq":
        r = ByteReader(data)
        txn = r.text()
        locks = [unpack_lock_id(r) for _ in range(r.u16())]
        r.done()
        return cls(txn, locks)


@dataclass
class GetTimeReq:
    sim_id: int

    OP = Op.GET_TIME

    def pack(self) -> bytes:
        return ByteWriter().u64(self.sim_id).getvalue()

    @classmethod
    def unpack(cls, data: bytes) -> "GetTimeReq":
        r = ByteReader(data)
        v = cls(r.u64())
        r.done()
        return v


@dataclass
class GetTimeResp:
    created_at: int

    def pack(self) -> bytes:
        return ByteWriter().u64(self.created_at).getvalue()

    @classmethod
    def unpack(cls, data: bytes) -> "GetTimeResp":
        r = ByteReader(data)
        v = cls(r.u64())
        r.done()
        return v


@dataclass
class EmptyBody:
    def pack(self) -> bytes:
        return b""

    @classmethod
    def unpack(cls, data: bytes) -> "EmptyBody":
        if data:
            raise ProtocolError("unexpected body bytes")
        return cls()


@dataclass
class NodeStateDumpReq(EmptyBody):
    OP = Op.NODE_STATE_DUMP


@dataclass
class BlobResp:
    data: bytes

    def pack(self) -> bytes:
        return ByteWriter().blob(self.data).getvalue()

    @classmethod
    def unpack(cls, data: bytes) -> "BlobResp":
        r = ByteReader(data)
        v = cls(r.blob())
        r.done()
        return v


@dataclass
class ErrorBody:
    """Error payload of a non-OK response."""

    status: Status
    message: str
    moved_host: str = ""
    moved_sim: int = 0

    def pack(self) -> bytes:
        return (
            ByteWriter()
            .text(self.message)
            .text(self.moved_host)
            .u64(self.moved_sim)
            .getvalue()
        )

    @classmethod
    def unpack(cls, status: Status, data: bytes) -> "ErrorBody":
        r = ByteReader(data)
        v = cls(status, r.text(), r.text(), r.u64())
        r.done()
        return v


REQUEST_TYPES = {
    Op.PEER_HELLO: PeerHello,
    Op.APPLY_GATE: ApplyGateReq,
    Op.APPLY_TWO: ApplyTwoReq,
    Op.MEASURE: MeasureReq,
    Op.REMOVE: RemoveReq,
    Op.QUBIT_INFO: QubitInfoReq,
    Op.MERGE_PULL: MergePullReq,
    Op.MERGE_EXEC: MergeExecReq,
    Op.MERGE_COMMIT: MergeCommitReq,
    Op.REMAP: RemapReq,
    Op.SET_HOLDER: SetHolderReq,
    Op.XFER_QUBIT: XferQubitReq,
    Op.EPR_OFFER: EprOfferReq,
    Op.LOCK_ACQ: LockAcqReq,
    Op.LOCK_REL: LockRelReq,
    Op.GET_TIME: GetTimeReq,
    Op.NODE_STATE_DUMP: NodeStateDumpReq,
}

RESPONSE_TYPES = {
    Op.PEER_HELLO: PeerHello,
    Op.APPLY_GATE: EmptyBody,
    Op.APPLY_TWO: EmptyBody,
    Op.MEASURE: MeasureResp,
    Op.REMOVE: EmptyBody,
    Op.QUBIT_INFO: QubitInfoResp,
    Op.MERGE_PULL: MergePullResp,
    Op.MERGE_EXEC: EmptyBody,
    Op.MERGE_COMMIT: EmptyBody,
    Op.REMAP: EmptyBody,
    Op.SET_HOLDER: EmptyBody,
    Op.XFER_QUBIT: XferQubitResp,
    Op.EPR_OFFER: XferQubitResp,
    Op.LOCK_ACQ: LockAcqResp,
    Op.LOCK_REL: EmptyBody,
    Op.GET_TIME: GetTimeResp,
    Op.NODE_STATE_DUMP: BlobResp,
}


def decode_request_body(op: int, body: bytes):
    try:
        cls = REQUEST_TYPES[Op(op)]
    except (ValueError, KeyError) as exc:
        raise ProtocolError(f"unknown request op {op}") from exc
    return cls.unpack(body)


def encode_response_body(op: Op, payload) -> bytes:
    return bytes([Status.OK]) + payload.pack()


def encode_error_body(err: ErrorBody) -> bytes:
    return bytes([err.status]) + err.pack()


def decode_response_body(op: int, body: bytes):
    """Returns (Status, payload-or-ErrorBody)."""
    if not body:
        raise ProtocolError("response body missing status byte")
    try:
        status = Status(body[0])
    except ValueError as exc:
        raise ProtocolError(f"unknown response status {body[0]}") from exc
    if status is Status.OK:
        try:
            cls = RESPONSE_TYPES[Op(op)]
        except (ValueError, KeyError) as exc:
            raise ProtocolError(f"unknown response op {op}") from exc
        return status, cls.unpack(body[1:])
    return status, ErrorBody.unpack(status, body[1:])
