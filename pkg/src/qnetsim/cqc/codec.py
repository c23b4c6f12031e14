"""Control-channel wire format.

Everything is big-endian. A message is one fixed 8-byte header followed
by exactly `payload_length` bytes of payload:

    CqcHeader:    version u8 | msg_type u8 | app_id u16 | payload_length u32

Command and factory messages carry one command tree in the payload:

    CommandHeader: qubit_id u16 | instruction u8 | options u8
    ExtraHeader:   extra_qubit_id u16 | remote_app_id u16 | remote_node u32
                   | remote_port u16 | action_length u32 | step u8 | pad u8

The extra header is present exactly when the instruction consumes one of
its fields (qubit transfer, entanglement, rotations, two-qubit gates,
pair measurement, bulk allocation), when the options request an appended
block, or on the top command of a factory message (whose repetition
count rides in the step byte). `action_length` counts the bytes of the
appended block: a back-to-back sequence of further commands, each of
which may carry its own nested block.

Reply payloads: qubit id (u16) for NEW_OK/RECV/EXPIRE, one byte for
MEASOUT, u64 milliseconds for INF_TIME, and for EPR_OK the qubit id
(u16) followed by entanglement info (endpoint addresses as u32 each,
pair sequence u32, creation timestamp u64). HELLO replies carry the
node's qubit capacity (u16) plus its name (u8 length-prefixed). DONE
and error replies have empty payloads.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import IntEnum

from ..errors import ProtocolError

CQC_VERSION = 1

MAX_PAYLOAD = 1 << 20

_HEADER = struct.Struct(">BBHI")
_CMD = struct.Struct(">HBB")
_EXTRA = struct.Struct(">HHIHIBB")

HEADER_LEN = _HEADER.size
CMD_LEN = _CMD.size
EXTRA_LEN = _EXTRA.size


class MsgType(IntEnum):
    HELLO = 0
    COMMAND = 1
    FACTORY = 2
    GET_TIME = 3
    NEW_OK = 4
    EXPIRE = 5
    DONE = 6
    RECV = 7
    EPR_OK = 8
    MEASOUT = 9
    INF_TIME = 10
    ERR_GENERAL = 20
    ERR_NOQUBIT = 21
    ERR_UNKNOWN = 22
    ERR_UNAVAILABLE = 23
    ERR_DENIED = 24
    ERR_VERSION = 25
    ERR_UNSUPP = 26
    ERR_TIMEOUT = 27


ERROR_TYPES = frozenset(
    {
        MsgType.ERR_GENERAL,
        MsgType.ERR_NOQUBIT,
        MsgType.ERR_UNKNOWN,
        MsgType.ERR_UNAVAILABLE,
        MsgType.ERR_DENIED,
        MsgType.ERR_VERSION,
        MsgType.ERR_UNSUPP,
        MsgType.ERR_TIMEOUT,
    }
)


class Cmd(IntEnum):
    NEW = 1
    ALLOCATE = 2
    RELEASE = 3
    RESET = 4
    MEASURE = 5
    MEASURE_INPLACE = 6
    SEND = 7
    RECV = 8
    EPR = 9
    RECV_EPR = 10
    SWAP = 11
    I = 12
    X = 13
    Y = 14
    Z = 15
    H = 16
    K = 17
    T = 18
    ROT_X = 19
    ROT_Y = 20
    ROT_Z = 21
    CNOT = 22
    CPHASE = 23


class Opt(IntEnum):
    NOTIFY = 0x01
    ACTION = 0x02
    BLOCK = 0x04
    IFTHEN = 0x08


_EXTRA_INSTRUCTIONS = frozenset(
    {
        Cmd.ALLOCATE,
        Cmd.SEND,
        Cmd.RECV,
        Cmd.EPR,
        Cmd.RECV_EPR,
        Cmd.SWAP,
        Cmd.ROT_X,
        Cmd.ROT_Y,
        Cmd.ROT_Z,
        Cmd.CNOT,
        Cmd.CPHASE,
    }
)

GATE_COMMANDS: dict[int, str] = {
    Cmd.I: "I",
    Cmd.X: "X",
    Cmd.Y: "Y",
    Cmd.Z: "Z",
    Cmd.H: "H",
    Cmd.K: "K",
    Cmd.T: "T",
}

ROTATION_COMMANDS: dict[int, str] = {
    Cmd.ROT_X: "ROT_X",
    Cmd.ROT_Y: "ROT_Y",
    Cmd.ROT_Z: "ROT_Z",
}

TWO_QUBIT_COMMANDS: dict[int, str] = {
    Cmd.CNOT: "CNOT",
    Cmd.CPHASE: "CPHASE",
}


def instruction_requires_extra(instruction: int) -> bool:
    return instruction in _EXTRA_INSTRUCTIONS


def command_has_extra(instruction: int, options: int, factory_top: bool) -> bool:
    if factory_top:
        return True
    if options & (Opt.ACTION | Opt.IFTHEN):
        return True
    return instruction_requires_extra(instruction)


@dataclass(frozen=True)
class CqcHeader:
    version: int
    msg_type: int
    app_id: int
    payload_length: int

    def pack(self) -> bytes:
        return _HEADER.pack(
            self.version, self.msg_type, self.app_id, self.payload_length
        )

    @classmethod
    def unpack(cls, data: bytes) -> "CqcHeader":
        if len(data) != HEADER_LEN:
            raise ProtocolError(f"message header needs {HEADER_LEN} bytes")
        return cls(*_HEADER.unpack(data))


@dataclass(frozen=True)
class CommandHeader:
    qubit_id: int
    instruction: int
    options: int

    def pack(self) -> bytes:
        return _CMD.pack(self.qubit_id, self.instruction, self.options)

    @classmethod
    def unpack(cls, data: bytes) -> "CommandHeader":
        if len(data) != CMD_LEN:
            raise ProtocolError(f"command header needs {CMD_LEN} bytes")
        return cls(*_CMD.unpack(data))


@dataclass(frozen=True)
class ExtraHeader:
    extra_qubit_id: int = 0
    remote_app_id: int = 0
    remote_node: int = 0
    remote_port: int = 0
    action_length: int = 0
    step: int = 0
    padding: int = 0

    def pack(self) -> bytes:
        return _EXTRA.pack(
            self.extra_qubit_id,
            self.remote_app_id,
            self.remote_node,
            self.remote_port,
            self.action_length,
            self.step,
            self.padding,
        )

    @classmethod
    def unpack(cls, data: bytes) -> "ExtraHeader":
        if len(data) != EXTRA_LEN:
            raise ProtocolError(f"extra header needs {EXTRA_LEN} bytes")
        return cls(*_EXTRA.unpack(data))


@dataclass
class ParsedCommand:
    header: CommandHeader
    extra: ExtraHeader | None = None
    block: list["ParsedCommand"] = field(default_factory=list)

    @property
    def qubit_id(self) -> int:
        return self.header.qubit_id

    @property
    def instruction(self) -> int:
        return self.header.instruction

    @property
    def options(self) -> int:
        return self.header.options


class _Cursor:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ProtocolError("command payload truncated")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    @property
    def remaining(self) -> int:
        return len(self.data) - self.pos


def _parse_command(cur: _Cursor, factory_top: bool) -> ParsedCommand:
    header = CommandHeader.unpack(cur.take(CMD_LEN))
    extra = None
    block: list[ParsedCommand] = []
    if command_has_extra(header.instruction, header.options, factory_top):
        extra = ExtraHeader.unpack(cur.take(EXTRA_LEN))
        if extra.action_length:
            if not header.options & (Opt.ACTION | Opt.IFTHEN):
                raise ProtocolError("appended block without a block option")
            end = cur.pos + extra.action_length
            if end > len(cur.data):
                raise ProtocolError("appended block exceeds the payload")
            while cur.pos < end:
                block.append(_parse_command(cur, factory_top=False))
            if cur.pos != end:
                raise ProtocolError("appended block length does not line up")
        elif header.options & (Opt.ACTION | Opt.IFTHEN):
            raise ProtocolError("block option set but the block is empty")
    return ParsedCommand(header, extra, block)


def parse_message_body(msg_type: int, payload: bytes) -> ParsedCommand:
    """Parse a COMMAND/FACTORY/GET_TIME payload into one command tree."""
    cur = _Cursor(payload)
    if msg_type == MsgType.GET_TIME:
        header = CommandHeader.unpack(cur.take(CMD_LEN))
        cmd = ParsedCommand(header)
    else:
        cmd = _parse_command(cur, factory_top=(msg_type == MsgType.FACTORY))
    if cur.remaining:
        raise ProtocolError(f"{cur.remaining} unconsumed bytes after the command")
    return cmd


def encode_command(cmd: ParsedCommand, factory_top: bool = False) -> bytes:
    """Serialize a command tree, recomputing extra headers' block lengths."""
    block_bytes = b"".join(encode_command(c) for c in cmd.block)
    out = [cmd.header.pack()]
    needs_extra = command_has_extra(
        cmd.header.instruction, cmd.header.options, factory_top
    )
    if needs_extra:
        extra = cmd.extra or ExtraHeader()
        extra = ExtraHeader(
            extra.extra_qubit_id,
            extra.remote_app_id,
            extra.remote_node,
            extra.remote_port,
            len(block_bytes),
            extra.step,
            extra.padding,
        )
        out.append(extra.pack())
    elif cmd.block:
        raise ProtocolError("a block requires a block option on the command")
    out.append(block_bytes)
    return b"".join(out)


def encode_message(msg_type: int, app_id: int, payload: bytes = b"",
                   version: int = CQC_VERSION) -> bytes:
    if len(payload) > MAX_PAYLOAD:
        raise ProtocolError(
            f"payload of {len(payload)} bytes exceeds the {MAX_PAYLOAD} cap"
        )
    return CqcHeader(version, msg_type, app_id, len(payload)).pack() + payload


# ----------------------------------------------------------------------
# reply payloads

def pack_qubit_id(qubit_id: int) -> bytes:
    return struct.pack(">H", qubit_id)


def unpack_qubit_id(payload: bytes) -> int:
    if len(payload) != 2:
        raise ProtocolError("qubit id payload must be 2 bytes")
    return struct.unpack(">H", payload)[0]


def pack_measout(bit: int) -> bytes:
    return struct.pack(">B", bit)


def unpack_measout(payload: bytes) -> int:
    if len(payload) != 1:
        raise ProtocolError("measurement payload must be 1 byte")
    return payload[0]


def pack_inf_time(ms: int) -> bytes:
    return struct.pack(">Q", ms)


def unpack_inf_time(payload: bytes) -> int:
    if len(payload) != 8:
        raise ProtocolError("timestamp payload must be 8 bytes")
    return struct.unpack(">Q", payload)[0]


_EPR_OK = struct.Struct(">HIIIQ")


@dataclass(frozen=True)
class EprInfo:
    qubit_id: int
    node_a: int
    node_b: int
    sequence: int
    created_at: int

    def pack(self) -> bytes:
        return _EPR_OK.pack(
            self.qubit_id, self.node_a, self.node_b, self.sequence, self.created_at
        )

    @classmethod
    def unpack(cls, payload: bytes) -> "EprInfo":
        if len(payload) != _EPR_OK.size:
            raise ProtocolError(
                f"entangled-pair payload must be {_EPR_OK.size} bytes"
            )
        return cls(*_EPR_OK.unpack(payload))


def pack_hello_reply(max_qubits: int, name: str) -> bytes:
    raw = name.encode("utf-8")
    if len(raw) > 255:
        raise ProtocolError("node name too long for a hello reply")
    return struct.pack(">HB", max_qubits, len(raw)) + raw


def unpack_hello_reply(payload: bytes) -> tuple[int, str]:
    if len(payload) < 3:
        raise ProtocolError("hello payload truncated")
    max_qubits, name_len = struct.unpack(">HB", payload[:3])
    raw = payload[3:]
    if len(raw) != name_len:
        raise ProtocolError("hello payload name length mismatch")
    return max_qubits, raw.decode("utf-8")
