"""Minimal application client for the control channel.

Commands go out with NOTIFY|BLOCK set, so every exchange ends with a
DONE reply; content replies (new qubit ids, outcomes, pair info) are
collected until it arrives. Error replies — and EXPIRE, which also ends
a message — raise ReplyError carrying the reply type.
"""

from __future__ import annotations

import socket
from dataclasses import dataclass

from ..cqc import codec as cc
from ..cqc.codec import Cmd, MsgType, Opt
from ..errors import ProtocolError
from ..netconf import NodeEntry


@dataclass(frozen=True)
class Reply:
    msg_type: MsgType
    app_id: int
    payload: bytes


class ReplyError(Exception):
    def __init__(self, msg_type: MsgType, payload: bytes = b""):
        super().__init__(msg_type.name)
        self.msg_type = msg_type
        self.payload = payload


_TERMINAL = frozenset(cc.ERROR_TYPES) | {MsgType.EXPIRE}

_DEFAULT_OPTS = Opt.NOTIFY | Opt.BLOCK


def endpoint_fields(entry: NodeEntry) -> tuple[int, int]:
    """(address, port) pair identifying a node on the control channel."""
    return entry.host_ipv4(), entry.cqc_port


class CqcClient:
    def __init__(self, host: str, port: int, app_id: int,
                 timeout_s: float = 30.0):
        self.app_id = app_id
        self._sock = socket.create_connection((host, port), timeout=timeout_s)
        self._sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)

    def close(self) -> None:
        try:
            self._sock.close()
        except OSError:
            pass

    def __enter__(self) -> "CqcClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    # ------------------------------------------------------------------
    # raw layer

    def send_raw(self, data: bytes) -> None:
        self._sock.sendall(data)

    def _recv_exactly(self, count: int) -> bytes:
        buf = bytearray()
        while len(buf) < count:
            chunk = self._sock.recv(count - len(buf))
            if not chunk:
                raise ConnectionError("control connection closed")
            buf.extend(chunk)
        return bytes(buf)

    def read_reply(self) -> Reply:
        header = cc.CqcHeader.unpack(self._recv_exactly(cc.HEADER_LEN))
        payload = (
            self._recv_exactly(header.payload_length)
            if header.payload_length
            else b""
        )
        try:
            msg_type = MsgType(header.msg_type)
        except ValueError as exc:
            raise ProtocolError(f"unknown reply type {header.msg_type}") from exc
        return Reply(msg_type, header.app_id, payload)

    def send_message(self, msg_type: MsgType, payload: bytes = b"") -> None:
        self.send_raw(cc.encode_message(msg_type, self.app_id, payload))

    def exchange(self, msg_type: MsgType, payload: bytes = b"",
                 until_done: bool = True) -> list[Reply]:
        """Send one message and collect content replies until DONE."""
        self.send_message(msg_type, payload)
        replies: list[Reply] = []
        while True:
            reply = self.read_reply()
            if reply.msg_type in _TERMINAL:
                raise ReplyError(reply.msg_type, reply.payload)
            if reply.msg_type == MsgType.DONE:
                return replies
            replies.append(reply)
            if not until_done:
                return replies

    def run_command(self, cmd: cc.ParsedCommand,
                    msg_type: MsgType = MsgType.COMMAND) -> list[Reply]:
        body = cc.encode_command(cmd, factory_top=(msg_type == MsgType.FACTORY))
        return self.exchange(msg_type, body)

    # ------------------------------------------------------------------
    # command builders

    @staticmethod
    def command(instruction: Cmd, qubit_id: int = 0, options: int = _DEFAULT_OPTS,
                extra: cc.ExtraHeader | None = None,
                block: list[cc.ParsedCommand] | None = None) -> cc.ParsedCommand:
        return cc.ParsedCommand(
            cc.CommandHeader(qubit_id, instruction, options), extra, block or []
        )

    # ------------------------------------------------------------------
    # operations

    def hello(self) -> tuple[int, str]:
        self.send_message(MsgType.HELLO)
        reply = self.read_reply()
        if reply.msg_type != MsgType.HELLO:
            raise ReplyError(reply.msg_type, reply.payload)
        return cc.unpack_hello_reply(reply.payload)

    def new_qubit(self) -> int:
        replies = self.run_command(self.command(Cmd.NEW))
        return cc.unpack_qubit_id(replies[0].payload)

    def allocate(self, count: int) -> list[int]:
        cmd = self.command(Cmd.ALLOCATE, extra=cc.ExtraHeader(step=count))
        replies = self.run_command(cmd)
        return [cc.unpack_qubit_id(r.payload) for r in replies]

    def release(self, qubit_id: int) -> None:
        self.run_command(self.command(Cmd.RELEASE, qubit_id))

    def reset(self, qubit_id: int) -> None:
        self.run_command(self.command(Cmd.RESET, qubit_id))

    def measure(self, qubit_id: int, inplace: bool = False) -> int:
        instr = Cmd.MEASURE_INPLACE if inplace else Cmd.MEASURE
        replies = self.run_command(self.command(instr, qubit_id))
        return cc.unpack_measout(replies[0].payload)

    def gate(self, name: str, qubit_id: int) -> None:
        instr = Cmd[name.upper()]
        self.run_command(self.command(instr, qubit_id))

    def rotate(self, axis: str, qubit_id: int, step: int) -> None:
        instr = Cmd[f"ROT_{axis.upper()}"]
        cmd = self.command(instr, qubit_id, extra=cc.ExtraHeader(step=step))
        self.run_command(cmd)

    def two_qubit(self, name: str, control: int, target: int) -> None:
        instr = Cmd[name.upper()]
        cmd = self.command(
            instr, control, extra=cc.ExtraHeader(extra_qubit_id=target)
        )
        self.run_command(cmd)

    def cnot(self, control: int, target: int) -> None:
        self.two_qubit("CNOT", control, target)

    def cphase(self, control: int, target: int) -> None:
        self.two_qubit("CPHASE", control, target)

    def send_qubit(self, qubit_id: int, dest: NodeEntry,
                   remote_app_id: int) -> None:
        addr, port = endpoint_fields(dest)
        cmd = self.command(
            Cmd.SEND, qubit_id,
            extra=cc.ExtraHeader(
                remote_app_id=remote_app_id, remote_node=addr, remote_port=port
            ),
        )
        self.run_command(cmd)

    def recv_qubit(self) -> int:
        replies = self.run_command(self.command(Cmd.RECV))
        return cc.unpack_qubit_id(replies[0].payload)

    def create_epr(self, dest: NodeEntry, remote_app_id: int) -> cc.EprInfo:
        addr, port = endpoint_fields(dest)
        cmd = self.command(
            Cmd.EPR,
            extra=cc.ExtraHeader(
                remote_app_id=remote_app_id, remote_node=addr, remote_port=port
            ),
        )
        replies = self.run_command(cmd)
        return cc.EprInfo.unpack(replies[0].payload)

    def recv_epr(self) -> cc.EprInfo:
        replies = self.run_command(self.command(Cmd.RECV_EPR))
        return cc.EprInfo.unpack(replies[0].payload)

    def swap(self, qubit_a: int, qubit_b: int) -> tuple[int, int]:
        cmd = self.command(
            Cmd.SWAP, qubit_a, extra=cc.ExtraHeader(extra_qubit_id=qubit_b)
        )
        replies = self.run_command(cmd)
        return (
            cc.unpack_measout(replies[0].payload),
            cc.unpack_measout(replies[1].payload),
        )

    def get_time(self, qubit_id: int) -> int:
        body = cc.CommandHeader(qubit_id, 0, 0).pack()
        self.send_message(MsgType.GET_TIME, body)
        reply = self.read_reply()
        if reply.msg_type != MsgType.INF_TIME:
            raise ReplyError(reply.msg_type, reply.payload)
        return cc.unpack_inf_time(reply.payload)

    def factory(self, cmd: cc.ParsedCommand, count: int) -> list[Reply]:
        extra = cmd.extra or cc.ExtraHeader()
        cmd = cc.ParsedCommand(
            cmd.header,
            cc.ExtraHeader(
                extra.extra_qubit_id, extra.remote_app_id, extra.remote_node,
                extra.remote_port, extra.action_length, count, extra.padding,
            ),
            cmd.block,
        )
        return self.run_command(cmd, MsgType.FACTORY)
