"""TCP server that drives a node from application control messages.

One thread per connection; messages on a connection are processed in
order, and replies stream back as the work happens (bulk allocation and
factories emit one reply per step). The app id in each message header
selects whose qubits are touched; several connections may drive the
same app id concurrently.

Command execution walks the parsed tree depth-first. A conditional
block runs when its parent measurement came out 1; an action block runs
unconditionally after its parent. The first failure aborts the rest of
the message: expired qubit ids answer with an EXPIRE reply, everything
else with the matching error reply, and the trailing DONE (owed when
the top command requested notification) is dropped.
"""

from __future__ import annotations

import logging
import socket
import struct
import threading

from .. import errors as E
from ..node import VirtualNode
from . import codec as cc
from .codec import Cmd, MsgType, Opt

log = logging.getLogger("qnetsim.cqc")


def error_reply_for(exc: E.QnetError) -> MsgType:
    if isinstance(exc, E.VersionError):
        return MsgType.ERR_VERSION
    if isinstance(exc, E.UnsupportedError):
        return MsgType.ERR_UNSUPP
    if isinstance(exc, E.UnknownQubitError):
        return MsgType.ERR_UNKNOWN
    if isinstance(exc, E.DeniedError):
        return MsgType.ERR_DENIED
    if isinstance(exc, E.ResourceError):
        return MsgType.ERR_NOQUBIT
    if isinstance(exc, E.UnavailableError):
        return MsgType.ERR_UNAVAILABLE
    if isinstance(exc, (E.RecvTimeoutError, E.LockTimeoutError, E.PeerTimeoutError)):
        return MsgType.ERR_TIMEOUT
    return MsgType.ERR_GENERAL


class _Abort(Exception):
    """Terminates a message: carries the one reply still owed."""

    def __init__(self, msg_type: MsgType, payload: bytes = b""):
        super().__init__(msg_type.name)
        self.msg_type = msg_type
        self.payload = payload


class CqcServer:
    def __init__(self, node: VirtualNode, host: str | None = None,
                 port: int | None = None):
        entry = node.directory.get(node.name)
        self.node = node
        self.host = host if host is not None else entry.host
        self.port = port if port is not None else entry.cqc_port
        self._listener: socket.socket | None = None
        self._threads: list[threading.Thread] = []
        self._conns: set[socket.socket] = set()
        self._conns_lock = threading.Lock()
        self._closed = threading.Event()

    def start(self) -> None:
        listener = socket.create_server(
            (self.host, self.port), reuse_port=False, backlog=128
        )
        listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self.port = listener.getsockname()[1]
        self._listener = listener
        t = threading.Thread(
            target=self._accept_loop, name=f"cqc-accept-{self.node.name}", daemon=True
        )
        t.start()
        self._threads.append(t)

    def stop(self) -> None:
        self._closed.set()
        if self._listener is not None:
            try:
                self._listener.close()
            except OSError:
                pass
        with self._conns_lock:
            conns = list(self._conns)
        for sock in conns:
            try:
                sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            try:
                sock.close()
            except OSError:
                pass

    def _accept_loop(self) -> None:
        assert self._listener is not None
        while not self._closed.is_set():
            try:
                sock, addr = self._listener.accept()
            except OSError:
                return
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            with self._conns_lock:
                self._conns.add(sock)
            t = threading.Thread(
                target=self._serve, args=(sock,),
                name=f"cqc-conn-{self.node.name}-{addr[1]}", daemon=True,
            )
            t.start()

    # ------------------------------------------------------------------

    def _serve(self, sock: socket.socket) -> None:
        try:
            while True:
                raw = self._recv_exactly(sock, cc.HEADER_LEN)
                if raw is None:
                    return
                header = cc.CqcHeader.unpack(raw)
                if header.payload_length > cc.MAX_PAYLOAD:
                    self._send(sock, MsgType.ERR_GENERAL, header.app_id)
                    return
                payload = (
                    self._recv_exactly(sock, header.payload_length)
                    if header.payload_length
                    else b""
                )
                if payload is None:
                    return
                if header.version != cc.CQC_VERSION:
                    self._send(sock, MsgType.ERR_VERSION, header.app_id)
                    continue
                self._handle_message(sock, header, payload)
        except OSError:
            pass
        except Exception:
            log.exception("%s: connection handler failed", self.node.name)
        finally:
            with self._conns_lock:
                self._conns.discard(sock)
            try:
                sock.close()
            except OSError:
                pass

    @staticmethod
    def _recv_exactly(sock: socket.socket, count: int) -> bytes | None:
        buf = bytearray()
        while len(buf) < count:
            chunk = sock.recv(count - len(buf))
            if not chunk:
                return None
            buf.extend(chunk)
        return bytes(buf)

    def _send(self, sock: socket.socket, msg_type: MsgType, app_id: int,
              payload: bytes = b"") -> None:
        sock.sendall(cc.encode_message(msg_type, app_id, payload))

    # ------------------------------------------------------------------

    def _handle_message(self, sock: socket.socket, header: cc.CqcHeader,
                        payload: bytes) -> None:
        app_id = header.app_id

        def emit(msg_type: MsgType, body: bytes = b"") -> None:
            self._send(sock, msg_type, app_id, body)

        if header.msg_type == MsgType.HELLO:
            emit(
                MsgType.HELLO,
                cc.pack_hello_reply(self.node.limits.max_qubits, self.node.name),
            )
            return
        if header.msg_type not in (
            MsgType.COMMAND, MsgType.FACTORY, MsgType.GET_TIME
        ):
            emit(MsgType.ERR_UNSUPP)
            return

        try:
            top = cc.parse_message_body(header.msg_type, payload)
        except E.ProtocolError:
            emit(MsgType.ERR_GENERAL)
            return

        try:
            if header.msg_type == MsgType.GET_TIME:
                ms = self._guard(
                    top, lambda: self.node.get_time(app_id, top.qubit_id)
                )
                emit(MsgType.INF_TIME, cc.pack_inf_time(ms))
                return
            if header.msg_type == MsgType.FACTORY:
                count = top.extra.step if top.extra else 0
                if count == 0:
                    raise _Abort(MsgType.ERR_GENERAL)
                for _ in range(count):
                    self._run(app_id, top, emit)
            else:
                self._run(app_id, top, emit)
            if top.options & Opt.NOTIFY:
                emit(MsgType.DONE)
        except _Abort as stop:
            emit(stop.msg_type, stop.payload)

    def _run(self, app_id: int, cmd: cc.ParsedCommand, emit) -> None:
        outcome = self._execute(app_id, cmd, emit)
        if not cmd.block:
            return
        if cmd.options & Opt.IFTHEN:
            if outcome == 1:
                for child in cmd.block:
                    self._run(app_id, child, emit)
        elif cmd.options & Opt.ACTION:
            for child in cmd.block:
                self._run(app_id, child, emit)

    def _guard(self, cmd: cc.ParsedCommand, fn):
        """Translate node failures into the reply that ends the message."""
        try:
            return fn()
        except E.ExpiredQubitError:
            raise _Abort(MsgType.EXPIRE, cc.pack_qubit_id(cmd.qubit_id))
        except E.QnetError as exc:
            log.debug("%s: command failed: %s", self.node.name, exc)
            raise _Abort(error_reply_for(exc))

    def _execute(self, app_id: int, cmd: cc.ParsedCommand, emit) -> int | None:
        node = self.node
        instr = cmd.instruction
        extra = cmd.extra or cc.ExtraHeader()

        if cmd.options & Opt.IFTHEN and instr not in (
            Cmd.MEASURE, Cmd.MEASURE_INPLACE
        ):
            raise _Abort(MsgType.ERR_UNSUPP)

        if instr == Cmd.NEW:
            virt = self._guard(cmd, lambda: node.create_qubit(app_id))
            emit(MsgType.NEW_OK, cc.pack_qubit_id(virt))
            return None
        if instr == Cmd.ALLOCATE:
            for _ in range(extra.step):
                virt = self._guard(cmd, lambda: node.create_qubit(app_id))
                emit(MsgType.NEW_OK, cc.pack_qubit_id(virt))
            return None
        if instr == Cmd.RELEASE:
            self._guard(cmd, lambda: node.release_qubit(app_id, cmd.qubit_id))
            return None
        if instr == Cmd.RESET:
            self._guard(cmd, lambda: node.reset_qubit(app_id, cmd.qubit_id))
            return None
        if instr in (Cmd.MEASURE, Cmd.MEASURE_INPLACE):
            inplace = instr == Cmd.MEASURE_INPLACE
            bit = self._guard(
                cmd, lambda: node.measure_qubit(app_id, cmd.qubit_id, inplace=inplace)
            )
            emit(MsgType.MEASOUT, cc.pack_measout(bit))
            return bit
        if instr == Cmd.SEND:
            dest = self._endpoint_node(cmd, extra)
            self._guard(
                cmd,
                lambda: node.send_qubit(
                    app_id, cmd.qubit_id, dest, extra.remote_app_id
                ),
            )
            return None
        if instr == Cmd.RECV:
            virt = self._guard(cmd, lambda: node.recv_qubit(app_id))
            emit(MsgType.RECV, cc.pack_qubit_id(virt))
            return None
        if instr == Cmd.EPR:
            dest = self._endpoint_node(cmd, extra)
            virt, ent = self._guard(
                cmd, lambda: node.create_epr(app_id, dest, extra.remote_app_id)
            )
            emit(MsgType.EPR_OK, self._pack_ent(virt, ent))
            return None
        if instr == Cmd.RECV_EPR:
            virt, ent = self._guard(cmd, lambda: node.recv_epr(app_id))
            emit(MsgType.EPR_OK, self._pack_ent(virt, ent))
            return None
        if instr == Cmd.SWAP:
            m_a, m_b = self._guard(
                cmd,
                lambda: node.swap_measure(app_id, cmd.qubit_id, extra.extra_qubit_id),
            )
            emit(MsgType.MEASOUT, cc.pack_measout(m_a))
            emit(MsgType.MEASOUT, cc.pack_measout(m_b))
            return None
        if instr in cc.GATE_COMMANDS:
            name = cc.GATE_COMMANDS[instr]
            self._guard(cmd, lambda: node.apply_gate(app_id, cmd.qubit_id, name))
            return None
        if instr in cc.ROTATION_COMMANDS:
            name = cc.ROTATION_COMMANDS[instr]
            self._guard(
                cmd,
                lambda: node.apply_gate(app_id, cmd.qubit_id, name, step=extra.step),
            )
            return None
        if instr in cc.TWO_QUBIT_COMMANDS:
            name = cc.TWO_QUBIT_COMMANDS[instr]
            self._guard(
                cmd,
                lambda: node.apply_two_qubit(
                    app_id, cmd.qubit_id, extra.extra_qubit_id, name
                ),
            )
            return None
        raise _Abort(MsgType.ERR_UNSUPP)

    def _endpoint_node(self, cmd: cc.ParsedCommand, extra: cc.ExtraHeader) -> str:
        try:
            entry = self.node.directory.by_cqc_endpoint(
                extra.remote_node, extra.remote_port
            )
        except E.ConfigError:
            raise _Abort(MsgType.ERR_GENERAL) from None
        return entry.name

    def _pack_ent(self, virt: int, ent) -> bytes:
        directory = self.node.directory
        return cc.EprInfo(
            virt,
            directory.get(ent.node_a).host_ipv4(),
            directory.get(ent.node_b).host_ipv4(),
            ent.sequence,
            ent.created_at,
        ).pack()
