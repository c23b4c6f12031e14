"""Length-prefixed classical byte channels between scenario roles.

Each message is a 4-byte big-endian length followed by the payload.
A role listens on an ephemeral port for its inbound neighbor and dials
its outbound neighbor; both directions of a connection may carry
messages.
"""

from __future__ import annotations

import socket
import struct
import threading

_LEN = struct.Struct(">I")

MAX_MESSAGE = 1 << 20


class ClassicalChannel:
    """One connected byte-message stream."""

    def __init__(self, sock: socket.socket):
        self._sock = sock
        self._send_lock = threading.Lock()
        self._recv_lock = threading.Lock()
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)

    def send_msg(self, payload: bytes) -> None:
        if len(payload) > MAX_MESSAGE:
            raise ValueError("classical message too large")
        with self._send_lock:
            self._sock.sendall(_LEN.pack(len(payload)) + payload)

    def recv_msg(self) -> bytes:
        with self._recv_lock:
            header = self._recv_exactly(_LEN.size)
            (length,) = _LEN.unpack(header)
            if length > MAX_MESSAGE:
                raise ConnectionError("classical message too large")
            return self._recv_exactly(length)

    def _recv_exactly(self, count: int) -> bytes:
        buf = bytearray()
        while len(buf) < count:
            chunk = self._sock.recv(count - len(buf))
            if not chunk:
                raise ConnectionError("classical channel closed")
            buf.extend(chunk)
        return bytes(buf)

    def close(self) -> None:
        try:
            self._sock.close()
        except OSError:
            pass


class ClassicalListener:
    def __init__(self, host: str = "127.0.0.1", port: int = 0):
        self._sock = socket.create_server((host, port), backlog=8)
        self.host, self.port = self._sock.getsockname()[:2]

    def accept(self, timeout_s: float = 30.0) -> ClassicalChannel:
        self._sock.settimeout(timeout_s)
        conn, _ = self._sock.accept()
        return ClassicalChannel(conn)

    def close(self) -> None:
        try:
            self._sock.close()
        except OSError:
            pass


def classical_connect(host: str, port: int,
                      timeout_s: float = 30.0) -> ClassicalChannel:
    return ClassicalChannel(socket.create_connection((host, port), timeout_s))
