"""Blocking-socket peer transport with correlated request/response.

Each connection carries concurrent requests in both directions;
responses match requests by id and may arrive out of order. Incoming
requests run on their own threads so a node keeps serving while its own
outbound requests are pending. Responses are cached per connection and
re-sent verbatim for duplicate request ids, never re-executed.
"""

from __future__ import annotations

import logging
import socket
import struct
import threading
import time
from collections import OrderedDict

from ..errors import PeerTimeoutError, ProtocolError, QnetError
from .codec import (
    HEADER,
    KIND_REQUEST,
    KIND_RESPONSE,
    MAX_FRAME,
    ErrorBody,
    Op,
    PeerFrame,
    PeerHello,
    Status,
    decode_request_body,
    decode_response_body,
    encode_error_body,
    encode_frame,
    encode_response_body,
)

log = logging.getLogger("qnetsim.peerlink")

DEFAULT_REQUEST_TIMEOUT_S = 30.0
RESPONSE_CACHE_SIZE = 1024


class PeerOpError(QnetError):
    """Non-OK response from a peer."""

    def __init__(self, status: Status, message: str, moved_host: str = "",
                 moved_sim: int = 0):
        super().__init__(f"[{status.name}] {message}")
        self.status = status
        self.message = message
        self.moved_host = moved_host
        self.moved_sim = moved_sim


class _Pending:
    __slots__ = ("event", "frame")

    def __init__(self) -> None:
        self.event = threading.Event()
        self.frame: PeerFrame | None = None


def _recv_exactly(sock: socket.socket, n: int) -> bytes:
    chunks = []
    remaining = n
    while remaining > 0:
        chunk = sock.recv(min(remaining, 65536))
        if not chunk:
            raise ConnectionError("peer closed the connection")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def _read_frame(sock: socket.socket) -> PeerFrame:
    (length,) = struct.unpack(">I", _recv_exactly(sock, 4))
    if length < HEADER.size or length + 4 > MAX_FRAME:
        raise ProtocolError(f"frame length {length} out of range")
    payload = _recv_exactly(sock, length)
    request_id, kind, op = HEADER.unpack_from(payload)
    if kind not in (KIND_REQUEST, KIND_RESPONSE):
        raise ProtocolError(f"unknown frame kind {kind}")
    return PeerFrame(request_id, kind, op, payload[HEADER.size:])


class PeerConnection:
    """One live link to a peer; safe for concurrent use."""

    def __init__(self, sock: socket.socket, peer_name: str, dispatch):
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._sock = sock
        self.peer_name = peer_name
        self._dispatch = dispatch
        self._send_lock = threading.Lock()
        self._state_lock = threading.Lock()
        self._pending: dict[int, _Pending] = {}
        self._next_request_id = 1
        self._response_cache: OrderedDict[int, bytes] = OrderedDict()
        self._executing: dict[int, threading.Event] = {}
        self._closed = threading.Event()
        self._reader = threading.Thread(
            target=self._read_loop, name=f"peer-read-{peer_name}", daemon=True
        )

    def start(self) -> None:
        self._reader.start()

    # -- outbound

    def request(self, req, timeout: float = DEFAULT_REQUEST_TIMEOUT_S):
        """Send a typed request body; returns the typed response payload."""
        op = req.OP
        with self._state_lock:
            if self._closed.is_set():
                raise ConnectionError(f"connection to {self.peer_name} is closed")
            request_id = self._next_request_id
            self._next_request_id += 1
            slot = _Pending()
            self._pending[request_id] = slot
        frame = PeerFrame(request_id, KIND_REQUEST, op, req.pack())
        try:
            self._send(encode_frame(frame))
            if not slot.event.wait(timeout):
                raise PeerTimeoutError(
                    f"{op.name} to {self.peer_name} timed out after {timeout}s"
                )
        finally:
            with self._state_lock:
                self._pending.pop(request_id, None)
        if slot.frame is None:
            raise ConnectionError(f"connection to {self.peer_name} dropped")
        status, payload = decode_response_body(slot.frame.op, slot.frame.body)
        if status is not Status.OK:
            assert isinstance(payload, ErrorBody)
            raise PeerOpError(
                status, payload.message, payload.moved_host, payload.moved_sim
            )
        return payload

    def _send(self, data: bytes) -> None:
        with self._send_lock:
            self._sock.sendall(data)

    # -- inbound

    def _read_loop(self) -> None:
        try:
            while not self._closed.is_set():
                frame = _read_frame(self._sock)
                if frame.kind == KIND_RESPONSE:
                    self._complete(frame)
                else:
                    self._accept_request(frame)
        except (ConnectionError, OSError, ProtocolError) as exc:
            if not self._closed.is_set():
                log.debug("link to %s ended: %s", self.peer_name, exc)
        finally:
            self.close()

    def _complete(self, frame: PeerFrame) -> None:
        with self._state_lock:
            slot = self._pending.get(frame.request_id)
        if slot is not None:
            slot.frame = frame
            slot.event.set()

    def _accept_request(self, frame: PeerFrame) -> None:
        with self._state_lock:
            cached = self._response_cache.get(frame.request_id)
            if cached is None and frame.request_id in self._executing:
                done = self._executing[frame.request_id]
            else:
                done = None
                if cached is None:
                    self._executing[frame.request_id] = threading.Event()
        if cached is not None:
            self._send(cached)
            return
        if done is not None:
            # Duplicate of an in-flight request: answer once the first
            # execution finishes, from the cache.
            threading.Thread(
                target=self._resend_when_done,
                args=(frame.request_id, done),
                daemon=True,
            ).start()
            return
        threading.Thread(
            target=self._handle_request,
            args=(frame,),
            name=f"peer-op-{Op(frame.op).name if frame.op in Op._value2member_map_ else frame.op}",
            daemon=True,
        ).start()

    def _resend_when_done(self, request_id: int, done: threading.Event) -> None:
        done.wait(DEFAULT_REQUEST_TIMEOUT_S)
        with self._state_lock:
            cached = self._response_cache.get(request_id)
        if cached is not None:
            try:
                self._send(cached)
            except OSError:
                pass

    def _handle_request(self, frame: PeerFrame) -> None:
        try:
            try:
                req = decode_request_body(frame.op, frame.body)
                payload = self._dispatch(self.peer_name, Op(frame.op), req)
                body = encode_response_body(Op(frame.op), payload)
            except QnetError as exc:
                body = encode_error_body(_error_from_exception(exc))
            except Exception:
                log.exception("handler for op %s failed", frame.op)
                body = encode_error_body(
                    ErrorBody(Status.INTERNAL, "internal handler failure")
                )
            response = encode_frame(
                PeerFrame(frame.request_id, KIND_RESPONSE, frame.op, body)
            )
            with self._state_lock:
                self._response_cache[frame.request_id] = response
                while len(self._response_cache) > RESPONSE_CACHE_SIZE:
                    self._response_cache.popitem(last=False)
                done = self._executing.pop(frame.request_id, None)
            if done is not None:
                done.set()
            self._send(response)
        except OSError:
            self.close()

    def close(self) -> None:
        if self._closed.is_set():
            return
        self._closed.set()
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()
        with self._state_lock:
            pending = list(self._pending.values())
            self._pending.clear()
        for slot in pending:
            slot.event.set()


def _error_from_exception(exc: QnetError) -> ErrorBody:
    # Local import: errors->codec->transport would otherwise cycle.
    from .. import errors as E

    if isinstance(exc, E.MovedError):
        return ErrorBody(Status.MOVED, str(exc), exc.new_host, exc.new_sim_id)
    mapping = [
        (E.UnknownQubitError, Status.UNKNOWN_ID),
        (E.ExpiredQubitError, Status.UNKNOWN_ID),
        (E.ResourceError, Status.NO_QUBIT),
        (E.DeniedError, Status.DENIED),
        (E.UnavailableError, Status.UNAVAILABLE),
        (E.LockTimeoutError, Status.LOCK_FAILED),
        (E.PeerTimeoutError, Status.TIMEOUT),
        (E.RecvTimeoutError, Status.TIMEOUT),
        (E.UnsupportedError, Status.UNSUPPORTED),
        (E.ProtocolError, Status.PROTOCOL),
        (E.InternalError, Status.INTERNAL),
    ]
    for cls, status in mapping:
        if isinstance(exc, cls):
            return ErrorBody(status, str(exc))
    return ErrorBody(Status.PROTOCOL, str(exc))


def raise_from_status(err: PeerOpError):
    """Rehydrate a PeerOpError into the matching local exception."""
    from .. import errors as E

    table = {
        Status.UNKNOWN_ID: E.UnknownQubitError,
        Status.NO_QUBIT: E.ResourceError,
        Status.DENIED: E.DeniedError,
        Status.UNAVAILABLE: E.UnavailableError,
        Status.LOCK_FAILED: E.LockTimeoutError,
        Status.TIMEOUT: E.PeerTimeoutError,
        Status.UNSUPPORTED: E.UnsupportedError,
        Status.PROTOCOL: E.ProtocolError,
        Status.INTERNAL: E.InternalError,
    }
    if err.status is Status.MOVED:
        raise E.MovedError(err.moved_host, err.moved_sim)
    raise table.get(err.status, E.ProtocolError)(err.message)


class PeerServer:
    """Accepts peer links and keeps the by-name connection map."""

    def __init__(self, node_name: str, host: str, port: int, dispatch):
        self.node_name = node_name
        self._dispatch = dispatch
        self._listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._listener.bind((host, port))
        self._listener.listen(128)
        self.port = self._listener.getsockname()[1]
        self._connections: dict[str, PeerConnection] = {}
        self._conn_lock = threading.Lock()
        self._conn_ready = threading.Condition(self._conn_lock)
        self._stopped = threading.Event()
        self._accept_thread = threading.Thread(
            target=self._accept_loop, name=f"peer-accept-{node_name}", daemon=True
        )

    def start(self) -> None:
        self._accept_thread.start()

    def _accept_loop(self) -> None:
        while not self._stopped.is_set():
            try:
                sock, _ = self._listener.accept()
            except OSError:
                return
            threading.Thread(
                target=self._handshake_inbound, args=(sock,), daemon=True
            ).start()

    def _handshake_inbound(self, sock: socket.socket) -> None:
        try:
            sock.settimeout(10.0)
            frame = _read_frame(sock)
            if frame.kind != KIND_REQUEST or frame.op != Op.PEER_HELLO:
                raise ProtocolError("expected hello as the first frame")
            hello = PeerHello.unpack(frame.body)
            sock.settimeout(None)
            conn = PeerConnection(sock, hello.node_name, self._dispatch)
            reply = encode_frame(
                PeerFrame(
                    frame.request_id,
                    KIND_RESPONSE,
                    Op.PEER_HELLO,
                    encode_response_body(Op.PEER_HELLO, PeerHello(self.node_name)),
                )
            )
            conn._send(reply)
            self._register(conn)
            conn.start()
        except (ProtocolError, ConnectionError, OSError) as exc:
            log.debug("inbound handshake failed: %s", exc)
            sock.close()

    def dial(self, peer_name: str, host: str, port: int,
             window_s: float = 10.0, interval_s: float = 0.25) -> PeerConnection:
        """Connect to a peer, retrying refusals for the startup window."""
        deadline = time.monotonic() + window_s
        last: Exception | None = None
        while time.monotonic() < deadline:
            try:
                sock = socket.create_connection((host, port), timeout=5.0)
                try:
                    conn = PeerConnection(sock, peer_name, self._dispatch)
                    hello_frame = PeerFrame(
                        0, KIND_REQUEST, Op.PEER_HELLO,
                        PeerHello(self.node_name).pack(),
                    )
                    sock.sendall(encode_frame(hello_frame))
                    sock.settimeout(10.0)
                    reply = _read_frame(sock)
                    sock.settimeout(None)
                    status, payload = decode_response_body(reply.op, reply.body)
                    if status is not Status.OK or not isinstance(payload, PeerHello):
                        raise ProtocolError("bad hello reply")
                    conn.peer_name = payload.node_name
                    self._register(conn)
                    conn.start()
                    return conn
                except BaseException:
                    sock.close()
                    raise
            except (ConnectionError, OSError, ProtocolError) as exc:
                last = exc
                time.sleep(interval_s)
        raise ConnectionError(f"could not reach {peer_name}: {last}")

    def _register(self, conn: PeerConnection) -> None:
        with self._conn_lock:
            old = self._connections.get(conn.peer_name)
            self._connections[conn.peer_name] = conn
            self._conn_ready.notify_all()
        if old is not None:
            old.close()

    def get(self, peer_name: str, timeout: float = 15.0) -> PeerConnection:
        deadline = time.monotonic() + timeout
        with self._conn_lock:
            while True:
                conn = self._connections.get(peer_name)
                if conn is not None:
                    return conn
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    raise ConnectionError(f"no link to {peer_name}")
                self._conn_ready.wait(remaining)

    def connected_peers(self) -> list[str]:
        with self._conn_lock:
            return sorted(self._connections)

    def stop(self) -> None:
        self._stopped.set()
        try:
            self._listener.close()
        except OSError:
            pass
        with self._conn_lock:
            conns = list(self._connections.values())
            self._connections.clear()
        for conn in conns:
            conn.close()


def transient_request(host: str, port: int, req,
                      observer_name: str = "_observer",
                      timeout: float = DEFAULT_REQUEST_TIMEOUT_S):
    """One-shot query against a node's backend port (used by status tools)."""
    sock = socket.create_connection((host, port), timeout=timeout)
    try:
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        sock.settimeout(timeout)
        sock.sendall(encode_frame(PeerFrame(
            0, KIND_REQUEST, Op.PEER_HELLO, PeerHello(observer_name).pack()
        )))
        reply = _read_frame(sock)
        status, _ = decode_response_body(reply.op, reply.body)
        if status is not Status.OK:
            raise ProtocolError("handshake refused")
        sock.sendall(encode_frame(PeerFrame(1, KIND_REQUEST, req.OP, req.pack())))
        while True:
            frame = _read_frame(sock)
            if frame.kind == KIND_RESPONSE and frame.request_id == 1:
                break
        status, payload = decode_response_body(frame.op, frame.body)
        if status is not Status.OK:
            assert isinstance(payload, ErrorBody)
            raise PeerOpError(
                status, payload.message, payload.moved_host, payload.moved_sim
            )
        return payload
    finally:
        sock.close()
