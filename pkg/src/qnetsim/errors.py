"""Exception hierarchy shared across the simulator.

The node and protocol layers map these onto wire-level error codes, so
each class marks a distinct failure the client can act on.
"""

from __future__ import annotations


class QnetError(Exception):
    """Base class for all simulator errors."""


class ConfigError(QnetError):
    """Malformed network configuration."""


class ProtocolError(QnetError):
    """Malformed or inconsistent wire data; the connection is dropped."""


class VersionError(ProtocolError):
    """Unsupported protocol version byte."""


class UnsupportedError(QnetError):
    """Recognized but unsupported instruction or option combination."""


class UnknownQubitError(QnetError):
    """Qubit id does not resolve to an active qubit."""


class ExpiredQubitError(QnetError):
    """Qubit id refers to a qubit the application explicitly released."""


class DeniedError(QnetError):
    """Qubit exists but belongs to another application."""


class ResourceError(QnetError):
    """Qubit capacity or register size limit exceeded."""


class UnavailableError(QnetError):
    """Peer refused the operation (e.g. full receive queue)."""


class InvalidOperationError(QnetError):
    """Operation arguments are structurally invalid (e.g. control == target)."""


class InvalidQubitError(QnetError):
    """Register position out of range (engine-level)."""


class LockTimeoutError(QnetError):
    """Distributed lock acquisition exhausted its attempt budget."""


class RecvTimeoutError(QnetError):
    """Blocking receive expired with nothing delivered."""


class PeerTimeoutError(QnetError):
    """A peer request got no response within the request timeout."""


class MovedError(QnetError):
    """Simulated qubit was migrated to another host by a register merge.

    Carries the forwarding address so the caller can re-resolve once.
    """

    def __init__(self, new_host: str, new_sim_id: int):
        super().__init__(f"qubit moved to {new_host}/{new_sim_id}")
        self.new_host = new_host
        self.new_sim_id = new_sim_id


class InternalError(QnetError):
    """Invariant violation; indicates a bug, not a caller mistake."""
