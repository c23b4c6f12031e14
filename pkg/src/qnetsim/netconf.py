"""Network configuration: the node directory and its file format.

A config file lists one node per line:

    name host backend_port cqc_port

Blank lines and ``#`` comments are ignored. Names must be unique and
every (host, port) pair must be unique across both port columns.
"""

from __future__ import annotations

import socket
from dataclasses import dataclass

from .errors import ConfigError


@dataclass(frozen=True)
class NodeEntry:
    name: str
    host: str
    backend_port: int
    cqc_port: int

    def host_ipv4(self) -> int:
        """The host as a 32-bit integer (protocol node id)."""
        return ipv4_to_int(self.host)


def ipv4_to_int(host: str) -> int:
    try:
        packed = socket.inet_aton(host)
    except OSError:
        try:
            packed = socket.inet_aton(socket.gethostbyname(host))
        except OSError as exc:
            raise ConfigError(f"cannot resolve host {host!r}") from exc
    return int.from_bytes(packed, "big")


def int_to_ipv4(value: int) -> str:
    return socket.inet_ntoa(value.to_bytes(4, "big"))


class NodeDirectory:
    """Immutable name -> endpoint map for one network."""

    def __init__(self, entries: list[NodeEntry]):
        names = [e.name for e in entries]
        if len(set(names)) != len(names):
            raise ConfigError("duplicate node names in directory")
        seen: set[tuple[str, int]] = set()
        for e in entries:
            for port in (e.backend_port, e.cqc_port):
                if not 1 <= port <= 65535:
                    raise ConfigError(
                        f"node {e.name}: port {port} outside 1..65535"
                    )
                key = (e.host, port)
                if key in seen:
                    raise ConfigError(
                        f"node {e.name}: {e.host}:{port} already in use"
                    )
                seen.add(key)
        self._entries = {e.name: e for e in entries}

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def names(self) -> list[str]:
        return sorted(self._entries)

    def get(self, name: str) -> NodeEntry:
        try:
            return self._entries[name]
        except KeyError as exc:
            raise ConfigError(f"unknown node {name!r}") from exc

    def entries(self) -> list[NodeEntry]:
        return [self._entries[n] for n in self.names()]

    def by_cqc_endpoint(self, host_ipv4: int, port: int) -> NodeEntry:
        for e in self._entries.values():
            if e.host_ipv4() == host_ipv4 and e.cqc_port == port:
                return e
        raise ConfigError(
            f"no node with CQC endpoint {int_to_ipv4(host_ipv4)}:{port}"
        )


def parse_config(text: str) -> NodeDirectory:
    entries = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        fields = line.split()
        if len(fields) != 4:
            raise ConfigError(
                f"line {lineno}: expected 'name host backend_port cqc_port', "
                f"got {len(fields)} fields"
            )
        name, host, backend_s, cqc_s = fields
        try:
            backend_port = int(backend_s)
            cqc_port = int(cqc_s)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: ports must be integers") from exc
        entries.append(NodeEntry(name, host, backend_port, cqc_port))
    if not entries:
        raise ConfigError("config lists no nodes")
    try:
        return NodeDirectory(entries)
    except ConfigError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path: str) -> NodeDirectory:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return parse_config(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from exc


def render_config(directory: NodeDirectory) -> str:
    lines = [
        f"{e.name} {e.host} {e.backend_port} {e.cqc_port}"
        for e in directory.entries()
    ]
    return "\n".join(lines) + "\n"
