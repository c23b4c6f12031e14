"""Network lifecycles for scenarios and tests.

Two interchangeable backends stand up an n-node network:

* InProcessNetwork — nodes live in this process as thread-backed
  servers. Fast to start; state dumps come straight off the node.
* ProcessNetwork — each node is a `qnetsim run` child process; the
  harness waits for each readiness line and talks to the nodes only
  over their public ports.

Both hand out control-channel clients and node state dumps keyed by
node name.
"""

from __future__ import annotations

import json
import socket
import subprocess
import sys
import tempfile
import time
from pathlib import Path

from ..cqc.server import CqcServer
from ..netconf import NodeDirectory, NodeEntry, render_config
from ..node import NodeLimits, VirtualNode
from ..peerlink import codec as pc
from ..peerlink.transport import transient_request
from .client import CqcClient


def free_ports(count: int) -> list[int]:
    """Reserve `count` distinct ephemeral ports (best effort)."""
    socks = []
    try:
        for _ in range(count):
            s = socket.socket()
            s.bind(("127.0.0.1", 0))
            socks.append(s)
        return [s.getsockname()[1] for s in socks]
    finally:
        for s in socks:
            s.close()


def ring_names(count: int) -> list[str]:
    return [f"n{i:02d}" for i in range(count)]


def build_directory(names: list[str], host: str = "127.0.0.1") -> NodeDirectory:
    ports = free_ports(2 * len(names))
    entries = [
        NodeEntry(name, host, ports[2 * i], ports[2 * i + 1])
        for i, name in enumerate(names)
    ]
    return NodeDirectory(entries)


class InProcessNetwork:
    def __init__(self, names: list[str], seed: int | None = None,
                 limits: NodeLimits | None = None,
                 directory: NodeDirectory | None = None):
        self.directory = directory or build_directory(names)
        self.nodes: dict[str, VirtualNode] = {}
        self.servers: dict[str, CqcServer] = {}
        self._clients: list[CqcClient] = []
        for name in names:
            self.nodes[name] = VirtualNode(
                name, self.directory, seed=seed, limits=limits
            )
        try:
            for node in self.nodes.values():
                node.start()
            for node in self.nodes.values():
                node.connect_peers()
            for name, node in self.nodes.items():
                server = CqcServer(node)
                server.start()
                self.servers[name] = server
        except Exception:
            self.stop()
            raise

    def entry(self, name: str) -> NodeEntry:
        return self.directory.get(name)

    def client(self, name: str, app_id: int, timeout_s: float = 30.0) -> CqcClient:
        entry = self.entry(name)
        client = CqcClient(entry.host, entry.cqc_port, app_id, timeout_s)
        self._clients.append(client)
        return client

    def status(self, name: str) -> dict:
        return self.nodes[name].node_status()

    def dump(self, name: str) -> dict:
        return self.nodes[name].dump_state()

    def stop(self) -> None:
        for client in self._clients:
            client.close()
        for server in self.servers.values():
            server.stop()
        for node in self.nodes.values():
            node.stop()

    def __enter__(self) -> "InProcessNetwork":
        return self

    def __exit__(self, *exc) -> None:
        self.stop()


class ProcessNetwork:
    def __init__(self, names: list[str], seed: int | None = None,
                 recv_timeout_s: float = 30.0,
                 max_register_qubits: int = 20,
                 startup_timeout_s: float = 30.0):
        self.directory = build_directory(names)
        self._tmp = tempfile.TemporaryDirectory(prefix="qnetsim-net-")
        config_path = Path(self._tmp.name) / "network.conf"
        config_path.write_text(render_config(self.directory))
        self._clients: list[CqcClient] = []
        self.procs: dict[str, subprocess.Popen] = {}
        try:
            for name in names:
                cmd = [
                    sys.executable, "-m", "qnetsim.cli", "run",
                    "--config", str(config_path),
                    "--name", name,
                    "--recv-timeout", str(recv_timeout_s),
                    "--max-register-qubits", str(max_register_qubits),
                    "--peer-window", str(startup_timeout_s),
                ]
                if seed is not None:
                    cmd += ["--seed", str(seed)]
                self.procs[name] = subprocess.Popen(
                    cmd, stdout=subprocess.PIPE, stderr=subprocess.STDOUT,
                    text=True,
                )
            deadline = time.monotonic() + startup_timeout_s
            for name, proc in self.procs.items():
                line = self._await_ready(name, proc, deadline)
                if not line.startswith("ready "):
                    raise RuntimeError(f"{name} failed to start: {line!r}")
        except Exception:
            self.stop()
            raise

    @staticmethod
    def _await_ready(name: str, proc: subprocess.Popen, deadline: float) -> str:
        assert proc.stdout is not None
        while time.monotonic() < deadline:
            line = proc.stdout.readline()
            if not line:
                if proc.poll() is not None:
                    return f"exited with {proc.returncode}"
                time.sleep(0.01)
                continue
            return line.strip()
        return "startup timed out"

    def entry(self, name: str) -> NodeEntry:
        return self.directory.get(name)

    def client(self, name: str, app_id: int, timeout_s: float = 30.0) -> CqcClient:
        entry = self.entry(name)
        client = CqcClient(entry.host, entry.cqc_port, app_id, timeout_s)
        self._clients.append(client)
        return client

    def dump(self, name: str) -> dict:
        entry = self.entry(name)
        payload = transient_request(
            entry.host, entry.backend_port, pc.NodeStateDumpReq()
        )
        return json.loads(payload.data.decode("utf-8"))

    def status(self, name: str) -> dict:
        return self.dump(name)["status"]

    def stop(self) -> None:
        for client in self._clients:
            client.close()
        for proc in self.procs.values():
            if proc.poll() is None:
                proc.terminate()
        for proc in self.procs.values():
            try:
                proc.wait(timeout=10)
            except subprocess.TimeoutExpired:
                proc.kill()
                proc.wait()
            if proc.stdout is not None:
                proc.stdout.close()
        self._tmp.cleanup()

    def __enter__(self) -> "ProcessNetwork":
        return self

    def __exit__(self, *exc) -> None:
        self.stop()


def make_network(names: list[str], backend: str = "inproc",
                 seed: int | None = None, **kwargs):
    if backend == "inproc":
        limits = kwargs.pop("limits", None)
        if limits is None and kwargs:
            limits = NodeLimits(**kwargs)
        return InProcessNetwork(names, seed=seed, limits=limits)
    if backend == "process":
        return ProcessNetwork(names, seed=seed, **kwargs)
    raise ValueError(f"unknown network backend {backend!r}")
