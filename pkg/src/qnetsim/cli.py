"""Command-line entry points for running and inspecting nodes.

`qnetsim run` hosts one network node: it joins the backend mesh
described by the topology file, then serves the application control
channel. A single readiness line is printed once both are up:

    ready name=<node> peers=<count> cqc=<host>:<port>

`qnetsim status` asks a running node for its counters and prints them
as key=value lines.
"""

from __future__ import annotations

import argparse
import json
import logging
import signal
import sys
import threading

from .cqc.server import CqcServer
from .errors import QnetError
from .netconf import load_config
from .node import NodeLimits, VirtualNode
from .peerlink import codec as pc
from .peerlink.transport import transient_request


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qnetsim", description="distributed quantum network simulator"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one network node")
    run.add_argument("--config", required=True, help="network topology file")
    run.add_argument("--name", required=True, help="node name to assume")
    run.add_argument(
        "--max-register-qubits", type=int, default=20,
        help="cap on qubits sharing one state register (default 20)",
    )
    run.add_argument(
        "--max-qubits", type=int, default=4096,
        help="cap on simultaneously simulated qubits (default 4096)",
    )
    run.add_argument(
        "--seed", type=int, default=None,
        help="base seed for reproducible measurement outcomes",
    )
    run.add_argument(
        "--recv-timeout", type=float, default=30.0,
        help="seconds a receive waits for a qubit (default 30)",
    )
    run.add_argument(
        "--peer-window", type=float, default=10.0,
        help="seconds to wait for the peer mesh (default 10)",
    )
    run.add_argument(
        "--log-level", default="warning",
        choices=["debug", "info", "warning", "error"],
    )

    status = sub.add_parser("status", help="query a running node")
    status.add_argument("--config", required=True)
    status.add_argument("--name", required=True)
    return parser


def _cmd_run(args: argparse.Namespace) -> int:
    logging.basicConfig(
        level=getattr(logging, args.log_level.upper()),
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    directory = load_config(args.config)
    limits = NodeLimits(
        max_qubits=args.max_qubits,
        max_register_qubits=args.max_register_qubits,
        recv_timeout_s=args.recv_timeout,
        peer_window_s=args.peer_window,
    )
    node = VirtualNode(args.name, directory, seed=args.seed, limits=limits)
    node.start()
    try:
        node.connect_peers()
    except ConnectionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        node.stop()
        return 1
    server = CqcServer(node)
    server.start()
    entry = directory.get(args.name)
    print(
        f"ready name={node.name} "
        f"peers={len(node.connected_peer_names())} "
        f"cqc={entry.host}:{server.port}",
        flush=True,
    )

    done = threading.Event()

    def _stop(signum, frame):
        done.set()

    signal.signal(signal.SIGINT, _stop)
    signal.signal(signal.SIGTERM, _stop)
    done.wait()
    server.stop()
    node.stop()
    return 0


def _cmd_status(args: argparse.Namespace) -> int:
    directory = load_config(args.config)
    entry = directory.get(args.name)
    payload = transient_request(entry.host, entry.backend_port, pc.NodeStateDumpReq())
    state = json.loads(payload.data.decode("utf-8"))
    for key, value in state["status"].items():
        print(f"{key}={value}")
    return 0


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        return _cmd_status(args)
    except (QnetError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
