"""Benchmark command line.

Each subcommand stands up the network it needs (real node processes by
default), runs the scenario, prints a summary, and optionally writes
the per-trial CSV.
"""

from __future__ import annotations

import argparse
import sys

from ..errors import QnetError
from . import scenarios
from .scenarios import ScenarioFailure, ScenarioResult, write_csv


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--csv", default=None, help="write per-trial rows here")
    parser.add_argument("--trials", type=int, default=1)
    parser.add_argument(
        "--backend", choices=["process", "inproc"], default="process",
        help="node processes (default) or in-process threads",
    )


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qnetsim-bench", description="network simulator benchmarks"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    ring = sub.add_parser("ring", help="teleport a qubit around a ring")
    ring.add_argument("--nodes", type=int, required=True)
    ring.add_argument("--mode", choices=["fly", "first"], default="fly")
    _add_common(ring)

    pingpong = sub.add_parser("pingpong", help="teleport back and forth")
    pingpong.add_argument("--rounds", type=int, required=True)
    _add_common(pingpong)

    create = sub.add_parser("create", help="create and measure n qubits")
    create.add_argument("--qubits", type=int, required=True)
    _add_common(create)

    ghz = sub.add_parser("ghz", help="entangle and measure n qubits")
    ghz.add_argument("--qubits", type=int, required=True)
    _add_common(ghz)

    protocols = sub.add_parser("protocols", help="protocol correctness suite")
    _add_common(protocols)
    return parser


def _summarize(result: ScenarioResult) -> None:
    label = f"{result.scenario} n={result.n}"
    if result.mode:
        label += f" mode={result.mode}"
    print(
        f"{label}: trials={result.trials} "
        f"wall_time={result.wall_time:.3f}s outcomes={result.outcome_stats}"
    )
    for name, stats in sorted(result.node_stats.items()):
        print(
            f"  {name}: peak_register_qubits={stats['peak_register_qubits']} "
            f"qubits_created={stats['qubits_created']} "
            f"merges={stats['merges_local']}+{stats['merges_pulled']}"
        )


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "ring":
            result = scenarios.ring_teleport(
                args.nodes, args.mode, trials=args.trials, seed=args.seed,
                backend=args.backend,
            )
        elif args.command == "pingpong":
            result = scenarios.pingpong_teleport(
                args.rounds, trials=args.trials, seed=args.seed,
                backend=args.backend,
            )
        elif args.command == "create":
            result = scenarios.create_measure(
                args.qubits, trials=args.trials, seed=args.seed,
                backend=args.backend,
            )
        elif args.command == "ghz":
            result = scenarios.ghz_create_measure(
                args.qubits, trials=args.trials, seed=args.seed,
                backend=args.backend,
            )
        else:
            result = scenarios.run_protocol_suite(
                seed=args.seed, backend=args.backend,
            )
    except ScenarioFailure as exc:
        print(f"correctness failure: {exc}", file=sys.stderr)
        return 1
    except (QnetError, ValueError, ConnectionError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    _summarize(result)
    if args.csv:
        write_csv(args.csv, [result])
        print(f"wrote {len(result.rows)} rows to {args.csv}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
