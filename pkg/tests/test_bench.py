"""Benchmark harness, scenarios, and supporting helpers."""

import csv
import io
import subprocess
import sys
import threading

import numpy as np
import pytest

from qnetsim import errors as E
from qnetsim.bench import cli as bench_cli
from qnetsim.bench import scenarios
from qnetsim.bench.classical import (
    ClassicalListener,
    classical_connect,
)
from qnetsim.bench.harness import (
    InProcessNetwork,
    ProcessNetwork,
    build_directory,
    free_ports,
    make_network,
    ring_names,
)
from qnetsim.bench.states import (
    locate_qubit,
    parse_amplitudes,
    states_equal_up_to_global_phase,
)

SQ2 = 1.0 / np.sqrt(2.0)


class TestClassicalChannel:
    def test_round_trip_both_directions(self):
        listener = ClassicalListener()
        accepted = {}
        thread = threading.Thread(
            target=lambda: accepted.update(chan=listener.accept())
        )
        thread.start()
        dialer = classical_connect(listener.host, listener.port)
        thread.join(timeout=10.0)
        server = accepted["chan"]
        try:
            dialer.send_msg(b"ping")
            assert server.recv_msg() == b"ping"
            server.send_msg(b"")
            assert dialer.recv_msg() == b""
            payload = bytes(range(256)) * 10
            server.send_msg(payload)
            dialer.send_msg(b"x")
            assert dialer.recv_msg() == payload
            assert server.recv_msg() == b"x"
        finally:
            dialer.close()
            server.close()
            listener.close()

    def test_oversized_message_rejected(self):
        listener = ClassicalListener()
        accepted = {}
        thread = threading.Thread(
            target=lambda: accepted.update(chan=listener.accept())
        )
        thread.start()
        dialer = classical_connect(listener.host, listener.port)
        thread.join(timeout=10.0)
        try:
            with pytest.raises(ValueError):
                dialer.send_msg(b"\0" * ((1 << 20) + 1))
        finally:
            dialer.close()
            accepted["chan"].close()
            listener.close()

    def test_closed_peer_raises(self):
        listener = ClassicalListener()
        accepted = {}
        thread = threading.Thread(
            target=lambda: accepted.update(chan=listener.accept())
        )
        thread.start()
        dialer = classical_connect(listener.host, listener.port)
        thread.join(timeout=10.0)
        accepted["chan"].close()
        listener.close()
        with pytest.raises(ConnectionError):
            dialer.recv_msg()
        dialer.close()


class TestStateHelpers:
    def test_parse_amplitudes(self):
        reg = {"amplitudes": ["0.5,-0.5", "0,0.70710678"]}
        amps = parse_amplitudes(reg)
        assert amps[0] == pytest.approx(0.5 - 0.5j)
        assert amps[1] == pytest.approx(0.70710678j)

    def test_phase_equality_accepts_rotation(self):
        u = np.array([SQ2, SQ2 * 1j])
        phase = np.exp(0.321j)
        assert states_equal_up_to_global_phase(u, u * phase)

    def test_phase_equality_rejects_different_states(self):
        assert not states_equal_up_to_global_phase(
            np.array([1.0, 0.0]), np.array([0.0, 1.0])
        )
        assert not states_equal_up_to_global_phase(
            np.array([1.0, 0.0]), np.array([1.0, 0.0, 0.0, 0.0])
        )
        # A relative phase is observable and must not be forgiven.
        assert not states_equal_up_to_global_phase(
            np.array([SQ2, SQ2]), np.array([SQ2, -SQ2])
        )

    def test_phase_equality_rejects_unnormalized(self):
        assert not states_equal_up_to_global_phase(
            np.array([1.0, 0.0]), np.array([2.0, 0.0])
        )

    def test_locate_qubit_follows_remote_simulation(self):
        with InProcessNetwork(["alice", "bob"], seed=13) as net:
            with net.client("alice", 1) as ca, net.client("bob", 1) as cb:
                got = {}
                thread = threading.Thread(
                    target=lambda: got.update(ent=cb.recv_epr())
                )
                thread.start()
                ca.create_epr(net.entry("bob"), remote_app_id=1)
                thread.join(timeout=10.0)
                dumps = {name: net.dump(name) for name in ("alice", "bob")}
                amps, position, num_qubits = locate_qubit(
                    dumps, "bob", 1, got["ent"].qubit_id
                )
                assert num_qubits == 2
                expected = np.array([SQ2, 0.0, 0.0, SQ2])
                assert states_equal_up_to_global_phase(amps, expected)
                assert position in (0, 1)


class TestHarness:
    def test_free_ports_are_distinct(self):
        ports = free_ports(8)
        assert len(set(ports)) == 8

    def test_ring_names_are_ordered(self):
        names = ring_names(12)
        assert names[0] == "n00" and names[11] == "n11"
        assert names == sorted(names)

    def test_build_directory_unique_endpoints(self):
        directory = build_directory(["a", "b", "c"])
        seen = set()
        for name in ("a", "b", "c"):
            entry = directory.get(name)
            seen.add(entry.backend_port)
            seen.add(entry.cqc_port)
        assert len(seen) == 6

    def test_make_network_rejects_unknown_backend(self):
        with pytest.raises(ValueError):
            make_network(["a"], backend="imaginary")

    def test_process_network_round_trip(self):
        with ProcessNetwork(["alice", "bob"], seed=21) as net:
            with net.client("alice", 1) as client:
                assert client.hello()[1] == "alice"
                qubit = client.new_qubit()
                client.gate("X", qubit)
                assert client.measure(qubit) == 1
            status = net.status("alice")
            assert status["qubits_created"] == 1
            dump = net.dump("bob")
            assert dump["node"] == "bob"
            assert dump["registers"] == []


class TestScenarios:
    def test_ring_fly_verifies_and_stays_small(self):
        result = scenarios.ring_teleport(3, "fly", trials=2, seed=5)
        assert result.outcome_stats == {"verified": 1.0}
        assert len(result.rows) == 2
        peaks = [
            stats["peak_register_qubits"]
            for stats in result.node_stats.values()
        ]
        assert max(peaks) <= 3

    def test_ring_first_verifies(self):
        result = scenarios.ring_teleport(3, "first", trials=1, seed=6)
        assert result.outcome_stats == {"verified": 1.0}
        peaks = [
            stats["peak_register_qubits"]
            for stats in result.node_stats.values()
        ]
        assert max(peaks) <= 3

    def test_ring_rejects_bad_arguments(self):
        with pytest.raises(ValueError):
            scenarios.ring_teleport(1, "fly")
        with pytest.raises(ValueError):
            scenarios.ring_teleport(3, "sideways")

    def test_pingpong_round_trips(self):
        result = scenarios.pingpong_teleport(3, trials=1, seed=7)
        assert result.outcome_stats == {"verified": 1.0}

    def test_create_measure_keeps_registers_separate(self):
        result = scenarios.create_measure(5, trials=2, seed=8)
        assert result.outcome_stats == {"0": 1.0}
        assert all(row[5] == "registers=5" for row in result.rows)
        assert result.node_stats["solo"]["peak_register_qubits"] == 1

    def test_ghz_outcomes_agree(self):
        result = scenarios.ghz_create_measure(3, trials=6, seed=9)
        stats = result.outcome_stats
        assert stats["all0"] + stats["all1"] == pytest.approx(1.0)
        assert result.node_stats["solo"]["peak_register_qubits"] == 3

    def test_ghz_beyond_register_capacity(self):
        with pytest.raises(E.ResourceError):
            scenarios.ghz_create_measure(
                6, trials=1, seed=9, max_register_qubits=4
            )

    def test_rows_deterministic_under_seed(self):
        first = scenarios.ghz_create_measure(3, trials=5, seed=31)
        second = scenarios.ghz_create_measure(3, trials=5, seed=31)

        def stripped(result):
            return [row[:4] + row[5:] for row in result.rows]

        assert stripped(first) == stripped(second)
        assert first.outcome_stats == second.outcome_stats

    def test_protocol_suite_small_run(self):
        result = scenarios.run_protocol_suite(
            seed=11, matched_trials=5, mismatched_trials=200, plus_trials=100
        )
        report = result.report
        for (h_a, x, h_b), freq in report["bb84"].items():
            if h_a == h_b:
                assert freq == float(x)
            else:
                assert 0.4 <= freq <= 0.6
        for state in ("z+", "z-", "x+", "x-", "y+", "y-"):
            assert report["teleport"][state] is True
        assert report["teleport"]["plus_chi2"] < scenarios.CHI2_CRITICAL_1DOF_P01


class TestCsvAndCli:
    def test_write_csv_schema(self, tmp_path):
        result = scenarios.create_measure(2, trials=3, seed=4)
        path = tmp_path / "rows.csv"
        scenarios.write_csv(path, [result])
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == list(scenarios.CSV_HEADER)
        assert len(rows) == 4
        assert all(len(row) == len(scenarios.CSV_HEADER) for row in rows[1:])
        assert [row[3] for row in rows[1:]] == ["0", "1", "2"]

    def test_bench_cli_create(self, tmp_path, capsys):
        path = tmp_path / "out.csv"
        code = bench_cli.main([
            "create", "--qubits", "3", "--trials", "2",
            "--seed", "5", "--backend", "inproc", "--csv", str(path),
        ])
        out = capsys.readouterr().out
        assert code == 0
        assert "create n=3" in out
        assert path.exists()

    def test_bench_cli_rejects_bad_ring(self, capsys):
        code = bench_cli.main([
            "ring", "--nodes", "1", "--backend", "inproc",
        ])
        assert code == 2
        assert "error" in capsys.readouterr().err

    def test_node_cli_status(self, tmp_path):
        with ProcessNetwork(["alice", "bob"], seed=2) as net:
            from qnetsim.netconf import render_config

            config = tmp_path / "net.conf"
            config.write_text(render_config(net.directory))
            proc = subprocess.run(
                [
                    sys.executable, "-m", "qnetsim.cli", "status",
                    "--config", str(config), "--name", "alice",
                ],
                capture_output=True, text=True, timeout=60,
            )
            assert proc.returncode == 0
            assert "qubits_created=0" in proc.stdout
