"""Client protocol wire format: frozen codes, golden vectors, round-trips."""

import json
import struct
from pathlib import Path

import numpy as np
import pytest

from qnetsim import errors as E
from qnetsim.cqc import codec as c

GOLDEN_PATH = Path(__file__).resolve().parent.parent / "fixtures" / "cqc_golden.json"

with GOLDEN_PATH.open() as fh:
    GOLDEN = json.load(fh)


class TestFrozenNumericCodes:
    def test_message_types(self):
        expected = {
            "HELLO": 0, "COMMAND": 1, "FACTORY": 2, "GET_TIME": 3, "NEW_OK": 4,
            "EXPIRE": 5, "DONE": 6, "RECV": 7, "EPR_OK": 8, "MEASOUT": 9,
            "INF_TIME": 10, "ERR_GENERAL": 20, "ERR_NOQUBIT": 21,
            "ERR_UNKNOWN": 22, "ERR_UNAVAILABLE": 23, "ERR_DENIED": 24,
            "ERR_VERSION": 25, "ERR_UNSUPP": 26, "ERR_TIMEOUT": 27,
        }
        assert {m.name: int(m) for m in c.MsgType} == expected

    def test_command_codes(self):
        expected = {
            "NEW": 1, "ALLOCATE": 2, "RELEASE": 3, "RESET": 4, "MEASURE": 5,
            "MEASURE_INPLACE": 6, "SEND": 7, "RECV": 8, "EPR": 9, "RECV_EPR": 10,
            "SWAP": 11, "I": 12, "X": 13, "Y": 14, "Z": 15, "H": 16, "K": 17,
            "T": 18, "ROT_X": 19, "ROT_Y": 20, "ROT_Z": 21, "CNOT": 22,
            "CPHASE": 23,
        }
        assert {m.name: int(m) for m in c.Cmd} == expected

    def test_option_bits(self):
        assert (c.Opt.NOTIFY, c.Opt.ACTION, c.Opt.BLOCK, c.Opt.IFTHEN) == (
            0x01, 0x02, 0x04, 0x08,
        )

    def test_error_set(self):
        assert c.ERROR_TYPES == {
            c.MsgType.ERR_GENERAL, c.MsgType.ERR_NOQUBIT, c.MsgType.ERR_UNKNOWN,
            c.MsgType.ERR_UNAVAILABLE, c.MsgType.ERR_DENIED, c.MsgType.ERR_VERSION,
            c.MsgType.ERR_UNSUPP, c.MsgType.ERR_TIMEOUT,
        }

    def test_struct_sizes(self):
        assert (c.HEADER_LEN, c.CMD_LEN, c.EXTRA_LEN) == (8, 4, 16)
        assert c.CQC_VERSION == 1


class TestHeaderLayouts:
    def test_message_header_is_bbhi(self):
        h = c.CqcHeader(1, c.MsgType.COMMAND, app_id=0x1234, payload_length=0x55)
        assert h.pack() == struct.pack(">BBHI", 1, 1, 0x1234, 0x55)
        assert c.CqcHeader.unpack(h.pack()) == h

    def test_command_header_is_hbb(self):
        h = c.CommandHeader(qubit_id=0x0102, instruction=c.Cmd.H, options=0x05)
        assert h.pack() == struct.pack(">HBB", 0x0102, 16, 0x05)
        assert c.CommandHeader.unpack(h.pack()) == h

    def test_extra_header_is_hhihibb(self):
        x = c.ExtraHeader(1, 2, 3, 4, 5, 6, 0)
        assert x.pack() == struct.pack(">HHIHIBB", 1, 2, 3, 4, 5, 6, 0)
        assert c.ExtraHeader.unpack(x.pack()) == x

    def test_reply_bodies(self):
        assert c.pack_qubit_id(7) == struct.pack(">H", 7)
        assert c.unpack_qubit_id(struct.pack(">H", 7)) == 7
        assert c.pack_measout(1) == b"\x01"
        assert c.unpack_measout(b"\x00") == 0
        assert c.pack_inf_time(2**40) == struct.pack(">Q", 2**40)
        assert c.unpack_inf_time(struct.pack(">Q", 5)) == 5
        ent = c.EprInfo(1, 2, 3, 4, 5)
        assert ent.pack() == struct.pack(">HIIIQ", 1, 2, 3, 4, 5)
        assert c.EprInfo.unpack(ent.pack()) == ent
        raw = c.pack_hello_reply(4096, "alice")
        assert raw == struct.pack(">HB", 4096, 5) + b"alice"
        assert c.unpack_hello_reply(raw) == (4096, "alice")

    @pytest.mark.parametrize(
        "fn,raw",
        [
            (c.CqcHeader.unpack, b"\x01" * 7),
            (c.CommandHeader.unpack, b"\x01" * 3),
            (c.ExtraHeader.unpack, b"\x01" * 15),
            (c.unpack_qubit_id, b"\x01"),
            (c.unpack_measout, b""),
            (c.unpack_inf_time, b"\x01" * 7),
            (c.EprInfo.unpack, b"\x01" * 21),
            (c.unpack_hello_reply, b"\x10\x00\x09alice"),
        ],
    )
    def test_truncated_bodies_rejected(self, fn, raw):
        with pytest.raises(E.ProtocolError):
            fn(raw)


def command_to_json(cmd):
    out = {
        "qubit_id": cmd.header.qubit_id,
        "instruction": int(cmd.header.instruction),
        "options": cmd.header.options,
        "extra": None,
        "block": [command_to_json(sub) for sub in cmd.block],
    }
    if cmd.extra is not None:
        out["extra"] = {
            "extra_qubit_id": cmd.extra.extra_qubit_id,
            "remote_app_id": cmd.extra.remote_app_id,
            "remote_node": cmd.extra.remote_node,
            "remote_port": cmd.extra.remote_port,
            "action_length": cmd.extra.action_length,
            "step": cmd.extra.step,
            "padding": cmd.extra.padding,
        }
    return out


def json_to_command(tree):
    extra = None
    if tree["extra"] is not None:
        extra = c.ExtraHeader(**tree["extra"])
    return c.ParsedCommand(
        header=c.CommandHeader(
            tree["qubit_id"], c.Cmd(tree["instruction"]), tree["options"]
        ),
        extra=extra,
        block=tuple(json_to_command(sub) for sub in tree["block"]),
    )


class TestGoldenVectors:
    @pytest.mark.parametrize(
        "entry", GOLDEN["entries"], ids=[e["name"] for e in GOLDEN["entries"]]
    )
    def test_decode_matches_recorded_structure(self, entry):
        raw = bytes.fromhex(entry["hex"])
        header = c.CqcHeader.unpack(raw[: c.HEADER_LEN])
        assert header.version == entry["header"]["version"]
        assert int(header.msg_type) == entry["header"]["msg_type"]
        assert header.app_id == entry["header"]["app_id"]
        assert header.payload_length == entry["header"]["payload_length"]
        assert len(raw) == c.HEADER_LEN + header.payload_length
        if entry["command"] is not None:
            parsed = c.parse_message_body(header.msg_type, raw[c.HEADER_LEN :])
            assert command_to_json(parsed) == entry["command"]

    @pytest.mark.parametrize(
        "entry",
        [e for e in GOLDEN["entries"] if e["command"] is not None],
        ids=[e["name"] for e in GOLDEN["entries"] if e["command"] is not None],
    )
    def test_reencode_reproduces_exact_bytes(self, entry):
        raw = bytes.fromhex(entry["hex"])
        msg_type = c.MsgType(entry["header"]["msg_type"])
        cmd = json_to_command(entry["command"])
        payload = c.encode_command(cmd, factory_top=(msg_type is c.MsgType.FACTORY))
        rebuilt = c.encode_message(msg_type, entry["header"]["app_id"], payload)
        assert rebuilt.hex() == entry["hex"]

    @pytest.mark.parametrize(
        "entry",
        [e for e in GOLDEN["entries"] if e["body"] is not None],
        ids=[e["name"] for e in GOLDEN["entries"] if e["body"] is not None],
    )
    def test_reply_bodies_decode(self, entry):
        raw = bytes.fromhex(entry["hex"])
        payload = raw[c.HEADER_LEN :]
        body = entry["body"]
        if body["kind"] == "qubit_id":
            assert c.unpack_qubit_id(payload) == body["qubit_id"]
        elif body["kind"] == "measout":
            assert c.unpack_measout(payload) == body["outcome"]
        elif body["kind"] == "inf_time":
            assert c.unpack_inf_time(payload) == body["time_ms"]
        elif body["kind"] == "epr":
            ent = c.EprInfo.unpack(payload)
            assert ent == c.EprInfo(
                body["qubit_id"], body["node_a"], body["node_b"],
                body["sequence"], body["created_at"],
            )
        elif body["kind"] == "hello":
            assert c.unpack_hello_reply(payload) == (body["max_qubits"], body["name"])
        else:  # pragma: no cover - fixture schema guard
            pytest.fail(f"unknown body kind {body['kind']}")

    def test_fixture_names_unique_and_versioned(self):
        names = [e["name"] for e in GOLDEN["entries"]]
        assert len(names) == len(set(names))
        assert GOLDEN["version"] == c.CQC_VERSION
        assert len(names) >= 45


class TestExtraPresenceRules:
    EXTRA_ALWAYS = {
        c.Cmd.ALLOCATE, c.Cmd.SEND, c.Cmd.RECV, c.Cmd.EPR, c.Cmd.RECV_EPR,
        c.Cmd.SWAP, c.Cmd.ROT_X, c.Cmd.ROT_Y, c.Cmd.ROT_Z, c.Cmd.CNOT,
        c.Cmd.CPHASE,
    }

    @pytest.mark.parametrize("instruction", list(c.Cmd), ids=lambda i: i.name)
    def test_instruction_table(self, instruction):
        has = c.command_has_extra(instruction, options=0, factory_top=False)
        assert has == (instruction in self.EXTRA_ALWAYS)

    def test_conditional_flags_force_extra(self):
        for flag in (c.Opt.ACTION, c.Opt.IFTHEN):
            assert c.command_has_extra(c.Cmd.X, options=flag, factory_top=False)

    def test_factory_top_forces_extra(self):
        assert c.command_has_extra(c.Cmd.X, options=0, factory_top=True)


class TestParseRejections:
    def test_action_flag_without_block(self):
        cmd = c.CommandHeader(0, c.Cmd.H, c.Opt.ACTION).pack()
        extra = c.ExtraHeader(0, 0, 0, 0, 0, 0, 0).pack()
        with pytest.raises(E.ProtocolError):
            c.parse_message_body(c.MsgType.COMMAND, cmd + extra)

    def test_block_without_flag(self):
        inner = c.CommandHeader(0, c.Cmd.X, 0).pack()
        cmd = c.CommandHeader(0, c.Cmd.SWAP, 0).pack()
        extra = c.ExtraHeader(1, 0, 0, 0, len(inner), 0, 0).pack()
        with pytest.raises(E.ProtocolError):
            c.parse_message_body(c.MsgType.COMMAND, cmd + extra + inner)

    def test_trailing_bytes_rejected(self):
        payload = c.CommandHeader(0, c.Cmd.X, 0).pack() + b"\x00"
        with pytest.raises(E.ProtocolError):
            c.parse_message_body(c.MsgType.COMMAND, payload)

    def test_truncated_extra_rejected(self):
        payload = c.CommandHeader(0, c.Cmd.CNOT, 0).pack() + b"\x00\x01"
        with pytest.raises(E.ProtocolError):
            c.parse_message_body(c.MsgType.COMMAND, payload)

    def test_action_length_overrun_rejected(self):
        cmd = c.CommandHeader(0, c.Cmd.H, c.Opt.ACTION).pack()
        extra = c.ExtraHeader(0, 0, 0, 0, 999, 0, 0).pack()
        with pytest.raises(E.ProtocolError):
            c.parse_message_body(c.MsgType.COMMAND, cmd + extra)

    def test_unknown_instruction_parses_leniently(self):
        # Unrecognized codes survive the parse so servers can answer
        # with a typed unsupported-command error instead of a hangup.
        payload = struct.pack(">HBB", 0, 99, 0)
        parsed = c.parse_message_body(c.MsgType.COMMAND, payload)
        assert parsed.header.instruction == 99
        assert parsed.extra is None

    def test_get_time_wants_bare_command_header(self):
        ok = c.CommandHeader(3, c.Cmd.I, 0).pack()
        parsed = c.parse_message_body(c.MsgType.GET_TIME, ok)
        assert parsed.header.qubit_id == 3
        with pytest.raises(E.ProtocolError):
            c.parse_message_body(c.MsgType.GET_TIME, ok + b"\x00")
        with pytest.raises(E.ProtocolError):
            c.parse_message_body(c.MsgType.GET_TIME, ok[:-1])

    def test_version_guard_on_message_header(self):
        raw = struct.pack(">BBHI", 9, 1, 0, 0)
        header = c.CqcHeader.unpack(raw)
        assert header.version == 9  # decoding succeeds; servers enforce


class TestEncodeGuards:
    def test_missing_required_extra_is_zero_filled(self):
        cmd = c.ParsedCommand(c.CommandHeader(0, c.Cmd.CNOT, 0), None, ())
        raw = c.encode_command(cmd)
        assert len(raw) == c.CMD_LEN + c.EXTRA_LEN
        decoded = c.parse_message_body(c.MsgType.COMMAND, raw)
        assert decoded.extra == c.ExtraHeader()

    def test_block_without_flag_rejected_on_encode(self):
        inner = c.ParsedCommand(c.CommandHeader(0, c.Cmd.X, 0), None, ())
        cmd = c.ParsedCommand(c.CommandHeader(0, c.Cmd.H, 0), None, (inner,))
        with pytest.raises(E.ProtocolError):
            c.encode_command(cmd)

    def test_oversized_payload_rejected(self):
        with pytest.raises(E.ProtocolError):
            c.encode_message(c.MsgType.COMMAND, 0, b"\x00" * (c.MAX_PAYLOAD + 1))


class TestGenerativeRoundTrip:
    def test_two_thousand_random_messages(self):
        from helpers import cqcgen

        rng = np.random.default_rng(2024)
        for _ in range(2000):
            cqcgen.round_trip_once(rng)

    def test_short_fuzz_never_crashes(self):
        rng = np.random.default_rng(99)
        for _ in range(20000):
            raw = rng.bytes(int(rng.integers(0, 40)))
            msg_type = (
                c.MsgType.FACTORY if rng.random() < 0.3 else c.MsgType.COMMAND
            )
            try:
                c.parse_message_body(msg_type, raw)
            except E.ProtocolError:
                pass
