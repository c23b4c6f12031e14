"""Regenerate fixtures/cqc_golden.json, the frozen wire-format byte vectors.

Every entry pins the exact bytes of one client-protocol message together
with its decoded structure.  Client implementations in any language assert
byte-for-byte equality against these vectors, so regenerating this file
must be a no-op unless the wire format is intentionally being changed.

Usage: python3 tools/make_golden.py
"""

from __future__ import annotations

import json
from pathlib import Path

from qnetsim.cqc import codec as c

OUT_PATH = Path(__file__).resolve().parent.parent / "fixtures" / "cqc_golden.json"

APP_ID = 5


def extra(
    extra_qubit_id: int = 0,
    remote_app_id: int = 0,
    remote_node: int = 0,
    remote_port: int = 0,
    action_length: int = 0,
    step: int = 0,
) -> c.ExtraHeader:
    return c.ExtraHeader(
        extra_qubit_id=extra_qubit_id,
        remote_app_id=remote_app_id,
        remote_node=remote_node,
        remote_port=remote_port,
        action_length=action_length,
        step=step,
        padding=0,
    )


def cmd(
    instruction: c.Cmd,
    qubit_id: int = 0,
    options: int = c.Opt.NOTIFY | c.Opt.BLOCK,
    xtra: c.ExtraHeader | None = None,
    block: tuple[c.ParsedCommand, ...] = (),
) -> c.ParsedCommand:
    if xtra is None and c.command_has_extra(instruction, options, factory_top=False):
        xtra = extra()
    return c.ParsedCommand(
        header=c.CommandHeader(qubit_id=qubit_id, instruction=instruction, options=options),
        extra=xtra,
        block=tuple(block),
    )


def command_to_json(pc: c.ParsedCommand) -> dict:
    out: dict = {
        "qubit_id": pc.header.qubit_id,
        "instruction": int(pc.header.instruction),
        "options": pc.header.options,
        "extra": None,
        "block": [command_to_json(sub) for sub in pc.block],
    }
    if pc.extra is not None:
        out["extra"] = {
            "extra_qubit_id": pc.extra.extra_qubit_id,
            "remote_app_id": pc.extra.remote_app_id,
            "remote_node": pc.extra.remote_node,
            "remote_port": pc.extra.remote_port,
            "action_length": pc.extra.action_length,
            "step": pc.extra.step,
            "padding": pc.extra.padding,
        }
    return out


def entry(
    name: str,
    msg_type: c.MsgType,
    payload: bytes = b"",
    body: dict | None = None,
    factory: bool = False,
) -> dict:
    raw = c.encode_message(msg_type, APP_ID, payload)
    header = c.CqcHeader.unpack(raw[: c.HEADER_LEN])
    out = {
        "name": name,
        "hex": raw.hex(),
        "header": {
            "version": header.version,
            "msg_type": int(header.msg_type),
            "app_id": header.app_id,
            "payload_length": header.payload_length,
        },
        "command": None,
        "body": body,
    }
    if msg_type in (c.MsgType.COMMAND, c.MsgType.FACTORY, c.MsgType.GET_TIME):
        parsed = c.parse_message_body(msg_type, payload)
        out["command"] = command_to_json(parsed)
        if factory:
            out["factory_count"] = parsed.extra.step if parsed.extra else 0
    return out


def command_entry(name: str, pc: c.ParsedCommand, factory: bool = False) -> dict:
    msg_type = c.MsgType.FACTORY if factory else c.MsgType.COMMAND
    payload = c.encode_command(pc, factory_top=factory)
    return entry(name, msg_type, payload, factory=factory)


def build_entries() -> list[dict]:
    ip_a = (10 << 24) | 2  # 10.0.0.2
    ip_b = (10 << 24) | 1  # 10.0.0.1
    remote = extra(remote_app_id=9, remote_node=ip_a, remote_port=8002)
    entries: list[dict] = []

    # --- requests: session handshake and single commands -------------------
    entries.append(entry("hello", c.MsgType.HELLO))
    entries.append(command_entry("cmd_new", cmd(c.Cmd.NEW)))
    entries.append(command_entry("cmd_new_silent", cmd(c.Cmd.NEW, options=0)))
    entries.append(command_entry("cmd_allocate_7", cmd(c.Cmd.ALLOCATE, xtra=extra(step=7))))
    entries.append(command_entry("cmd_release", cmd(c.Cmd.RELEASE, qubit_id=3)))
    entries.append(command_entry("cmd_reset", cmd(c.Cmd.RESET, qubit_id=2)))
    entries.append(command_entry("cmd_measure", cmd(c.Cmd.MEASURE, qubit_id=1)))
    entries.append(command_entry("cmd_measure_inplace", cmd(c.Cmd.MEASURE_INPLACE, qubit_id=1)))
    entries.append(
        command_entry("cmd_measure_noblock", cmd(c.Cmd.MEASURE, qubit_id=4, options=c.Opt.NOTIFY))
    )
    entries.append(command_entry("cmd_send", cmd(c.Cmd.SEND, qubit_id=2, xtra=remote)))
    entries.append(command_entry("cmd_recv", cmd(c.Cmd.RECV)))
    entries.append(command_entry("cmd_epr", cmd(c.Cmd.EPR, xtra=remote)))
    entries.append(command_entry("cmd_recv_epr", cmd(c.Cmd.RECV_EPR)))
    entries.append(
        command_entry("cmd_swap", cmd(c.Cmd.SWAP, qubit_id=1, xtra=extra(extra_qubit_id=2)))
    )
    for gate in (c.Cmd.I, c.Cmd.X, c.Cmd.Y, c.Cmd.Z, c.Cmd.H, c.Cmd.K, c.Cmd.T):
        entries.append(command_entry(f"cmd_gate_{gate.name.lower()}", cmd(gate, qubit_id=5)))
    for axis, step in ((c.Cmd.ROT_X, 64), (c.Cmd.ROT_Y, 128), (c.Cmd.ROT_Z, 192)):
        entries.append(
            command_entry(
                f"cmd_{axis.name.lower()}_{step}", cmd(axis, qubit_id=1, xtra=extra(step=step))
            )
        )
    entries.append(command_entry("cmd_cnot", cmd(c.Cmd.CNOT, xtra=extra(extra_qubit_id=1))))
    entries.append(
        command_entry("cmd_cphase", cmd(c.Cmd.CPHASE, qubit_id=2, xtra=extra(extra_qubit_id=3)))
    )

    # --- requests: repeated execution --------------------------------------
    entries.append(
        command_entry("factory_h_3", cmd(c.Cmd.H, qubit_id=1, xtra=extra(step=3)), factory=True)
    )
    entries.append(
        command_entry(
            "factory_epr_2",
            cmd(
                c.Cmd.EPR,
                xtra=extra(remote_app_id=9, remote_node=ip_a, remote_port=8002, step=2),
            ),
            factory=True,
        )
    )

    # --- requests: conditional and chained blocks --------------------------
    entries.append(
        command_entry(
            "ifthen_x",
            cmd(
                c.Cmd.MEASURE_INPLACE,
                options=c.Opt.NOTIFY | c.Opt.BLOCK | c.Opt.IFTHEN,
                xtra=extra(),
                block=(cmd(c.Cmd.X, options=c.Opt.BLOCK),),
            ),
        )
    )
    entries.append(
        command_entry(
            "action_chain",
            cmd(
                c.Cmd.H,
                options=c.Opt.NOTIFY | c.Opt.BLOCK | c.Opt.ACTION,
                xtra=extra(),
                block=(
                    cmd(c.Cmd.CNOT, options=c.Opt.BLOCK, xtra=extra(extra_qubit_id=1)),
                    cmd(c.Cmd.MEASURE, qubit_id=1, options=c.Opt.BLOCK),
                ),
            ),
        )
    )
    entries.append(
        command_entry(
            "nested_action",
            cmd(
                c.Cmd.H,
                options=c.Opt.NOTIFY | c.Opt.BLOCK | c.Opt.ACTION,
                xtra=extra(),
                block=(
                    cmd(
                        c.Cmd.X,
                        qubit_id=1,
                        options=c.Opt.BLOCK | c.Opt.ACTION,
                        xtra=extra(),
                        block=(cmd(c.Cmd.Z, qubit_id=2, options=c.Opt.BLOCK),),
                    ),
                ),
            ),
        )
    )
    entries.append(
        entry(
            "get_time",
            c.MsgType.GET_TIME,
            c.CommandHeader(qubit_id=3, instruction=c.Cmd.I, options=0).pack(),
        )
    )

    # --- replies ------------------------------------------------------------
    entries.append(
        entry(
            "reply_hello",
            c.MsgType.HELLO,
            c.pack_hello_reply(4096, "alice"),
            body={"kind": "hello", "max_qubits": 4096, "name": "alice"},
        )
    )
    entries.append(
        entry(
            "reply_new_ok",
            c.MsgType.NEW_OK,
            c.pack_qubit_id(7),
            body={"kind": "qubit_id", "qubit_id": 7},
        )
    )
    entries.append(entry("reply_done", c.MsgType.DONE))
    entries.append(
        entry(
            "reply_recv",
            c.MsgType.RECV,
            c.pack_qubit_id(2),
            body={"kind": "qubit_id", "qubit_id": 2},
        )
    )
    ent = c.EprInfo(
        qubit_id=5, node_a=ip_b, node_b=ip_a, sequence=3, created_at=1700000000123
    )
    entries.append(
        entry(
            "reply_epr_ok",
            c.MsgType.EPR_OK,
            ent.pack(),
            body={
                "kind": "epr",
                "qubit_id": 5,
                "node_a": ip_b,
                "node_b": ip_a,
                "sequence": 3,
                "created_at": 1700000000123,
            },
        )
    )
    for bit in (0, 1):
        entries.append(
            entry(
                f"reply_measout_{bit}",
                c.MsgType.MEASOUT,
                c.pack_measout(bit),
                body={"kind": "measout", "outcome": bit},
            )
        )
    entries.append(
        entry(
            "reply_inf_time",
            c.MsgType.INF_TIME,
            c.pack_inf_time(123456789),
            body={"kind": "inf_time", "time_ms": 123456789},
        )
    )
    entries.append(
        entry(
            "reply_expire",
            c.MsgType.EXPIRE,
            c.pack_qubit_id(9),
            body={"kind": "qubit_id", "qubit_id": 9},
        )
    )
    for err in sorted(c.ERROR_TYPES):
        entries.append(entry(f"reply_{c.MsgType(err).name.lower()}", c.MsgType(err)))
    return entries


def main() -> None:
    entries = build_entries()
    names = [e["name"] for e in entries]
    if len(names) != len(set(names)):
        raise SystemExit("duplicate fixture names")
    doc = {"version": c.CQC_VERSION, "entries": entries}
    OUT_PATH.parent.mkdir(parents=True, exist_ok=True)
    OUT_PATH.write_text(json.dumps(doc, indent=1) + "\n")
    print(f"wrote {len(entries)} vectors to {OUT_PATH}")


if __name__ == "__main__":
    main()
