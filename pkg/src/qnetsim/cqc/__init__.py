"""Classical-quantum control channel: wire codec and TCP server."""

from .codec import (
    CQC_VERSION,
    CqcHeader,
    CommandHeader,
    ExtraHeader,
    ParsedCommand,
    MsgType,
    Cmd,
    Opt,
    encode_command,
    encode_message,
    parse_message_body,
    instruction_requires_extra,
)
from .server import CqcServer

__all__ = [
    "CQC_VERSION",
    "CqcHeader",
    "CommandHeader",
    "ExtraHeader",
    "ParsedCommand",
    "MsgType",
    "Cmd",
    "Opt",
    "encode_command",
    "encode_message",
    "parse_message_body",
    "instruction_requires_extra",
    "CqcServer",
]
