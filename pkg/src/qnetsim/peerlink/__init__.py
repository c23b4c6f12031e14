"""Node-to-node transport: framed binary RPC between simulation servers."""

from .codec import (  # noqa: F401
    KIND_REQUEST,
    KIND_RESPONSE,
    MAX_FRAME,
    Op,
    PeerFrame,
    Status,
    decode_frame,
    encode_frame,
    read_frame,
)
from .transport import PeerConnection, PeerOpError, PeerServer  # noqa: F401
