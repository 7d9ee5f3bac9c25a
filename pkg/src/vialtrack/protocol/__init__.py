"""Client/server acquisition protocol: wire format, server runtime,
simulated box clients."""

from .wire import (
    DEFAULT_PORT,
    FLAG_ACK,
    MessageType,
    ProtocolMessage,
    WireError,
    decode,
    decode_stream,
    json_payload,
    pack_frame_payload,
    unpack_frame_payload,
)

__all__ = [
    "DEFAULT_PORT",
    "FLAG_ACK",
    "MessageType",
    "ProtocolMessage",
    "WireError",
    "decode",
    "decode_stream",
    "json_payload",
    "pack_frame_payload",
    "unpack_frame_payload",
]
