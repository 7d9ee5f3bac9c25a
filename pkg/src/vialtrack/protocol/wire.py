"""Wire format of the box/server acquisition protocol.

Every message is a 16-byte fixed header followed by the payload:

    version u8 | type u8 | flags u16 | box_id u32 | sequence u32 |
    payload_length u32   (all little-endian)

Control payloads are JSON; a frame upload carries a u32-length-prefixed
JSON metadata block followed by the raw PNG bytes. Acknowledgements echo
the message type with the ACK flag set and reference the acknowledged
sequence number in their payload.
"""

from __future__ import annotations

import enum
import json
import socket
import struct
from dataclasses import dataclass, field

PROTOCOL_VERSION = 1
DEFAULT_PORT = 53750

HEADER = struct.Struct("<BBHIII")
_META_PREFIX = struct.Struct("<I")

FLAG_ACK = 0x0001

MAX_PAYLOAD = 32 * 1024 * 1024

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


class MessageType(enum.IntEnum):
    REGISTER = 1
    REGISTER_ACK = 2
    SET_CAPTURE_PARAMS = 3
    SET_LIGHTS = 4
    SET_SCHEDULE = 5
    SNAPSHOT_REQUEST = 6
    FRAME_UPLOAD = 7
    SENSOR_ONLY = 8
    HEARTBEAT = 9
    ERROR = 10


class WireError(RuntimeError):
    """A byte stream violates the framing contract."""


class ConnectionClosed(RuntimeError):
    """The peer closed the connection."""


@dataclass(frozen=True)
class ProtocolMessage:
    message_type: MessageType
    box_id: int
    sequence: int
    payload: bytes = b""
    flags: int = 0
    version: int = PROTOCOL_VERSION

    def encode(self) -> bytes:
        if len(self.payload) > MAX_PAYLOAD:
            raise WireError(f"payload of {len(self.payload)} bytes exceeds the maximum")
        header = HEADER.pack(
            self.version,
            int(self.message_type),
            self.flags,
            self.box_id,
            self.sequence,
            len(self.payload),
        )
        return header + self.payload

    @property
    def is_ack(self) -> bool:
        return bool(self.flags & FLAG_ACK)

    def json(self) -> dict:
        try:
            return json.loads(self.payload.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise WireError(f"malformed JSON payload: {exc}") from exc


def json_payload(obj: dict) -> bytes:
    return json.dumps(obj, separators=(",", ":"), sort_keys=True).encode("utf-8")


class IncompleteMessage(Exception):
    """More bytes are needed to finish decoding."""

    def __init__(self, missing: int) -> None:
        super().__init__(f"need {missing} more byte(s)")
        self.missing = missing


def decode(buffer: bytes | memoryview, offset: int = 0) -> tuple[ProtocolMessage, int]:
    """Decode one message starting at ``offset``.

    Returns (message, bytes consumed). Raises IncompleteMessage when the
    buffer holds a prefix of a valid message and WireError when it cannot
    be one.
    """
    view = memoryview(buffer)[offset:]
    if len(view) < HEADER.size:
        raise IncompleteMessage(HEADER.size - len(view))
    version, mtype, flags, box_id, sequence, length = HEADER.unpack_from(view)
    if version != PROTOCOL_VERSION:
        raise WireError(f"unsupported protocol version {version}")
    try:
        message_type = MessageType(mtype)
    except ValueError:
        raise WireError(f"unknown message type {mtype}") from None
    if length > MAX_PAYLOAD:
        raise WireError(f"declared payload of {length} bytes exceeds the maximum")
    if len(view) < HEADER.size + length:
        raise IncompleteMessage(HEADER.size + length - len(view))
    payload = bytes(view[HEADER.size : HEADER.size + length])
    msg = ProtocolMessage(
        message_type=message_type,
        box_id=box_id,
        sequence=sequence,
        payload=payload,
        flags=flags,
        version=version,
    )
    return msg, HEADER.size + length


def decode_stream(data: bytes) -> list[ProtocolMessage]:
    """Decode a byte string that must be a whole number of messages."""
    messages = []
    offset = 0
    while offset < len(data):
        try:
            msg, consumed = decode(data, offset)
        except IncompleteMessage as exc:
            raise WireError(f"trailing partial message: {exc}") from None
        messages.append(msg)
        offset += consumed
    return messages


@dataclass
class MessageReader:
    """Incremental decoder for a socket's receive stream."""

    _buffer: bytearray = field(default_factory=bytearray)

    def feed(self, data: bytes) -> list[ProtocolMessage]:
        self._buffer.extend(data)
        out = []
        offset = 0
        while True:
            try:
                msg, consumed = decode(self._buffer, offset)
            except IncompleteMessage:
                break
            out.append(msg)
            offset += consumed
        del self._buffer[:offset]
        return out


def recv_message(sock: socket.socket) -> ProtocolMessage:
    """Blocking read of exactly one message."""
    header = _recv_exact(sock, HEADER.size)
    version, mtype, flags, box_id, sequence, length = HEADER.unpack(header)
    if length > MAX_PAYLOAD:
        raise WireError(f"declared payload of {length} bytes exceeds the maximum")
    payload = _recv_exact(sock, length) if length else b""
    msg, _ = decode(header + payload)
    return msg


def send_message(sock: socket.socket, msg: ProtocolMessage) -> None:
    sock.sendall(msg.encode())


def _recv_exact(sock: socket.socket, count: int) -> bytes:
    chunks = bytearray()
    while len(chunks) < count:
        chunk = sock.recv(count - len(chunks))
        if not chunk:
            raise ConnectionClosed("peer closed the connection")
        chunks.extend(chunk)
    return bytes(chunks)


# -- frame-upload payload ----------------------------------------------------


def pack_frame_payload(meta: dict, png: bytes) -> bytes:
    blob = json_payload(meta)
    return _META_PREFIX.pack(len(blob)) + blob + png


def unpack_frame_payload(payload: bytes) -> tuple[dict, bytes]:
    """Split a frame-upload payload into metadata and PNG bytes.

    Validates the length prefix and the PNG signature; anything
    inconsistent raises WireError so the caller can reject the frame
    without persisting it.
    """
    if len(payload) < _META_PREFIX.size:
        raise WireError("frame payload too short for its metadata prefix")
    (meta_len,) = _META_PREFIX.unpack_from(payload)
    if _META_PREFIX.size + meta_len > len(payload):
        raise WireError("frame metadata length exceeds the payload")
    try:
        meta = json.loads(payload[_META_PREFIX.size : _META_PREFIX.size + meta_len])
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise WireError(f"malformed frame metadata: {exc}") from exc
    png = payload[_META_PREFIX.size + meta_len :]
    if not png.startswith(PNG_SIGNATURE):
        raise WireError("frame image is not a PNG")
    return meta, png
