"""Acquisition server: accepts box connections, persists frame uploads.

One handler thread per connection keeps a slow box from delaying the
others. Boxes are enumerated by their first registration and keep that
ordinal across reconnects; sessions accumulate per box and are written
as HDF5 files when the server stops.
"""

from __future__ import annotations

import json
import logging
import socket
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

from .. import persistence
from ..model import FrameRecord, SensorReading
from . import wire
from .wire import FLAG_ACK, MessageType, ProtocolMessage

log = logging.getLogger(__name__)

HEARTBEAT_INTERVAL_S = 10.0
LIVENESS_TIMEOUT_S = 30.0


class RegistrationError(RuntimeError):
    """A box could not be registered."""


@dataclass
class BoxEntry:
    box_id: int
    ordinal: int
    first_seen: float
    address: str = ""
    connected: bool = False
    last_seen: float = 0.0
    info: dict = field(default_factory=dict)


class BoxRegistry:
    """Connected boxes ordered by time of first connection.

    The ordinal assigned at first registration is stable across
    reconnects of the same box id.
    """

    def __init__(self) -> None:
        self._entries: dict[int, BoxEntry] = {}
        self._lock = threading.Lock()

    def register(self, box_id: int, address: str, info: dict) -> BoxEntry:
        with self._lock:
            entry = self._entries.get(box_id)
            if entry is None:
                entry = BoxEntry(
                    box_id=box_id, ordinal=len(self._entries), first_seen=time.time()
                )
                self._entries[box_id] = entry
            elif entry.connected:
                raise RegistrationError(f"box {box_id} is already connected")
            entry.address = address
            entry.connected = True
            entry.last_seen = time.time()
            entry.info = info
            return entry

    def mark_disconnected(self, box_id: int) -> None:
        with self._lock:
            entry = self._entries.get(box_id)
            if entry is not None:
                entry.connected = False

    def touch(self, box_id: int) -> None:
        with self._lock:
            entry = self._entries.get(box_id)
            if entry is not None:
                entry.last_seen = time.time()

    def get(self, box_id: int) -> BoxEntry | None:
        with self._lock:
            return self._entries.get(box_id)

    def ordered(self) -> list[BoxEntry]:
        with self._lock:
            return sorted(self._entries.values(), key=lambda e: e.ordinal)


@dataclass
class BoxDescriptor:
    """Per-box settings pushed at registration time."""

    box_id: int
    genotype: str = "wildtype"
    schedule: dict | None = None
    capture_params: dict | None = None
    lights: dict | None = None
    layout_file: str | None = None
    tracker: dict | None = None


@dataclass
class WorkspaceConfig:
    """Saved arrangement of boxes and their settings."""

    boxes: list[BoxDescriptor] = field(default_factory=list)
    data_dir: str | None = None

    def __post_init__(self) -> None:
        ids = [b.box_id for b in self.boxes]
        if len(ids) != len(set(ids)):
            raise ValueError("workspace box ids must be unique")

    @classmethod
    def load(cls, path: str | Path) -> "WorkspaceConfig":
        raw = json.loads(Path(path).read_text())
        boxes = [
            BoxDescriptor(
                box_id=int(b["id"]),
                genotype=b.get("genotype", "wildtype"),
                schedule=b.get("schedule"),
                capture_params=b.get("capture_params"),
                lights=b.get("lights"),
                layout_file=b.get("layout"),
                tracker=b.get("tracker"),
            )
            for b in raw.get("boxes", [])
        ]
        return cls(boxes=boxes, data_dir=raw.get("data_dir"))

    def descriptor(self, box_id: int) -> BoxDescriptor | None:
        for b in self.boxes:
            if b.box_id == box_id:
                return b
        return None


@dataclass
class _Connection:
    sock: socket.socket
    box_id: int | None = None
    last_recv_seq: int = -1
    next_send_seq: int = 0
    send_lock: threading.Lock = field(default_factory=threading.Lock)


class _BoxSession:
    """Accumulates one box's frames until the session file is written."""

    def __init__(self, box_id: int) -> None:
        self.box_id = box_id
        self.lock = threading.Lock()
        self.frames: list[FrameRecord] = []
        self.frame_indices: set[int] = set()
        self.raw_meta: list[dict] = []
        self.started = time.time()
        self.max_clock_skew = 0.0

    def add(self, record: FrameRecord, meta: dict | None = None) -> None:
        with self.lock:
            if record.frame_index not in self.frame_indices:
                self.frame_indices.add(record.frame_index)
                self.frames.append(record)
                if meta is not None:
                    self.raw_meta.append(meta)


class AcquisitionServer:
    """TCP server for simulated (or real) box clients."""

    def __init__(
        self,
        data_dir: str | Path,
        host: str = "127.0.0.1",
        port: int = 0,
        workspace: WorkspaceConfig | None = None,
        time_scale: float = 1.0,
        liveness_timeout: float = LIVENESS_TIMEOUT_S,
        default_schedule: dict | None = None,
    ) -> None:
        self.data_dir = Path(data_dir)
        self.host = host
        self.registry = BoxRegistry()
        self.workspace = workspace or WorkspaceConfig()
        self.time_scale = time_scale
        self.liveness_timeout = liveness_timeout
        self.default_schedule = default_schedule
        self.sessions: dict[int, _BoxSession] = {}
        self.client_errors: list[tuple[int, dict]] = []
        self._sessions_lock = threading.Lock()
        self._connections: dict[int, _Connection] = {}
        self._conn_lock = threading.Lock()
        self._listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._listener.bind((host, port))
        self.port = self._listener.getsockname()[1]
        self._stop = threading.Event()
        self._threads: list[threading.Thread] = []

    # -- lifecycle ---------------------------------------------------------

    def start(self) -> None:
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self._listener.listen()
        accept = threading.Thread(target=self._accept_loop, name="hb-accept", daemon=True)
        accept.start()
        self._threads.append(accept)

    def stop(self) -> None:
        self._stop.set()
        try:
            self._listener.close()
        except OSError:
            pass
        with self._conn_lock:
            conns = list(self._connections.values())
        for conn in conns:
            try:
                conn.sock.close()
            except OSError:
                pass
        for t in self._threads:
            t.join(timeout=5.0)
        self.flush_sessions()

    def __enter__(self) -> "AcquisitionServer":
        self.start()
        return self

    def __exit__(self, *exc) -> None:
        self.stop()

    def flush_sessions(self) -> None:
        """Write every accumulated session to its HDF5 file."""
        session_dir = self.data_dir / "sessions"
        session_dir.mkdir(parents=True, exist_ok=True)
        with self._sessions_lock:
            sessions = list(self.sessions.values())
        for session in sessions:
            with session.lock:
                frames = sorted(session.frames, key=lambda fr: fr.frame_index)
                meta = {
                    "box_id": session.box_id,
                    "start": session.started,
                    "time_scale": self.time_scale,
                    "max_clock_skew_s": session.max_clock_skew,
                }
            persistence.write_session(
                session_dir / f"box_{session.box_id}.h5", [], [], frames, meta
            )

    def frame_count(self, box_id: int) -> int:
        with self._sessions_lock:
            session = self.sessions.get(box_id)
        if session is None:
            return 0
        with session.lock:
            return len(session.frame_indices)

    # -- command push (used by the CLI/tests) --------------------------------

    def send_command(self, box_id: int, message_type: MessageType, payload: dict) -> None:
        with self._conn_lock:
            conn = self._connections.get(box_id)
        if conn is None:
            raise RuntimeError(f"box {box_id} is not connected")
        self._send(conn, message_type, wire.json_payload(payload))

    # -- internals -----------------------------------------------------------

    def _accept_loop(self) -> None:
        while not self._stop.is_set():
            try:
                sock, addr = self._listener.accept()
            except OSError:
                return
            handler = threading.Thread(
                target=self._handle,
                args=(sock, f"{addr[0]}:{addr[1]}"),
                name=f"hb-conn-{addr[1]}",
                daemon=True,
            )
            handler.start()
            self._threads.append(handler)

    def _send(self, conn: _Connection, message_type: MessageType, payload: bytes, flags: int = 0) -> None:
        with conn.send_lock:
            msg = ProtocolMessage(
                message_type=message_type,
                box_id=conn.box_id or 0,
                sequence=conn.next_send_seq,
                payload=payload,
                flags=flags,
            )
            conn.next_send_seq += 1
            wire.send_message(conn.sock, msg)

    def _ack(self, conn: _Connection, msg: ProtocolMessage, extra: dict | None = None) -> None:
        payload = {"seq": msg.sequence}
        if extra:
            payload.update(extra)
        self._send(conn, msg.message_type, wire.json_payload(payload), flags=FLAG_ACK)

    def _error(self, conn: _Connection, msg: ProtocolMessage, code: str, detail: str) -> None:
        payload = {"seq": msg.sequence, "code": code, "detail": detail}
        self._send(conn, MessageType.ERROR, wire.json_payload(payload))

    def _handle(self, sock: socket.socket, address: str) -> None:
        conn = _Connection(sock=sock)
        try:
            first = wire.recv_message(sock)
            if first.message_type != MessageType.REGISTER:
                log.warning("%s: first message was %s, closing", address, first.message_type)
                return
            try:
                entry = self.registry.register(first.box_id, address, first.json())
            except RegistrationError as exc:
                conn.box_id = first.box_id
                self._error(conn, first, "duplicate_box", str(exc))
                return
            conn.box_id = first.box_id
            conn.last_recv_seq = first.sequence
            with self._conn_lock:
                self._connections[first.box_id] = conn
            with self._sessions_lock:
                self.sessions.setdefault(first.box_id, _BoxSession(first.box_id))
            self._send(
                conn,
                MessageType.REGISTER_ACK,
                wire.json_payload(
                    {
                        "ordinal": entry.ordinal,
                        "server_time": time.time(),
                        "heartbeat_interval_s": HEARTBEAT_INTERVAL_S,
                        "liveness_timeout_s": self.liveness_timeout,
                    }
                ),
            )
            self._push_settings(conn)
            self._serve_connection(conn)
        except (wire.ConnectionClosed, wire.WireError, OSError) as exc:
            log.debug("%s: connection ended: %s", address, exc)
        finally:
            if conn.box_id is not None:
                self.registry.mark_disconnected(conn.box_id)
                with self._conn_lock:
                    if self._connections.get(conn.box_id) is conn:
                        del self._connections[conn.box_id]
            try:
                sock.close()
            except OSError:
                pass

    def _push_settings(self, conn: _Connection) -> None:
        descriptor = self.workspace.descriptor(conn.box_id)
        schedule = self.default_schedule
        if descriptor is not None:
            if descriptor.capture_params:
                self._send(
                    conn,
                    MessageType.SET_CAPTURE_PARAMS,
                    wire.json_payload(descriptor.capture_params),
                )
            if descriptor.lights:
                self._send(conn, MessageType.SET_LIGHTS, wire.json_payload(descriptor.lights))
            if descriptor.schedule:
                schedule = descriptor.schedule
        if schedule:
            schedule = dict(schedule)
            schedule.setdefault("time_scale", self.time_scale)
            self._send(conn, MessageType.SET_SCHEDULE, wire.json_payload(schedule))

    def _serve_connection(self, conn: _Connection) -> None:
        while not self._stop.is_set():
            msg = wire.recv_message(conn.sock)
            if msg.sequence <= conn.last_recv_seq and not msg.is_ack:
                self._error(
                    conn,
                    msg,
                    "bad_sequence",
                    f"sequence {msg.sequence} not greater than {conn.last_recv_seq}",
                )
                return
            conn.last_recv_seq = max(conn.last_recv_seq, msg.sequence)
            self.registry.touch(conn.box_id)
            if msg.message_type == MessageType.FRAME_UPLOAD:
                self._on_frame(conn, msg)
            elif msg.message_type == MessageType.SENSOR_ONLY:
                self._on_sensor(conn, msg)
            elif msg.message_type == MessageType.HEARTBEAT:
                self._ack(conn, msg)
            elif msg.message_type == MessageType.ERROR:
                try:
                    detail = msg.json()
                except wire.WireError:
                    detail = {"raw": msg.payload.decode(errors="replace")}
                self.client_errors.append((conn.box_id, detail))
                log.warning("box %s reported: %s", conn.box_id, detail)
            elif msg.is_ack:
                continue
            else:
                self._error(conn, msg, "unexpected", f"unexpected {msg.message_type.name}")

    def _on_frame(self, conn: _Connection, msg: ProtocolMessage) -> None:
        try:
            meta, png = wire.unpack_frame_payload(msg.payload)
            record = _frame_record(conn.box_id, meta)
        except (wire.WireError, KeyError, TypeError, ValueError) as exc:
            qpath = persistence.quarantine_path(self.data_dir, conn.box_id, msg.sequence)
            qpath.parent.mkdir(parents=True, exist_ok=True)
            qpath.write_bytes(msg.payload)
            self._error(conn, msg, "bad_frame", str(exc))
            return
        png_path = persistence.frame_png_path(self.data_dir, conn.box_id, record.frame_index)
        png_path.parent.mkdir(parents=True, exist_ok=True)
        png_path.write_bytes(png)
        with self._sessions_lock:
            session = self.sessions.setdefault(conn.box_id, _BoxSession(conn.box_id))
        session.add(record)
        expected_wall = meta.get("expected_wall")
        if isinstance(expected_wall, (int, float)):
            skew = abs(time.time() - expected_wall)
            with session.lock:
                session.max_clock_skew = max(session.max_clock_skew, skew)
        self._ack(conn, msg, {"frame_index": record.frame_index})

    def _on_sensor(self, conn: _Connection, msg: ProtocolMessage) -> None:
        try:
            record = _frame_record(conn.box_id, msg.json())
        except (wire.WireError, KeyError, TypeError, ValueError) as exc:
            self._error(conn, msg, "bad_sensor", str(exc))
            return
        with self._sessions_lock:
            session = self.sessions.setdefault(conn.box_id, _BoxSession(conn.box_id))
        session.add(record)
        self._ack(conn, msg)


def _frame_record(box_id: int, meta: dict) -> FrameRecord:
    sensor = meta["sensor"]
    return FrameRecord(
        frame_index=int(meta["frame_index"]),
        timestamp=float(meta["timestamp"]),
        box_id=box_id,
        sensor=SensorReading(
            temperature=float(sensor["temperature"]),
            relative_humidity=float(sensor["relative_humidity"]),
            pressure=float(sensor["pressure"]),
            light_intensity=float(sensor["light_intensity"]),
            light_color=tuple(float(v) for v in sensor["light_color"]),
            external_brightness=float(sensor["external_brightness"]),
        ),
    )
