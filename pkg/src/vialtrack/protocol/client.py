"""Simulated box client.

Connects to the acquisition server, registers, and then idles until a
schedule or command arrives. Captures render a small synthetic vial
image, attach the current sensor readings and light state, and upload
the PNG directly; nothing is buffered locally, so frames falling into a
disconnect are simply missed. An accelerated clock (``time_scale``)
compresses multi-day schedules into minutes.
"""

from __future__ import annotations

import io
import logging
import math
import socket
import threading
import time
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from ..simulate import LifecycleSimulator, SimConfig, get_genotype
from . import wire
from .wire import MessageType, ProtocolMessage

log = logging.getLogger(__name__)

BACKOFF_BASE_S = 1.0
BACKOFF_CAP_S = 60.0
HEARTBEAT_INTERVAL_S = 10.0


@dataclass
class CaptureSchedule:
    """Periodic capture plan in session (simulated) seconds."""

    interval_s: float
    start_s: float
    end_s: float
    active: bool = True
    time_scale: float = 1.0

    def __post_init__(self) -> None:
        if self.interval_s <= 0:
            raise ValueError("capture interval must be positive")
        if self.time_scale <= 0:
            raise ValueError("time scale must be positive")

    @property
    def frame_count(self) -> int:
        return int(math.ceil((self.end_s - self.start_s) / self.interval_s))


@dataclass
class CaptureParams:
    exposure_us: float = 10000.0
    gain: float = 1.0
    roi: tuple[int, int, int, int] | None = None
    pixel_format: str = "BGR888"

    def to_dict(self) -> dict:
        return {
            "exposure_us": self.exposure_us,
            "gain": self.gain,
            "roi": list(self.roi) if self.roi else None,
            "pixel_format": self.pixel_format,
        }


@dataclass
class LightState:
    white1: float = 0.0
    white2: float = 0.0
    ir: float = 1.0
    cycle_on_h: float | None = None
    cycle_off_h: float | None = None

    def effective_white(self, sim_t_s: float) -> tuple[float, float]:
        """White levels at a session time, honouring an on/off cycle."""
        if self.cycle_on_h is None or self.cycle_off_h is None:
            return self.white1, self.white2
        period_s = (self.cycle_on_h + self.cycle_off_h) * 3600.0
        on = sim_t_s % period_s < self.cycle_on_h * 3600.0
        return (self.white1, self.white2) if on else (0.0, 0.0)


class SimulatedBoxClient:
    """One headless box: camera, lights and sensors as seeded simulations."""

    def __init__(
        self,
        host: str,
        port: int,
        box_id: int,
        genotype: str = "wildtype",
        seed: int = 0,
        time_scale: float | None = None,
        vials: int = 3,
        specimens_per_vial: int = 6,
        image_scale: float = 0.1,
        backoff_base: float = BACKOFF_BASE_S,
        backoff_cap: float = BACKOFF_CAP_S,
    ) -> None:
        self.host = host
        self.port = port
        self.box_id = box_id
        self.genotype = genotype
        self.seed = seed
        self.time_scale_override = time_scale
        self.vials = vials
        self.specimens_per_vial = specimens_per_vial
        self.image_scale = image_scale
        self.backoff_base = backoff_base
        self.backoff_cap = backoff_cap

        self.ordinal: int | None = None
        self.capture_params = CaptureParams()
        self.lights = LightState()
        self.schedule: CaptureSchedule | None = None
        self.frames_sent = 0
        self.ack_rtts: list[float] = []
        self.errors_received: list[dict] = []
        self.finished = threading.Event()

        self._rng = np.random.default_rng(np.random.SeedSequence([seed, box_id]))
        self._sock: socket.socket | None = None
        self._seq = 0
        self._pending_sends: dict[int, float] = {}
        self._next_frame = 0
        self._wall_anchor: float | None = None
        self._simulator: LifecycleSimulator | None = None
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None
        self._last_send_wall = 0.0

    # -- lifecycle -----------------------------------------------------------

    def start(self) -> None:
        self._thread = threading.Thread(
            target=self.run, name=f"hb-client-{self.box_id}", daemon=True
        )
        self._thread.start()

    def stop(self) -> None:
        self._stop.set()
        sock = self._sock
        if sock is not None:
            try:
                sock.close()
            except OSError:
                pass
        if self._thread is not None:
            self._thread.join(timeout=10.0)

    def run(self) -> None:
        """Connect, reconnecting with exponential backoff, until stopped."""
        attempt = 0
        while not self._stop.is_set():
            try:
                self._connect_and_serve()
                attempt = 0
            except (OSError, wire.ConnectionClosed, wire.WireError) as exc:
                if self._stop.is_set():
                    break
                delay = min(self.backoff_base * 2**attempt, self.backoff_cap)
                delay *= 1.0 + 0.1 * float(self._rng.uniform())
                log.debug("box %s: reconnect in %.1fs after %s", self.box_id, delay, exc)
                attempt += 1
                if self._stop.wait(delay):
                    break
            else:
                break

    # -- connection ----------------------------------------------------------

    def _connect_and_serve(self) -> None:
        sock = socket.create_connection((self.host, self.port), timeout=10.0)
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._sock = sock
        reader = wire.MessageReader()
        try:
            self._send(MessageType.REGISTER, wire.json_payload(self._hello()))
            self._serve(sock, reader)
        finally:
            self._sock = None
            try:
                sock.close()
            except OSError:
                pass

    def _hello(self) -> dict:
        width, height = self._sensor_dims()
        return {
            "genotype": self.genotype,
            "sensor_dims": [width, height],
            "client_version": 1,
        }

    def _sensor_dims(self) -> tuple[int, int]:
        simulator = self._ensure_simulator()
        return simulator.image_size(self.image_scale)

    def _serve(self, sock: socket.socket, reader: wire.MessageReader) -> None:
        while not self._stop.is_set():
            timeout = self._next_deadline()
            sock.settimeout(timeout)
            try:
                data = sock.recv(65536)
                if not data:
                    raise wire.ConnectionClosed("server closed the connection")
                for msg in reader.feed(data):
                    self._dispatch(msg)
            except socket.timeout:
                pass
            self._run_schedule()
            self._maybe_heartbeat()
            if self.schedule and self._next_frame >= self.schedule.frame_count:
                self.finished.set()

    def _next_deadline(self) -> float:
        if self.schedule is None or not self.schedule.active or self._wall_anchor is None:
            return 0.25
        if self._next_frame >= self.schedule.frame_count:
            return 0.25
        due = self._frame_due_wall(self._next_frame)
        return max(0.001, min(due - time.monotonic(), 0.25))

    # -- inbound messages ------------------------------------------------------

    def _dispatch(self, msg: ProtocolMessage) -> None:
        if msg.is_ack:
            sent = self._pending_sends.pop(msg.json().get("seq", -1), None)
            if sent is not None:
                self.ack_rtts.append(time.monotonic() - sent)
            return
        if msg.message_type == MessageType.REGISTER_ACK:
            self.ordinal = msg.json().get("ordinal")
        elif msg.message_type == MessageType.SET_CAPTURE_PARAMS:
            self._on_capture_params(msg)
        elif msg.message_type == MessageType.SET_LIGHTS:
            self._on_lights(msg)
        elif msg.message_type == MessageType.SET_SCHEDULE:
            self._on_schedule(msg)
        elif msg.message_type == MessageType.SNAPSHOT_REQUEST:
            self._capture_and_send(self._current_sim_time())
        elif msg.message_type == MessageType.ERROR:
            self.errors_received.append(msg.json())
        else:
            log.debug("box %s: ignoring %s", self.box_id, msg.message_type)

    def _on_capture_params(self, msg: ProtocolMessage) -> None:
        raw = msg.json()
        exposure = float(raw.get("exposure_us", self.capture_params.exposure_us))
        gain = float(raw.get("gain", self.capture_params.gain))
        roi = raw.get("roi", None)
        if exposure <= 0 or gain <= 0:
            self._error(msg, "bad_params", "exposure and gain must be positive")
            return
        if roi is not None:
            width, height = self._sensor_dims()
            x, y, w, h = (int(v) for v in roi)
            if x < 0 or y < 0 or w <= 0 or h <= 0 or x + w > width or y + h > height:
                self._error(msg, "bad_roi", f"roi {roi} outside sensor bounds {width}x{height}")
                return
            roi = (x, y, w, h)
        self.capture_params = CaptureParams(
            exposure_us=exposure,
            gain=gain,
            roi=roi,
            pixel_format=str(raw.get("pixel_format", self.capture_params.pixel_format)),
        )
        self._ack(msg)

    def _on_lights(self, msg: ProtocolMessage) -> None:
        raw = msg.json()
        channels = {k: float(raw.get(k, 0.0)) for k in ("white1", "white2", "ir")}
        if any(not 0.0 <= v <= 1.0 for v in channels.values()):
            self._error(msg, "bad_lights", f"channel values must be in [0, 1], got {channels}")
            return
        self.lights = LightState(
            cycle_on_h=raw.get("cycle_on_h"),
            cycle_off_h=raw.get("cycle_off_h"),
            **channels,
        )
        self._ack(msg)

    def _on_schedule(self, msg: ProtocolMessage) -> None:
        raw = msg.json()
        try:
            schedule = CaptureSchedule(
                interval_s=float(raw["interval_s"]),
                start_s=float(raw.get("start_s", 0.0)),
                end_s=float(raw["end_s"]),
                active=bool(raw.get("active", True)),
                time_scale=float(
                    self.time_scale_override
                    if self.time_scale_override is not None
                    else raw.get("time_scale", 1.0)
                ),
            )
        except (KeyError, ValueError) as exc:
            self._error(msg, "bad_schedule", str(exc))
            return
        self.schedule = schedule
        if self._wall_anchor is None:
            self._wall_anchor = time.monotonic()
            self._next_frame = 0
        else:
            # Resumed session: frames due while disconnected are missed.
            self._next_frame = max(self._next_frame, self._first_pending_frame())
        self._simulator = None
        self._ensure_simulator()
        self._ack(msg)

    # -- schedule execution ------------------------------------------------------

    def _frame_due_wall(self, index: int) -> float:
        schedule = self.schedule
        return self._wall_anchor + index * schedule.interval_s / schedule.time_scale

    def _first_pending_frame(self) -> int:
        schedule = self.schedule
        now = time.monotonic()
        elapsed = (now - self._wall_anchor) * schedule.time_scale
        return max(0, int(math.ceil(elapsed / schedule.interval_s)))

    def _current_sim_time(self) -> float:
        if self.schedule is None or self._wall_anchor is None:
            return 0.0
        return (time.monotonic() - self._wall_anchor) * self.schedule.time_scale

    def _run_schedule(self) -> None:
        schedule = self.schedule
        if schedule is None or not schedule.active or self._wall_anchor is None:
            return
        while (
            not self._stop.is_set()
            and self._next_frame < schedule.frame_count
            and time.monotonic() >= self._frame_due_wall(self._next_frame)
        ):
            sim_t = schedule.start_s + self._next_frame * schedule.interval_s
            self._capture_and_send(sim_t, frame_index=self._next_frame)
            self._next_frame += 1

    def _ensure_simulator(self) -> LifecycleSimulator:
        if self._simulator is None:
            duration_days = 1.0
            interval = 600.0
            if self.schedule is not None:
                interval = self.schedule.interval_s
                duration_days = max(
                    (self.schedule.end_s - self.schedule.start_s) / 86400.0, 1e-3
                )
            cfg = SimConfig(
                vials=self.vials,
                specimens_per_vial=self.specimens_per_vial,
                frame_interval_s=interval,
                duration_days=duration_days,
                seed=self.seed,
            )
            self._simulator = LifecycleSimulator(cfg, get_genotype(self.genotype))
        return self._simulator

    # -- capture -------------------------------------------------------------

    def _capture_and_send(self, sim_t: float, frame_index: int | None = None) -> None:
        simulator = self._ensure_simulator()
        if frame_index is None:
            frame_index = min(
                int(sim_t // simulator.cfg.frame_interval_s), simulator.cfg.n_frames - 1
            )
        frame = simulator.render_image(
            min(frame_index, simulator.cfg.n_frames - 1), self.image_scale
        )
        if self.capture_params.roi is not None:
            x, y, w, h = self.capture_params.roi
            frame = frame[y : y + h, x : x + w]
        png = _encode_png(frame)
        white1, white2 = self.lights.effective_white(sim_t)
        meta = {
            "frame_index": frame_index,
            "timestamp": sim_t,
            "capture_params": self.capture_params.to_dict(),
            "lights": {"white1": white1, "white2": white2, "ir": self.lights.ir},
            "ir_pulse": self.lights.ir > 0.0,
            "darkness": white1 == 0.0 and white2 == 0.0,
            "sensor": self._sensor_reading(sim_t, white1, white2),
            "expected_wall": self._expected_wall(frame_index),
        }
        self._send(MessageType.FRAME_UPLOAD, wire.pack_frame_payload(meta, png))
        self.frames_sent += 1

    def _expected_wall(self, frame_index: int) -> float | None:
        if self.schedule is None or self._wall_anchor is None:
            return None
        offset = time.time() - time.monotonic()
        return self._frame_due_wall(frame_index) + offset

    def _sensor_reading(self, sim_t: float, white1: float, white2: float) -> dict:
        """Plausible smooth environmental signals with seeded noise.

        The IR strip is pulsed with the capture, so its contribution is
        always present in readings taken at capture time.
        """
        day_phase = 2.0 * math.pi * (sim_t / 86400.0)
        jitter = float(self._rng.normal(0.0, 0.02))
        white = (white1 + white2) / 2.0
        ir = self.lights.ir
        temperature = 25.0 + 0.4 * math.sin(day_phase) + jitter
        humidity = min(100.0, max(0.0, 60.0 + 5.0 * math.sin(day_phase + 1.0) + jitter * 10))
        pressure = 1013.0 + 2.0 * math.sin(day_phase / 7.0) + jitter
        light_intensity = 420.0 * white + 40.0 * ir
        total = max(white * 3.0 + ir, 1e-9)
        light_color = (
            (white + ir) / (total + 1.0),
            white / (total + 1.0),
            white / (total + 1.0),
        )
        external = 300.0 if (sim_t % 86400.0) < 43200.0 else 1.0
        return {
            "temperature": temperature,
            "relative_humidity": humidity,
            "pressure": pressure,
            "light_intensity": light_intensity,
            "light_color": light_color,
            "external_brightness": external,
        }

    # -- outbound ------------------------------------------------------------

    def _send(self, message_type: MessageType, payload: bytes, flags: int = 0) -> None:
        sock = self._sock
        if sock is None:
            raise wire.ConnectionClosed("not connected")
        msg = ProtocolMessage(
            message_type=message_type,
            box_id=self.box_id,
            sequence=self._seq,
            payload=payload,
            flags=flags,
        )
        if not flags & wire.FLAG_ACK:
            self._pending_sends[self._seq] = time.monotonic()
        self._seq += 1
        self._last_send_wall = time.monotonic()
        wire.send_message(sock, msg)

    def _ack(self, msg: ProtocolMessage) -> None:
        self._send(
            msg.message_type, wire.json_payload({"seq": msg.sequence}), flags=wire.FLAG_ACK
        )

    def _error(self, msg: ProtocolMessage, code: str, detail: str) -> None:
        self._send(
            MessageType.ERROR,
            wire.json_payload({"seq": msg.sequence, "code": code, "detail": detail}),
        )

    def _maybe_heartbeat(self) -> None:
        if time.monotonic() - self._last_send_wall >= HEARTBEAT_INTERVAL_S:
            self._send(MessageType.HEARTBEAT, b"")


def _encode_png(frame: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(frame).save(buf, format="PNG")
    return buf.getvalue()
