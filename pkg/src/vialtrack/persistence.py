"""Session storage and interchange file formats.

One HDF5 file per box session carries the sensor series, per-vial tracks
and extracted events; PNG frames live in a sibling directory keyed by
frame index so the session file stays small. Detections, ground truth
and events travel as plain CSV with locale-independent formatting.
"""

from __future__ import annotations

import csv
import os
from pathlib import Path

import h5py
import numpy as np

from .model import (
    BoundingBox,
    Detection,
    EventKind,
    EventRecord,
    FrameRecord,
    SensorReading,
    StageLabel,
    Track,
    TrackSample,
)

SCHEMA_VERSION = 1

DETECTION_FIELDS = (
    "frame_index",
    "timestamp",
    "vial_id",
    "x",
    "y",
    "w",
    "h",
    "label",
    "confidence",
)

TRUTH_FIELDS = (
    "specimen_id",
    "vial_id",
    "hatch_time",
    "pupation_time",
    "eclosion_time",
    "wall_x",
    "wall_y",
)

EVENT_FIELDS = ("id", "t", "kind", "vial")


class SchemaError(RuntimeError):
    """A file does not match the expected schema."""


def _fmt(value: float) -> str:
    """Shortest locale-independent decimal representation."""
    if float(value) == int(value):
        return str(int(value))
    return repr(float(value))


# -- HDF5 sessions ---------------------------------------------------------


def write_session(
    path: str | Path,
    tracks: list[Track],
    events: list[EventRecord],
    frames: list[FrameRecord],
    meta: dict | None = None,
) -> None:
    """Write a session file atomically.

    A failed write leaves only a ``.tmp`` file behind, never a truncated
    session.
    """
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with h5py.File(tmp, "w") as f:
        g_meta = f.create_group("meta")
        g_meta.attrs["schema_version"] = SCHEMA_VERSION
        for key, value in (meta or {}).items():
            g_meta.attrs[key] = value

        g_frames = f.create_group("frames")
        g_frames.create_dataset(
            "timestamps", data=np.array([fr.timestamp for fr in frames], dtype=np.float64)
        )
        g_frames.create_dataset(
            "temperature",
            data=np.array([fr.sensor.temperature for fr in frames], dtype=np.float64),
        )
        g_frames.create_dataset(
            "humidity",
            data=np.array([fr.sensor.relative_humidity for fr in frames], dtype=np.float64),
        )
        g_frames.create_dataset(
            "pressure",
            data=np.array([fr.sensor.pressure for fr in frames], dtype=np.float64),
        )
        g_frames.create_dataset(
            "light",
            data=np.array([fr.sensor.light_intensity for fr in frames], dtype=np.float64),
        )
        g_frames.create_dataset(
            "light_color",
            data=np.array(
                [fr.sensor.light_color for fr in frames], dtype=np.float64
            ).reshape(-1, 3),
        )
        g_frames.create_dataset(
            "external_brightness",
            data=np.array(
                [fr.sensor.external_brightness for fr in frames], dtype=np.float64
            ),
        )
        g_frames.create_dataset(
            "frame_index", data=np.array([fr.frame_index for fr in frames], dtype=np.int64)
        )
        g_frames.create_dataset(
            "box_id", data=np.array([fr.box_id for fr in frames], dtype=np.int64)
        )

        g_vials = f.create_group("vials")
        vial_ids = sorted({t.vial_id for t in tracks} | {e.vial_id for e in events})
        for vial_id in vial_ids:
            g_vial = g_vials.create_group(str(vial_id))
            g_tracks = g_vial.create_group("tracks")
            for track in (t for t in tracks if t.vial_id == vial_id):
                g = g_tracks.create_group(str(track.track_id))
                g.create_dataset(
                    "frame_index",
                    data=np.array([s.frame_index for s in track.samples], dtype=np.int64),
                )
                g.create_dataset(
                    "timestamp",
                    data=np.array([s.timestamp for s in track.samples], dtype=np.float64),
                )
                g.create_dataset(
                    "bbox",
                    data=np.array(
                        [(s.bbox.x, s.bbox.y, s.bbox.w, s.bbox.h) for s in track.samples],
                        dtype=np.float32,
                    ).reshape(-1, 4),
                )
                g.create_dataset(
                    "stage",
                    data=np.array([int(s.label) for s in track.samples], dtype=np.uint8),
                )
                if track.smoothed_labels is not None:
                    g.create_dataset(
                        "smoothed_stage",
                        data=np.array(
                            [int(s) for s in track.smoothed_labels], dtype=np.uint8
                        ),
                    )
            vial_events = [e for e in events if e.vial_id == vial_id]
            g_events = g_vial.create_group("events")
            g_events.create_dataset(
                "kind", data=np.array([int(e.kind) for e in vial_events], dtype=np.uint8)
            )
            g_events.create_dataset(
                "track_id",
                data=np.array([e.track_id for e in vial_events], dtype=np.int64),
            )
            g_events.create_dataset(
                "timestamp",
                data=np.array([e.timestamp for e in vial_events], dtype=np.float64),
            )
            g_events.create_dataset(
                "frame_index",
                data=np.array(
                    [-1 if e.frame_index is None else e.frame_index for e in vial_events],
                    dtype=np.int64,
                ),
            )
            g_events.create_dataset(
                "position",
                data=np.array(
                    [
                        (np.nan, np.nan) if e.position is None else e.position
                        for e in vial_events
                    ],
                    dtype=np.float64,
                ).reshape(-1, 2),
            )
    os.replace(tmp, path)


def read_session(path: str | Path) -> tuple[list[Track], list[EventRecord], list[FrameRecord], dict]:
    """Inverse of :func:`write_session`."""
    path = Path(path)
    with h5py.File(path, "r") as f:
        for group in ("meta", "frames", "vials"):
            if group not in f:
                raise SchemaError(f"session file {path} is missing group /{group}")
        meta = dict(f["meta"].attrs)
        found = int(meta.pop("schema_version", -1))
        if found != SCHEMA_VERSION:
            raise SchemaError(
                f"session schema version mismatch: expected {SCHEMA_VERSION}, found {found}"
            )
        meta = {
            k: (v.item() if isinstance(v, np.generic) else v) for k, v in meta.items()
        }

        g = f["frames"]
        frames = [
            FrameRecord(
                frame_index=int(g["frame_index"][i]),
                timestamp=float(g["timestamps"][i]),
                box_id=int(g["box_id"][i]),
                sensor=SensorReading(
                    temperature=float(g["temperature"][i]),
                    relative_humidity=float(g["humidity"][i]),
                    pressure=float(g["pressure"][i]),
                    light_intensity=float(g["light"][i]),
                    light_color=tuple(float(v) for v in g["light_color"][i]),
                    external_brightness=float(g["external_brightness"][i]),
                ),
            )
            for i in range(len(g["timestamps"]))
        ]

        tracks: list[Track] = []
        events: list[EventRecord] = []
        for vial_key in sorted(f["vials"], key=int):
            vial_id = int(vial_key)
            g_vial = f["vials"][vial_key]
            for track_key in sorted(g_vial.get("tracks", {}), key=int):
                g_t = g_vial["tracks"][track_key]
                bbox = g_t["bbox"][...]
                samples = tuple(
                    TrackSample(
                        frame_index=int(g_t["frame_index"][i]),
                        timestamp=float(g_t["timestamp"][i]),
                        bbox=BoundingBox(*(float(v) for v in bbox[i])),
                        label=StageLabel(int(g_t["stage"][i])),
                    )
                    for i in range(len(g_t["frame_index"]))
                )
                smoothed = None
                if "smoothed_stage" in g_t:
                    smoothed = tuple(StageLabel(int(v)) for v in g_t["smoothed_stage"][...])
                tracks.append(
                    Track(
                        track_id=int(track_key),
                        vial_id=vial_id,
                        samples=samples,
                        birth_frame=samples[0].frame_index if samples else 0,
                        death_frame=samples[-1].frame_index if samples else 0,
                        smoothed_labels=smoothed,
                    )
                )
            g_e = g_vial["events"]
            for i in range(len(g_e["kind"])):
                frame_index = int(g_e["frame_index"][i])
                position = tuple(float(v) for v in g_e["position"][i])
                events.append(
                    EventRecord(
                        kind=EventKind(int(g_e["kind"][i])),
                        track_id=int(g_e["track_id"][i]),
                        vial_id=vial_id,
                        timestamp=float(g_e["timestamp"][i]),
                        frame_index=None if frame_index < 0 else frame_index,
                        position=None if np.isnan(position[0]) else position,
                    )
                )
    return tracks, events, frames, meta


# -- CSV interchange -------------------------------------------------------


def write_detections_csv(detections, path: str | Path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(DETECTION_FIELDS)
        for d in detections:
            writer.writerow(
                (
                    d.frame_index,
                    _fmt(d.timestamp),
                    d.vial_id,
                    _fmt(d.bbox.x),
                    _fmt(d.bbox.y),
                    _fmt(d.bbox.w),
                    _fmt(d.bbox.h),
                    d.label.key,
                    _fmt(d.confidence),
                )
            )


def read_detections_csv(path: str | Path) -> list[Detection]:
    out = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        missing = set(DETECTION_FIELDS) - set(reader.fieldnames or ())
        if missing:
            raise SchemaError(f"detection file missing columns: {sorted(missing)}")
        for row in reader:
            out.append(
                Detection(
                    frame_index=int(row["frame_index"]),
                    timestamp=float(row["timestamp"]),
                    vial_id=int(row["vial_id"]),
                    bbox=BoundingBox(
                        float(row["x"]), float(row["y"]), float(row["w"]), float(row["h"])
                    ),
                    label=StageLabel.from_key(row["label"]),
                    confidence=float(row["confidence"]),
                )
            )
    return out


def write_truth_csv(rows: list[dict], path: str | Path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(TRUTH_FIELDS)
        for row in rows:
            writer.writerow(
                [
                    row["specimen_id"],
                    row["vial_id"],
                    *(_fmt(row[k]) for k in TRUTH_FIELDS[2:]),
                ]
            )


def read_truth_csv(path: str | Path) -> list[dict]:
    out = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        missing = set(TRUTH_FIELDS) - set(reader.fieldnames or ())
        if missing:
            raise SchemaError(f"truth file missing columns: {sorted(missing)}")
        for row in reader:
            out.append(
                {
                    "specimen_id": int(row["specimen_id"]),
                    "vial_id": int(row["vial_id"]),
                    **{k: float(row[k]) for k in TRUTH_FIELDS[2:]},
                }
            )
    return out


def export_events_csv(events: list[EventRecord], path: str | Path) -> None:
    """Event table for downstream rhythm-analysis frameworks.

    Columns id, t (seconds since experiment start), kind, vial; one row
    per event, ordered by (vial, t).
    """
    ordered = sorted(events, key=lambda e: (e.vial_id, e.timestamp, e.track_id))
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(EVENT_FIELDS)
        for e in ordered:
            writer.writerow((e.track_id, _fmt(e.timestamp), e.kind.key, e.vial_id))


def read_events_csv(path: str | Path) -> list[EventRecord]:
    out = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        missing = set(EVENT_FIELDS) - set(reader.fieldnames or ())
        if missing:
            raise SchemaError(f"event file missing columns: {sorted(missing)}")
        for row in reader:
            out.append(
                EventRecord(
                    kind=EventKind.from_key(row["kind"]),
                    track_id=int(row["id"]),
                    vial_id=int(row["vial"]),
                    timestamp=float(row["t"]),
                )
            )
    return out


# -- PNG frame archive -----------------------------------------------------


def frame_png_path(data_dir: str | Path, box_id: int, frame_index: int) -> Path:
    """Canonical location of one archived frame."""
    return Path(data_dir) / "frames" / str(box_id) / f"{frame_index}.png"


def quarantine_path(data_dir: str | Path, box_id: int, sequence: int) -> Path:
    """Location for payloads that failed validation."""
    return Path(data_dir) / "quarantine" / f"box{box_id}_seq{sequence}.bin"
