"""Shared domain types: boxes, stage labels, detections, tracks, events.

All types are immutable value objects and safe to share between threads.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field


class StageLabel(enum.IntEnum):
    """Developmental stage assigned to a detection.

    The integer value of the four foreground stages doubles as their
    ordinal rank along the developmental chain, which makes a median
    over stage labels well defined. OUT_OF_FOCUS marks blurred objects
    on the back side of the vial and carries no rank.
    """

    LARVA = 0
    FULL_PUPA = 1
    EMPTY_PUPA = 2
    ADULT_FLY = 3
    OUT_OF_FOCUS = 4

    @property
    def key(self) -> str:
        """Lowercase name used in CSV files and CLI flags."""
        return self.name.lower()

    @classmethod
    def from_key(cls, key: str) -> "StageLabel":
        try:
            return cls[key.strip().upper()]
        except KeyError:
            raise ValueError(f"unknown stage label {key!r}") from None


FOREGROUND_STAGES = frozenset(
    (StageLabel.LARVA, StageLabel.FULL_PUPA, StageLabel.EMPTY_PUPA, StageLabel.ADULT_FLY)
)


def stage_adjacent(a: StageLabel, b: StageLabel) -> bool:
    """True if two stages are the same or neighbours in the developmental chain.

    The chain is larva - full pupa - empty pupa. An adult fly is adjacent
    only to itself: the emerging fly is a new object while its case stays
    behind as an empty pupa, so an empty-pupa box never turns into an
    adult-fly box.
    """
    if a not in FOREGROUND_STAGES or b not in FOREGROUND_STAGES:
        raise ValueError("stage adjacency is defined for foreground stages only")
    if a == b:
        return True
    lo, hi = (a, b) if a <= b else (b, a)
    return hi - lo == 1 and hi <= StageLabel.EMPTY_PUPA


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box with top-left corner (x, y) and extents (w, h) in pixels."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self) -> None:
        for name in ("x", "y", "w", "h"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ValueError(f"bounding box {name} must be finite, got {v!r}")
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"bounding box extents must be positive, got w={self.w}, h={self.h}")
        if self.x < 0 or self.y < 0:
            raise ValueError(f"bounding box corner must be non-negative, got ({self.x}, {self.y})")

    @property
    def area(self) -> float:
        return self.w * self.h


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union of two boxes; symmetric, in [0, 1]."""
    iw = min(a.x + a.w, b.x + b.w) - max(a.x, b.x)
    if iw <= 0:
        return 0.0
    ih = min(a.y + a.h, b.y + b.h) - max(a.y, b.y)
    if ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def bbox_center(a: BoundingBox) -> tuple[float, float]:
    """Center point of a box."""
    return (a.x + a.w / 2.0, a.y + a.h / 2.0)


@dataclass(frozen=True)
class Detection:
    """One classified bounding box in one frame of one vial."""

    frame_index: int
    timestamp: float
    vial_id: int
    bbox: BoundingBox
    label: StageLabel
    confidence: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must be in [0, 1], got {self.confidence}")


@dataclass(frozen=True)
class SensorReading:
    """Environmental measurements taken alongside one captured frame."""

    temperature: float
    relative_humidity: float
    pressure: float
    light_intensity: float
    light_color: tuple[float, float, float]
    external_brightness: float

    def __post_init__(self) -> None:
        values = (
            self.temperature,
            self.relative_humidity,
            self.pressure,
            self.light_intensity,
            *self.light_color,
            self.external_brightness,
        )
        if not all(math.isfinite(v) for v in values):
            raise ValueError("sensor readings must be finite")
        if not 0.0 <= self.relative_humidity <= 100.0:
            raise ValueError(f"relative humidity must be in [0, 100], got {self.relative_humidity}")


@dataclass(frozen=True)
class FrameRecord:
    """One captured frame: image reference plus synchronized sensor data."""

    frame_index: int
    timestamp: float
    sensor: SensorReading
    box_id: int
    image: bytes | str | None = None


@dataclass(frozen=True)
class TrackSample:
    """One observation of a tracked specimen."""

    frame_index: int
    timestamp: float
    bbox: BoundingBox
    label: StageLabel


@dataclass(frozen=True)
class Track:
    """An identity-preserved sequence of detections of one specimen.

    ``smoothed_labels`` is absent until the median label filter has run;
    afterwards it is aligned 1:1 with ``samples``.
    """

    track_id: int
    vial_id: int
    samples: tuple[TrackSample, ...]
    birth_frame: int
    death_frame: int
    smoothed_labels: tuple[StageLabel, ...] | None = None

    def __post_init__(self) -> None:
        frames = [s.frame_index for s in self.samples]
        if any(b <= a for a, b in zip(frames, frames[1:])):
            raise ValueError("track sample frame indices must strictly increase")
        if self.smoothed_labels is not None and len(self.smoothed_labels) != len(self.samples):
            raise ValueError("smoothed labels must align with samples")

    def __len__(self) -> int:
        return len(self.samples)


class EventKind(enum.IntEnum):
    PUPATION = 0
    ECLOSION = 1

    @property
    def key(self) -> str:
        return self.name.lower()

    @classmethod
    def from_key(cls, key: str) -> "EventKind":
        try:
            return cls[key.strip().upper()]
        except KeyError:
            raise ValueError(f"unknown event kind {key!r}") from None


@dataclass(frozen=True)
class EventRecord:
    """A developmental transition extracted from one track."""

    kind: EventKind
    track_id: int
    vial_id: int
    timestamp: float
    frame_index: int | None = None
    position: tuple[float, float] | None = None
