"""Developmental monitoring of Drosophila rearing vials.

Stage-aware multi-object tracking of detections in rearing-vial image
sequences, pupation/eclosion event extraction and circadian rhythm
analysis, a vial-lifecycle simulator for ground-truth testing, a
client/server acquisition protocol, and supporting calibration tools.
"""

__version__ = "0.1.0"

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
    bbox_center,
    iou,
    stage_adjacent,
)

__all__ = [
    "BoundingBox",
    "Detection",
    "EventKind",
    "EventRecord",
    "FrameRecord",
    "SensorReading",
    "StageLabel",
    "Track",
    "TrackSample",
    "bbox_center",
    "iou",
    "stage_adjacent",
    "__version__",
]
