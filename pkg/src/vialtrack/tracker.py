"""Identity-preserving tracking of stage-labelled detections in one vial.

Associations between consecutive frames use the gated, dummy-augmented
optimal assignment from :mod:`vialtrack.assignment`. Detections left
unmatched against the previous frame get further chances against tracks
last seen up to ``lookback_frames`` earlier (nearest pass first), so an
occasionally missed detection does not break an identity. Tracks below
the minimum length are discarded at the end, and stage labels are
smoothed with a centered ordinal median filter.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from types import ModuleType

import numpy as np

from . import _kernels
from .assignment import associate
from .model import (
    FOREGROUND_STAGES,
    Detection,
    StageLabel,
    Track,
    TrackSample,
)


@dataclass(frozen=True)
class TrackerConfig:
    """Association and postprocessing parameters.

    ``lookback_frames`` counts the additional reference frames beyond the
    immediately preceding one, so the default 3 lets a detection match
    tracks last seen two, three or four frames back.
    """

    iou_gate: float = 0.6
    lookback_frames: int = 3
    min_track_length: int = 30
    median_window: int = 5
    tracked_stages: frozenset[StageLabel] = FOREGROUND_STAGES

    def __post_init__(self) -> None:
        if not 0.0 < self.iou_gate < 1.0:
            raise ValueError(f"iou_gate must be in (0, 1), got {self.iou_gate}")
        if self.lookback_frames < 0:
            raise ValueError("lookback_frames must be >= 0")
        if self.median_window < 1 or self.median_window % 2 == 0:
            raise ValueError("median_window must be an odd integer >= 1")
        if self.min_track_length < 1:
            raise ValueError("min_track_length must be >= 1")
        if StageLabel.OUT_OF_FOCUS in self.tracked_stages:
            raise ValueError("out-of-focus objects are never tracked")

    @classmethod
    def from_dict(cls, raw: dict) -> "TrackerConfig":
        kwargs = dict(raw)
        if "tracked_stages" in kwargs:
            kwargs["tracked_stages"] = frozenset(
                StageLabel.from_key(s) for s in kwargs["tracked_stages"]
            )
        return cls(**kwargs)

    def to_dict(self) -> dict:
        return {
            "iou_gate": self.iou_gate,
            "lookback_frames": self.lookback_frames,
            "min_track_length": self.min_track_length,
            "median_window": self.median_window,
            "tracked_stages": sorted(s.key for s in self.tracked_stages),
        }


@dataclass
class _ActiveTrack:
    track_id: int
    last_frame: int
    last_bbox_row: np.ndarray  # (x, y, w, h)
    last_stage: int
    samples: list[TrackSample] = field(default_factory=list)


class VialTracker:
    """Sequential tracker for the detections of a single vial.

    Frames must be stepped in order, including frames without detections.
    Instances are independent per vial and may run concurrently, but a
    single instance is not shareable during a step.
    """

    def __init__(
        self,
        vial_id: int,
        config: TrackerConfig | None = None,
        kernel: ModuleType | None = None,
    ) -> None:
        self.vial_id = vial_id
        self.config = config or TrackerConfig()
        self._kernel = kernel if kernel is not None else _kernels.get_backend()
        self._active: list[_ActiveTrack] = []
        self._finished: list[_ActiveTrack] = []
        self._next_id = 1
        self._cursor: int | None = None

    @property
    def cursor(self) -> int | None:
        return self._cursor

    def step(self, frame_index: int, timestamp: float, detections: list[Detection]) -> None:
        """Advance the tracker by one frame."""
        if self._cursor is not None and frame_index != self._cursor + 1:
            raise ValueError(
                f"out-of-order frame {frame_index}, expected {self._cursor + 1}"
            )
        cfg = self.config
        kept = [
            d
            for d in detections
            if d.label != StageLabel.OUT_OF_FOCUS and d.label in cfg.tracked_stages
        ]
        for d in kept:
            if d.vial_id != self.vial_id:
                raise ValueError(
                    f"detection for vial {d.vial_id} fed to tracker of vial {self.vial_id}"
                )

        det_boxes = np.array(
            [(d.bbox.x, d.bbox.y, d.bbox.w, d.bbox.h) for d in kept], dtype=np.float64
        ).reshape(-1, 4)
        det_stages = np.array([int(d.label) for d in kept], dtype=np.int64)
        remaining = list(range(len(kept)))

        for offset in range(cfg.lookback_frames + 1):
            if not remaining:
                break
            reference = frame_index - 1 - offset
            candidates = [t for t in self._active if t.last_frame == reference]
            if not candidates:
                continue
            track_boxes = np.array([t.last_bbox_row for t in candidates])
            track_stages = np.array([t.last_stage for t in candidates], dtype=np.int64)
            pairs, _, _ = associate(
                track_boxes,
                track_stages,
                det_boxes[remaining],
                det_stages[remaining],
                gate=cfg.iou_gate,
                kernel=self._kernel,
            )
            taken = []
            for ti, dj in pairs:
                det_idx = remaining[dj]
                self._append_sample(candidates[ti], kept[det_idx])
                taken.append(det_idx)
            remaining = [j for j in remaining if j not in taken]

        for j in remaining:
            self._open_track(kept[j])

        horizon = cfg.lookback_frames + 1
        still_active = []
        for t in self._active:
            if frame_index - t.last_frame > horizon:
                self._finished.append(t)
            else:
                still_active.append(t)
        self._active = still_active
        self._cursor = frame_index

    def _append_sample(self, track: _ActiveTrack, det: Detection) -> None:
        track.samples.append(
            TrackSample(det.frame_index, det.timestamp, det.bbox, det.label)
        )
        track.last_frame = det.frame_index
        track.last_bbox_row = np.array(
            (det.bbox.x, det.bbox.y, det.bbox.w, det.bbox.h), dtype=np.float64
        )
        track.last_stage = int(det.label)

    def _open_track(self, det: Detection) -> None:
        track = _ActiveTrack(
            track_id=self._next_id,
            last_frame=det.frame_index,
            last_bbox_row=np.array(
                (det.bbox.x, det.bbox.y, det.bbox.w, det.bbox.h), dtype=np.float64
            ),
            last_stage=int(det.label),
        )
        self._next_id += 1
        track.samples.append(
            TrackSample(det.frame_index, det.timestamp, det.bbox, det.label)
        )
        self._active.append(track)

    def finalize(self) -> list[Track]:
        """End the stream and return all tracks meeting the minimum length."""
        pool = self._finished + self._active
        self._finished = []
        self._active = []
        tracks = [
            Track(
                track_id=t.track_id,
                vial_id=self.vial_id,
                samples=tuple(t.samples),
                birth_frame=t.samples[0].frame_index,
                death_frame=t.samples[-1].frame_index,
            )
            for t in pool
            if len(t.samples) >= self.config.min_track_length
        ]
        tracks.sort(key=lambda tr: tr.track_id)
        return tracks


def smooth_labels(track: Track, window: int = 5) -> Track:
    """Attach stage labels smoothed with a centered ordinal median filter.

    The window is clipped at the track bounds; for the even-sized edge
    windows the upper median is taken, which keeps single-frame flips at
    interior positions from leaking outward.
    """
    if window < 1 or window % 2 == 0:
        raise ValueError("median window must be an odd integer >= 1")
    ranks = [int(s.label) for s in track.samples]
    half = window // 2
    n = len(ranks)
    smoothed = []
    for k in range(n):
        lo = max(0, k - half)
        hi = min(n, k + half + 1)
        values = sorted(ranks[lo:hi])
        smoothed.append(StageLabel(values[len(values) // 2]))
    return replace(track, smoothed_labels=tuple(smoothed))


def track_detections(
    detections: list[Detection],
    config: TrackerConfig | None = None,
    kernel: ModuleType | None = None,
) -> list[Track]:
    """Run per-vial trackers over a detection stream and smooth the output.

    Detections are grouped by vial and frame; every frame index between
    the first and last seen is stepped, so missing-detection frames count
    toward the lookback horizon. Returns smoothed tracks of all vials.
    """
    cfg = config or TrackerConfig()
    by_vial: dict[int, dict[int, list[Detection]]] = {}
    timestamps: dict[int, float] = {}
    for d in detections:
        by_vial.setdefault(d.vial_id, {}).setdefault(d.frame_index, []).append(d)
        timestamps.setdefault(d.frame_index, d.timestamp)

    all_tracks: list[Track] = []
    for vial_id in sorted(by_vial):
        frames = by_vial[vial_id]
        tracker = VialTracker(vial_id, cfg, kernel=kernel)
        first, last = min(frames), max(frames)
        for f in range(first, last + 1):
            ts = timestamps.get(f, float(f))
            tracker.step(f, ts, frames.get(f, []))
        for track in tracker.finalize():
            all_tracks.append(smooth_labels(track, cfg.median_window))
    return all_tracks
