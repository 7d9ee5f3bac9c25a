"""Ground-truth lifecycle simulator for rearing vials.

Spawns specimen lifecycles under genotype-specific circadian eclosion
gating, renders per-frame detections (optionally synthetic images),
applies detector-calibrated confusion noise, and exports ground truth
for oracle testing. Identical configurations reproduce bitwise-identical
streams.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import BoundingBox, Detection, StageLabel
from .segmentation import VialLayout, VialPriors

SECONDS_PER_HOUR = 3600.0
SECONDS_PER_DAY = 86400.0


@dataclass(frozen=True)
class Genotype:
    """Clock and development parameters of one fly line.

    ``clock_period_h`` is the free-running eclosion rhythm; arrhythmic
    lines have none and eclose directly at developmental maturity.
    Durations are drawn per specimen from normal distributions clipped at
    ``min_phase_h``.
    """

    name: str
    clock_period_h: float | None
    gate_width_h: float = 6.0
    arrhythmic: bool = False
    larva_mean_h: float = 60.0
    larva_sd_h: float = 60.0
    pupa_mean_h: float = 72.0
    pupa_sd_h: float = 48.0
    min_phase_h: float = 24.0

    def __post_init__(self) -> None:
        if self.arrhythmic:
            if self.clock_period_h is not None:
                raise ValueError("arrhythmic genotypes have no clock period")
        elif self.clock_period_h is None or self.clock_period_h <= 0:
            raise ValueError(f"clock period must be positive, got {self.clock_period_h}")
        if self.gate_width_h < 0:
            raise ValueError("gate width must be >= 0")


#: Stock genotypes; per_long is parameterized at its measured rhythm.
GENOTYPES: dict[str, Genotype] = {
    "wildtype": Genotype("wildtype", 24.0),
    "per_short": Genotype("per_short", 19.0),
    "per_long": Genotype("per_long", 28.3),
    "per_0": Genotype("per_0", None, arrhythmic=True),
}


def get_genotype(name: str) -> Genotype:
    try:
        return GENOTYPES[name]
    except KeyError:
        raise ValueError(
            f"unknown genotype {name!r}; available: {', '.join(sorted(GENOTYPES))}"
        ) from None


_MISS = 5  # confusion-matrix column for a dropped detection


@dataclass(frozen=True)
class ConfusionModel:
    """Row-stochastic map from true stage to reported stage or miss.

    Rows follow the StageLabel order; the sixth column is the chance of
    not being detected at all.
    """

    matrix: np.ndarray

    def __post_init__(self) -> None:
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.shape != (5, 6):
            raise ValueError(f"confusion matrix must be 5x6, got {m.shape}")
        if np.any(m < 0) or np.any(np.abs(m.sum(axis=1) - 1.0) > 1e-9):
            raise ValueError("confusion matrix rows must be non-negative and sum to 1")
        object.__setattr__(self, "matrix", m)

    @classmethod
    def detector_default(cls) -> "ConfusionModel":
        """Rates calibrated to the production detector's class confusion."""
        return cls(
            np.array(
                [
                    #  larva  full   empty  adult  oof    miss
                    [0.84, 0.08, 0.00, 0.00, 0.05, 0.03],  # larva
                    [0.00, 0.95, 0.03, 0.00, 0.01, 0.01],  # full pupa
                    [0.00, 0.02, 0.97, 0.00, 0.00, 0.01],  # empty pupa
                    [0.00, 0.00, 0.01, 0.86, 0.12, 0.01],  # adult fly
                    [0.00, 0.00, 0.00, 0.00, 1.00, 0.00],  # out of focus
                ]
            )
        )

    def report(self, true_stage: StageLabel, u: float) -> StageLabel | None:
        """Reported label for a uniform draw u in [0, 1); None means missed."""
        row = np.cumsum(self.matrix[int(true_stage)])
        outcome = int(np.searchsorted(row, u, side="right"))
        return None if outcome >= _MISS else StageLabel(outcome)


@dataclass(frozen=True)
class SimConfig:
    """Experiment-level simulation parameters.

    The seed fixes the whole stream; geometry is laid out so that
    specimen home positions never bring two distinct individuals above
    the association gate.
    """

    vials: int = 3
    specimens_per_vial: int = 100
    frame_interval_s: float = 600.0
    duration_days: float = 14.0
    seed: int = 0
    noise: bool = False
    confusion: ConfusionModel = field(default_factory=ConfusionModel.detector_default)
    bbox_jitter_sd: float = 1.0
    hatch_window_h: float = 72.0
    # geometry, pixels
    vial_width_px: int = 1100
    vial_height_px: int = 2800
    gap_px: int = 250
    margin_px: int = 150
    border_px: int = 80
    home_spacing_px: float = 100.0
    tether_radius_px: float = 30.0
    larva_step_px: float = 4.0
    adult_visible_frames: int = 3
    adult_step_px: float = 45.0

    def __post_init__(self) -> None:
        if self.vials < 1 or self.specimens_per_vial < 0:
            raise ValueError("need at least one vial and a non-negative population")
        if self.frame_interval_s <= 0 or self.duration_days <= 0:
            raise ValueError("frame interval and duration must be positive")

    @property
    def n_frames(self) -> int:
        return int(math.ceil(self.duration_days * SECONDS_PER_DAY / self.frame_interval_s))

    @property
    def duration_s(self) -> float:
        return self.duration_days * SECONDS_PER_DAY


#: Box extents per stage, pixels (w, h). Only relative geometry matters.
STAGE_SIZES: dict[StageLabel, tuple[float, float]] = {
    StageLabel.LARVA: (60.0, 20.0),
    StageLabel.FULL_PUPA: (50.0, 25.0),
    StageLabel.EMPTY_PUPA: (50.0, 25.0),
    StageLabel.ADULT_FLY: (70.0, 50.0),
}


@dataclass(frozen=True)
class SpecimenLifecycle:
    """Developmental timeline of one specimen, seconds since start."""

    specimen_id: int
    vial_id: int
    hatch_time: float
    pupation_time: float
    eclosion_time: float
    home: tuple[float, float]

    def __post_init__(self) -> None:
        if not self.hatch_time < self.pupation_time < self.eclosion_time:
            raise ValueError("lifecycle must order hatch < pupation < eclosion")

    def stage_at(self, t: float) -> StageLabel | None:
        """True stage at time t; None before hatching."""
        if t < self.hatch_time:
            return None
        if t < self.pupation_time:
            return StageLabel.LARVA
        if t < self.eclosion_time:
            return StageLabel.FULL_PUPA
        return StageLabel.EMPTY_PUPA


def gated_eclosion_time(maturity_s: float, genotype: Genotype) -> float:
    """First gate opening at or after developmental maturity.

    Gates are windows of ``gate_width_h`` centered on multiples of the
    clock period (subjective dawn). Inside a gate the fly ecloses
    immediately; otherwise it holds until the next gate opens.
    Arrhythmic genotypes eclose at maturity.
    """
    if genotype.arrhythmic:
        return maturity_s
    period = genotype.clock_period_h * SECONDS_PER_HOUR
    half = genotype.gate_width_h * SECONDS_PER_HOUR / 2.0
    phase = maturity_s % period
    if phase <= half or phase >= period - half:
        return maturity_s
    k = math.ceil((maturity_s + half) / period)
    return k * period - half


def _home_grid(cfg: SimConfig, rng: np.random.Generator) -> np.ndarray:
    """Home positions on a jittered grid inside one vial crop."""
    n = cfg.specimens_per_vial
    usable_w = cfg.vial_width_px - 2 * cfg.border_px
    usable_h = cfg.vial_height_px - 2 * cfg.border_px
    cols = max(1, int(usable_w // cfg.home_spacing_px))
    rows = max(1, int(math.ceil(n / cols)))
    spacing_y = usable_h / rows
    if spacing_y < 2 * cfg.tether_radius_px + 20:
        raise ValueError(
            f"{n} specimens do not fit one vial at spacing {cfg.home_spacing_px} px"
        )
    homes = np.empty((n, 2), dtype=np.float64)
    for i in range(n):
        r, c = divmod(i, cols)
        homes[i, 0] = cfg.border_px + (c + 0.5) * cfg.home_spacing_px
        homes[i, 1] = cfg.border_px + (r + 0.5) * spacing_y
    homes += rng.uniform(-10.0, 10.0, size=homes.shape)
    return homes


def spawn_population(
    cfg: SimConfig, genotype: Genotype, rng: np.random.Generator, vial_id: int = 0
) -> list[SpecimenLifecycle]:
    """Draw the lifecycles of one vial's population."""
    n = cfg.specimens_per_vial
    hatch = rng.uniform(0.0, cfg.hatch_window_h * SECONDS_PER_HOUR, n)
    larva = np.clip(
        rng.normal(genotype.larva_mean_h, genotype.larva_sd_h, n),
        genotype.min_phase_h,
        None,
    )
    pupa = np.clip(
        rng.normal(genotype.pupa_mean_h, genotype.pupa_sd_h, n),
        genotype.min_phase_h,
        None,
    )
    homes = _home_grid(cfg, rng)
    out = []
    for i in range(n):
        pupation = hatch[i] + larva[i] * SECONDS_PER_HOUR
        maturity = pupation + pupa[i] * SECONDS_PER_HOUR
        out.append(
            SpecimenLifecycle(
                specimen_id=vial_id * 1_000_000 + i,
                vial_id=vial_id,
                hatch_time=float(hatch[i]),
                pupation_time=float(pupation),
                eclosion_time=float(gated_eclosion_time(maturity, genotype)),
                home=(float(homes[i, 0]), float(homes[i, 1])),
            )
        )
    return out


class LifecycleSimulator:
    """Deterministic frame-by-frame detection generator for all vials.

    All randomness is drawn at construction, so ``render_frame`` is a
    pure lookup and frames can be rendered in any order.
    """

    def __init__(self, cfg: SimConfig, genotype: Genotype) -> None:
        self.cfg = cfg
        self.genotype = genotype
        seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.vials)
        self.populations: list[list[SpecimenLifecycle]] = []
        self._paths: list[np.ndarray] = []
        self._anchor: list[np.ndarray] = []
        self._noise_u: list[np.ndarray] = []
        self._noise_u_adult: list[np.ndarray] = []
        self._jitter: list[np.ndarray] = []
        self._jitter_adult: list[np.ndarray] = []
        self._conf: list[np.ndarray] = []
        self._conf_adult: list[np.ndarray] = []
        for vial_id in range(cfg.vials):
            rng = np.random.default_rng(seeds[vial_id])
            population = spawn_population(cfg, genotype, rng, vial_id)
            self.populations.append(population)
            self._build_paths(population, rng)
            self._build_noise(rng)

    def _build_paths(self, population: list[SpecimenLifecycle], rng: np.random.Generator) -> None:
        """Bounded random walks around each home, frozen at pupation."""
        cfg = self.cfg
        n, frames = len(population), cfg.n_frames
        homes = np.array([s.home for s in population], dtype=np.float64).reshape(n, 2)
        pos = np.empty((frames, n, 2), dtype=np.float64)
        if n:
            pos[0] = homes
        angles = rng.uniform(0.0, 2.0 * np.pi, size=(frames, n))
        radii = rng.uniform(0.0, cfg.larva_step_px, size=(frames, n))
        steps = np.stack(
            (radii * np.cos(angles), radii * np.sin(angles)), axis=-1
        )
        for f in range(1, frames):
            candidate = pos[f - 1] + steps[f]
            off = candidate - homes
            dist = np.linalg.norm(off, axis=1)
            over = dist > cfg.tether_radius_px
            if over.any():
                scale = cfg.tether_radius_px / dist[over]
                candidate[over] = homes[over] + off[over] * scale[:, None]
            pos[f] = candidate
        self._paths.append(pos)

        # Pupa position: larval walk position one frame before pupation,
        # so the stage flip happens with identical box centers.
        anchor = np.empty((n, 2), dtype=np.float64)
        for i, spec in enumerate(population):
            first_alive = self._first_frame_at_or_after(spec.hatch_time)
            pupation_frame = self._first_frame_at_or_after(spec.pupation_time)
            f = min(max(pupation_frame - 1, first_alive), frames - 1)
            anchor[i] = pos[max(f, 0)][i]
        self._anchor.append(anchor)

    def _build_noise(self, rng: np.random.Generator) -> None:
        cfg = self.cfg
        n, frames = cfg.specimens_per_vial, cfg.n_frames
        if not cfg.noise:
            empty = np.zeros((0, 0))
            self._noise_u.append(empty)
            self._noise_u_adult.append(empty)
            self._jitter.append(empty)
            self._jitter_adult.append(empty)
            self._conf.append(empty)
            self._conf_adult.append(empty)
            return
        self._noise_u.append(rng.uniform(size=(frames, n)))
        self._noise_u_adult.append(rng.uniform(size=(frames, n)))
        self._jitter.append(rng.normal(0.0, cfg.bbox_jitter_sd, size=(frames, n, 2)))
        self._jitter_adult.append(rng.normal(0.0, cfg.bbox_jitter_sd, size=(frames, n, 2)))
        self._conf.append(rng.uniform(0.5, 1.0, size=(frames, n)))
        self._conf_adult.append(rng.uniform(0.5, 1.0, size=(frames, n)))

    def _first_frame_at_or_after(self, t: float) -> int:
        return int(math.ceil(t / self.cfg.frame_interval_s))

    def timestamp(self, frame_index: int) -> float:
        return frame_index * self.cfg.frame_interval_s

    def render_frame(self, frame_index: int) -> list[Detection]:
        """All detections of one frame, across vials.

        With noise enabled, labels pass through the confusion model
        (misses drop the detection, out-of-focus outcomes are kept with
        that label) and box centers get Gaussian jitter.
        """
        return [det for det, _ in self.render_frame_with_identity(frame_index)]

    def render_frame_with_identity(
        self, frame_index: int
    ) -> list[tuple[Detection, int]]:
        """Like :meth:`render_frame` but pairs each detection with the
        specimen id that produced it, for oracle tests."""
        cfg = self.cfg
        if not 0 <= frame_index < cfg.n_frames:
            raise ValueError(f"frame {frame_index} outside 0..{cfg.n_frames - 1}")
        t = self.timestamp(frame_index)
        out: list[tuple[Detection, int]] = []
        for vial_id in range(cfg.vials):
            population = self.populations[vial_id]
            paths = self._paths[vial_id]
            anchors = self._anchor[vial_id]
            for i, spec in enumerate(population):
                stage = spec.stage_at(t)
                if stage is None:
                    continue
                center = paths[frame_index, i] if stage == StageLabel.LARVA else anchors[i]
                det = self._emit(
                    frame_index, t, vial_id, i, stage, center, adult=False
                )
                if det is not None:
                    out.append((det, spec.specimen_id))
            for i, spec in enumerate(population):
                k = frame_index - self._first_frame_at_or_after(spec.eclosion_time)
                if 0 <= k < cfg.adult_visible_frames and t >= spec.eclosion_time:
                    direction = -1.0 if i % 2 else 1.0
                    center = anchors[i] + np.array(
                        (direction * cfg.adult_step_px * (k + 1), -25.0 * (k + 1))
                    )
                    det = self._emit(
                        frame_index, t, vial_id, i, StageLabel.ADULT_FLY, center, adult=True
                    )
                    if det is not None:
                        out.append((det, spec.specimen_id))
        return out

    def _emit(
        self,
        frame_index: int,
        t: float,
        vial_id: int,
        specimen_idx: int,
        true_stage: StageLabel,
        center: np.ndarray,
        adult: bool,
    ) -> Detection | None:
        cfg = self.cfg
        label = true_stage
        confidence = 1.0
        cx, cy = float(center[0]), float(center[1])
        if cfg.noise:
            u = (self._noise_u_adult if adult else self._noise_u)[vial_id][
                frame_index, specimen_idx
            ]
            reported = cfg.confusion.report(true_stage, float(u))
            if reported is None:
                return None
            label = reported
            jit = (self._jitter_adult if adult else self._jitter)[vial_id][
                frame_index, specimen_idx
            ]
            cx += float(jit[0])
            cy += float(jit[1])
            confidence = float(
                (self._conf_adult if adult else self._conf)[vial_id][
                    frame_index, specimen_idx
                ]
            )
        w, h = STAGE_SIZES[true_stage]
        cx = min(max(cx, w / 2.0), cfg.vial_width_px - w / 2.0)
        cy = min(max(cy, h / 2.0), cfg.vial_height_px - h / 2.0)
        return Detection(
            frame_index=frame_index,
            timestamp=t,
            vial_id=vial_id,
            bbox=BoundingBox(cx - w / 2.0, cy - h / 2.0, w, h),
            label=label,
            confidence=confidence,
        )

    def frames(self):
        """Yield (frame_index, timestamp, detections) over the whole run."""
        for f in range(self.cfg.n_frames):
            yield f, self.timestamp(f), self.render_frame(f)

    def truth_rows(self) -> list[dict]:
        """Per-specimen ground truth consumed by the oracle tests."""
        rows = []
        for vial_id in range(self.cfg.vials):
            anchors = self._anchor[vial_id]
            for i, spec in enumerate(self.populations[vial_id]):
                rows.append(
                    {
                        "specimen_id": spec.specimen_id,
                        "vial_id": spec.vial_id,
                        "hatch_time": spec.hatch_time,
                        "pupation_time": spec.pupation_time,
                        "eclosion_time": spec.eclosion_time,
                        "wall_x": float(anchors[i, 0]),
                        "wall_y": float(anchors[i, 1]),
                    }
                )
        return rows

    # -- synthetic imagery ------------------------------------------------

    def image_size(self, scale: float = 1.0) -> tuple[int, int]:
        cfg = self.cfg
        w = 2 * cfg.margin_px + cfg.vials * cfg.vial_width_px + (cfg.vials - 1) * cfg.gap_px
        return int(round(w * scale)), int(round(cfg.vial_height_px * scale))

    def vial_layout(self, scale: float = 1.0) -> VialLayout:
        """True band extents of the synthetic image, for calibration oracles."""
        cfg = self.cfg
        regions = []
        for v in range(cfg.vials):
            start = cfg.margin_px + v * (cfg.vial_width_px + cfg.gap_px)
            regions.append(
                (int(round(start * scale)), int(round((start + cfg.vial_width_px) * scale)))
            )
        width, _ = self.image_size(scale)
        priors = VialPriors(
            min_vial_width=int(cfg.vial_width_px * scale * 0.9),
            min_gap_width=max(1, int(cfg.gap_px * scale * 0.8)),
            max_vials=cfg.vials,
        )
        return VialLayout(regions=tuple(regions), image_width=width, priors=priors)

    def render_image(self, frame_index: int, scale: float = 1.0) -> np.ndarray:
        """Synthetic grayscale frame: bright vial bands, dark specimen blobs."""
        cfg = self.cfg
        width, height = self.image_size(scale)
        img = np.full((height, width), 20, dtype=np.uint8)
        layout = self.vial_layout(scale)
        for x0, x1 in layout.regions:
            img[:, x0:x1] = 200
        for det in self.render_frame(frame_index):
            x0, x1 = layout.regions[det.vial_id]
            bx = int(round(x0 + det.bbox.x * scale))
            by = int(round(det.bbox.y * scale))
            bw = max(1, int(round(det.bbox.w * scale)))
            bh = max(1, int(round(det.bbox.h * scale)))
            img[by : by + bh, bx : bx + bw] = 60
        return img
