"""One-time calibration locating rearing-vial regions in a full-frame image.

The vials appear as wide bright vertical bands in the backlit image, so
their borders show up as the strongest magnitudes of a horizontal
derivative of the column-mean intensity profile. Candidate edges above a
relative threshold are paired left to right into regions and filtered by
width/gap priors.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class CalibrationError(RuntimeError):
    """No vial arrangement satisfying the priors could be found."""


@dataclass(frozen=True)
class VialPriors:
    """Prior knowledge about vial geometry in the image, in pixels."""

    min_vial_width: int = 1000
    min_gap_width: int = 200
    max_vials: int = 3

    def __post_init__(self) -> None:
        if self.min_vial_width < 1 or self.min_gap_width < 0 or self.max_vials < 1:
            raise ValueError("invalid vial priors")


@dataclass(frozen=True)
class DerivativeProfile:
    """Signed derivative response of an intensity profile.

    ``lam`` is the fraction of the peak magnitude below which responses
    are discarded as candidates.
    """

    values: np.ndarray
    lam: float = 0.1

    def __post_init__(self) -> None:
        if not 0.0 < self.lam < 1.0:
            raise ValueError(f"lambda must be in (0, 1), got {self.lam}")

    @property
    def magnitude(self) -> np.ndarray:
        return np.abs(self.values)


@dataclass(frozen=True)
class VialLayout:
    """Detected vial regions as (x_start, x_end) column intervals."""

    regions: tuple[tuple[int, int], ...]
    image_width: int
    priors: VialPriors = VialPriors()

    def to_dict(self) -> dict:
        return {
            "schema": "vial-layout/1",
            "image_width": self.image_width,
            "regions": [list(r) for r in self.regions],
            "min_vial_width": self.priors.min_vial_width,
            "min_gap_width": self.priors.min_gap_width,
            "max_vials": self.priors.max_vials,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "VialLayout":
        if raw.get("schema") != "vial-layout/1":
            raise ValueError(f"unsupported layout schema {raw.get('schema')!r}")
        priors = VialPriors(
            min_vial_width=raw["min_vial_width"],
            min_gap_width=raw["min_gap_width"],
            max_vials=raw["max_vials"],
        )
        regions = tuple((int(a), int(b)) for a, b in raw["regions"])
        return cls(regions=regions, image_width=int(raw["image_width"]), priors=priors)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "VialLayout":
        return cls.from_dict(json.loads(Path(path).read_text()))


def column_mean_profile(image: np.ndarray) -> np.ndarray:
    """Mean grayscale per column of an (H, W) image."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2 or img.size == 0:
        raise ValueError(f"expected a non-empty 2-d grayscale image, got shape {img.shape}")
    return img.mean(axis=0)


def derivative_profile(profile: np.ndarray, lam: float = 0.1) -> DerivativeProfile:
    """Horizontal derivative response of an intensity profile.

    Applies the antisymmetric kernel (-2, 0, +2) with edge replication,
    so D(x) = 2 * (I(x+1) - I(x-1)) with clamped neighbours.
    """
    p = np.asarray(profile, dtype=np.float64)
    if p.ndim != 1 or p.size < 3:
        raise ValueError("profile must be 1-d with at least 3 samples")
    padded = np.concatenate(([p[0]], p, [p[-1]]))
    values = 2.0 * (padded[2:] - padded[:-2])
    return DerivativeProfile(values=values, lam=lam)


def threshold_candidates(d: DerivativeProfile) -> np.ndarray:
    """Column positions whose response magnitude exceeds lam * peak.

    Sorted by descending magnitude, ties broken toward the smaller
    position. An all-zero profile yields no candidates.
    """
    mag = d.magnitude
    peak = mag.max()
    if peak <= 0.0:
        return np.zeros(0, dtype=np.int64)
    xs = np.nonzero(mag > d.lam * peak)[0]
    order = np.lexsort((xs, -mag[xs]))
    return xs[order].astype(np.int64)


def select_vials(
    candidates: np.ndarray, d: DerivativeProfile, priors: VialPriors = VialPriors()
) -> VialLayout:
    """Pair candidate edges into vial regions satisfying the priors.

    Candidates are consumed in descending magnitude with a minimum
    separation, so the strongest response of each physical edge survives
    and its convolution-width duplicates are absorbed. The surviving
    edges are paired left to right: a rising edge (dark to bright) opens
    a region, the first falling edge at least one vial width away closes
    it, and regions must respect the gap prior.
    """
    separation = max(1, min(priors.min_gap_width, priors.min_vial_width) // 2)
    selected: list[int] = []
    for x in candidates:
        x = int(x)
        if all(abs(x - s) >= separation for s in selected):
            selected.append(x)
        if len(selected) == 2 * priors.max_vials:
            break

    edges = sorted(selected)
    rising = [d.values[x] > 0 for x in edges]

    regions: list[tuple[int, int]] = []
    prev_end: int | None = None
    i = 0
    while i < len(edges) and len(regions) < priors.max_vials:
        if rising[i] and (prev_end is None or edges[i] - prev_end >= priors.min_gap_width):
            close = next(
                (
                    j
                    for j in range(i + 1, len(edges))
                    if not rising[j] and edges[j] - edges[i] >= priors.min_vial_width
                ),
                None,
            )
            if close is not None:
                regions.append((edges[i], edges[close]))
                prev_end = edges[close]
                i = close + 1
                continue
        i += 1

    if not regions:
        raise CalibrationError(
            "no vial region satisfies the priors "
            f"(min width {priors.min_vial_width} px, min gap {priors.min_gap_width} px)"
        )
    return VialLayout(regions=tuple(regions), image_width=len(d.values), priors=priors)


def calibrate(
    image: np.ndarray, lam: float = 0.1, priors: VialPriors = VialPriors()
) -> VialLayout:
    """Full calibration pipeline from a grayscale image to a vial layout."""
    profile = column_mean_profile(image)
    deriv = derivative_profile(profile, lam=lam)
    candidates = threshold_candidates(deriv)
    return select_vials(candidates, deriv, priors)
