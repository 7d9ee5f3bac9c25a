"""Parametric carving pattern for an edge-lit light guide panel.

Circles on a staggered grid extract light from the acrylic sheet; their
diameter grows linearly with distance from the LED edge (the bottom) so
that regions reached by less light carve away more of it, which levels
the emitted luminance. The generated SVG uses millimetre units and is
directly consumable by laser-engraver toolchains.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path


@dataclass(frozen=True)
class PanelSpec:
    """Panel geometry and carving constraints, millimetres."""

    width_mm: float = 93.0
    height_mm: float = 220.0
    d_min_mm: float = 1.0
    d_max_mm: float | None = None
    dst_min_mm: float = 2.0

    def __post_init__(self) -> None:
        if self.width_mm <= 0 or self.height_mm <= 0:
            raise ValueError("panel must have positive area")
        if self.d_min_mm <= 0:
            raise ValueError("minimal carving diameter must be positive")
        if self.dst_min_mm < 0:
            raise ValueError("minimal carving distance must be >= 0")
        if self.d_max_mm is not None and self.d_max_mm < self.d_min_mm:
            raise ValueError("maximal diameter must be >= minimal diameter")
        if self.d_min_mm > min(self.width_mm, self.height_mm):
            raise ValueError("minimal diameter does not fit the panel")

    @property
    def diameter_span(self) -> tuple[float, float]:
        d_max = self.d_max_mm if self.d_max_mm is not None else 2.5 * self.d_min_mm
        return self.d_min_mm, min(d_max, self.width_mm, self.height_mm)


@dataclass(frozen=True)
class Circle:
    cx: float
    cy: float
    d: float


def diameter_at(spec: PanelSpec, y: float) -> float:
    """Carving diameter at height y (LED edge at y = height)."""
    d_min, d_max = spec.diameter_span
    frac = (spec.height_mm - y) / spec.height_mm
    return d_min + (d_max - d_min) * min(max(frac, 0.0), 1.0)


def generate_pattern(spec: PanelSpec) -> list[Circle]:
    """Lay out the staggered carving grid.

    Row pitch and in-row spacing are derived from the local diameters so
    that every pair of circles keeps at least ``dst_min_mm`` edge to edge
    and no circle crosses the panel boundary; a final exhaustive check
    guards the construction.
    """
    circles: list[Circle] = []
    dst = spec.dst_min_mm
    y = spec.height_mm - diameter_at(spec, spec.height_mm) / 2.0
    row = 0
    while True:
        d = diameter_at(spec, y)
        if y - d / 2.0 < 0.0:
            break
        pitch = d + dst
        offset = pitch / 2.0 if row % 2 else 0.0
        x = d / 2.0 + offset
        while x + d / 2.0 <= spec.width_mm:
            circles.append(Circle(cx=round(x, 6), cy=round(y, 6), d=round(d, 6)))
            x += pitch
        d_next = diameter_at(spec, y - pitch)
        required = (d + d_next) / 2.0 + dst
        dy = max(
            required / 2.0,
            math.sqrt(max(required**2 - (pitch / 2.0) ** 2, 0.0)),
        )
        y -= dy
        row += 1

    _check_constraints(spec, circles)
    return circles


def _check_constraints(spec: PanelSpec, circles: list[Circle]) -> None:
    for c in circles:
        if (
            c.cx - c.d / 2 < -1e-9
            or c.cx + c.d / 2 > spec.width_mm + 1e-9
            or c.cy - c.d / 2 < -1e-9
            or c.cy + c.d / 2 > spec.height_mm + 1e-9
        ):
            raise AssertionError(f"carving {c} crosses the panel boundary")
    for i, a in enumerate(circles):
        for b in circles[i + 1 :]:
            gap = math.hypot(a.cx - b.cx, a.cy - b.cy) - (a.d + b.d) / 2.0
            if gap < spec.dst_min_mm - 1e-9:
                raise AssertionError(f"carvings {a} and {b} violate the distance constraint")


def write_svg(spec: PanelSpec, circles: list[Circle], path: str | Path) -> None:
    """Write the pattern as a millimetre-unit SVG."""
    meta = {
        "width_mm": spec.width_mm,
        "height_mm": spec.height_mm,
        "d_min_mm": spec.d_min_mm,
        "d_max_mm": spec.diameter_span[1],
        "dst_min_mm": spec.dst_min_mm,
        "carvings": len(circles),
    }
    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        (
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{spec.width_mm}mm" '
            f'height="{spec.height_mm}mm" '
            f'viewBox="0 0 {spec.width_mm} {spec.height_mm}">'
        ),
        f"<desc>{json.dumps(meta, sort_keys=True)}</desc>",
    ]
    for c in circles:
        lines.append(
            f'<circle cx="{c.cx}" cy="{c.cy}" r="{round(c.d / 2.0, 6)}" '
            'fill="none" stroke="black" stroke-width="0.05"/>'
        )
    lines.append("</svg>")
    Path(path).write_text("\n".join(lines) + "\n")
