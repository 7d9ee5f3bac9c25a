"""Developmental event extraction and circadian rhythm analysis.

Smoothed tracks turn into pupation/eclosion events via a sliding
confirmation window; event series are binned over the experiment and fed
to a double-plotted actogram and a Lomb-Scargle periodogram with a
false-alarm significance threshold.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .model import EventKind, EventRecord, StageLabel, Track, bbox_center

SECONDS_PER_HOUR = 3600.0


def extract_events(track: Track, tau: int = 7) -> list[EventRecord]:
    """Find the pupation and eclosion time points of one track.

    A transition to a target stage is confirmed at the earliest sample t
    where the smoothed label equals the target, the previous label does
    not, and a strict majority of the tau samples starting at t carry the
    target. At most one event per kind is reported; tracks shorter than
    tau yield none. If a confirmed eclosion does not come after the
    pupation, the pupation is dropped as noise.
    """
    if tau < 1:
        raise ValueError(f"window length must be >= 1, got {tau}")
    if track.smoothed_labels is None:
        raise ValueError("tracks must be label-smoothed before event extraction")
    labels = track.smoothed_labels
    need = tau // 2 + 1

    def onset(target: StageLabel) -> int | None:
        for t in range(0, len(labels) - tau + 1):
            if labels[t] != target:
                continue
            if t > 0 and labels[t - 1] == target:
                continue
            if sum(1 for lab in labels[t : t + tau] if lab == target) >= need:
                return t
        return None

    def record(kind: EventKind, index: int) -> EventRecord:
        sample = track.samples[index]
        return EventRecord(
            kind=kind,
            track_id=track.track_id,
            vial_id=track.vial_id,
            timestamp=sample.timestamp,
            frame_index=sample.frame_index,
            position=bbox_center(sample.bbox),
        )

    pupation = onset(StageLabel.FULL_PUPA)
    eclosion = onset(StageLabel.EMPTY_PUPA)
    if pupation is not None and eclosion is not None and eclosion <= pupation:
        pupation = None

    events = []
    if pupation is not None:
        events.append(record(EventKind.PUPATION, pupation))
    if eclosion is not None:
        events.append(record(EventKind.ECLOSION, eclosion))
    return events


@dataclass(frozen=True)
class EventSeries:
    """Events binned over the experiment duration.

    Bins are half-open ``[t0 + k*width, t0 + (k+1)*width)`` in seconds.
    """

    events: tuple[EventRecord, ...]
    bin_width: float
    t0: float
    t_end: float
    bins: np.ndarray

    @property
    def bin_centers_hours(self) -> np.ndarray:
        k = np.arange(len(self.bins))
        return (self.t0 + (k + 0.5) * self.bin_width) / SECONDS_PER_HOUR


def bin_events(
    events: list[EventRecord], bin_width: float = 600.0, t0: float = 0.0, t_end: float | None = None
) -> EventSeries:
    """Count events per time bin.

    Events outside [t0, t_end) are counted in the terminal bins with a
    warning rather than dropped, so totals stay conserved.
    """
    if t_end is None:
        t_end = max((e.timestamp for e in events), default=t0) + bin_width
    if not bin_width > 0:
        raise ValueError(f"bin width must be positive, got {bin_width}")
    if not t0 < t_end:
        raise ValueError(f"need t0 < t_end, got [{t0}, {t_end})")
    n_bins = int(np.ceil((t_end - t0) / bin_width))
    counts = np.zeros(n_bins, dtype=np.int64)
    clamped = 0
    for e in events:
        k = int(np.floor((e.timestamp - t0) / bin_width))
        if k < 0 or k >= n_bins:
            clamped += 1
            k = min(max(k, 0), n_bins - 1)
        counts[k] += 1
    if clamped:
        warnings.warn(
            f"{clamped} event(s) outside [{t0}, {t_end}) counted in terminal bins",
            stacklevel=2,
        )
    return EventSeries(
        events=tuple(events), bin_width=float(bin_width), t0=float(t0), t_end=float(t_end), bins=counts
    )


@dataclass(frozen=True)
class Actogram:
    """Double-plotted raster of per-bin activity: one row per period,
    each row showing its own period followed by the next one."""

    matrix: np.ndarray
    period_hours: float
    bin_width: float

    @property
    def bins_per_period(self) -> int:
        return self.matrix.shape[1] // 2


def actogram(series: EventSeries, period_hours: float = 24.0, days: int | None = None) -> Actogram:
    """Fold a binned series into a double-plotted actogram."""
    period_s = period_hours * SECONDS_PER_HOUR
    per_row = period_s / series.bin_width
    if abs(per_row - round(per_row)) > 1e-9:
        raise ValueError(
            f"plot period ({period_hours} h) must be a whole number of bins "
            f"(bin width {series.bin_width} s)"
        )
    per_row = int(round(per_row))
    total = len(series.bins)
    if days is None:
        days = int(np.ceil(total / per_row))
    if days < 1:
        raise ValueError("series must cover at least one period")
    padded = np.zeros((days + 1) * per_row, dtype=series.bins.dtype)
    n = min(total, len(padded))
    padded[:n] = series.bins[:n]
    matrix = np.zeros((days, 2 * per_row), dtype=series.bins.dtype)
    for r in range(days):
        matrix[r, :per_row] = padded[r * per_row : (r + 1) * per_row]
        matrix[r, per_row:] = padded[(r + 1) * per_row : (r + 2) * per_row]
    return Actogram(matrix=matrix, period_hours=float(period_hours), bin_width=series.bin_width)


@dataclass(frozen=True)
class Periodogram:
    """Normalized spectral power over a period grid, with the
    false-alarm power threshold at significance ``alpha``."""

    periods_hours: np.ndarray
    power: np.ndarray
    threshold: float
    alpha: float


def default_period_grid(lo: float = 16.0, hi: float = 32.0, step: float = 0.1) -> np.ndarray:
    """Period grid in hours covering the circadian range of interest."""
    if not (0 < lo < hi and step > 0):
        raise ValueError("invalid period grid")
    n = int(round((hi - lo) / step))
    return lo + step * np.arange(n + 1)


def lomb_scargle(
    series: EventSeries, periods_hours: np.ndarray | None = None, alpha: float = 0.05
) -> Periodogram:
    """Normalized Lomb-Scargle periodogram of mean-subtracted bin counts.

    Power at each trial frequency uses the phase-invariant time offset
    and is normalized by the sample variance, so for pure Gaussian noise
    each power is asymptotically unit-exponential. The false-alarm
    threshold treats the grid size as the number of independent
    frequencies: power z is significant when
    1 - (1 - exp(-z))**M < alpha.
    """
    if periods_hours is None:
        periods_hours = default_period_grid()
    periods_hours = np.asarray(periods_hours, dtype=np.float64)
    if periods_hours.size == 0 or np.any(np.diff(periods_hours) <= 0):
        raise ValueError("period grid must be non-empty and strictly increasing")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    if np.count_nonzero(series.bins) < 8:
        raise ValueError("need at least 8 nonzero bins for a periodogram")

    t = series.bin_centers_hours
    y = series.bins.astype(np.float64)
    y = y - y.mean()
    variance = y.var(ddof=1)
    m = len(periods_hours)
    threshold = -np.log1p(-((1.0 - alpha) ** (1.0 / m)))
    if variance <= 0.0:
        return Periodogram(
            periods_hours=periods_hours,
            power=np.zeros(m),
            threshold=float(threshold),
            alpha=alpha,
        )

    power = np.empty(m, dtype=np.float64)
    for i, period in enumerate(periods_hours):
        omega = 2.0 * np.pi / period
        two_wt = 2.0 * omega * t
        tau = np.arctan2(np.sum(np.sin(two_wt)), np.sum(np.cos(two_wt))) / (2.0 * omega)
        arg = omega * (t - tau)
        c = np.cos(arg)
        s = np.sin(arg)
        cc = c @ c
        ss = s @ s
        yc = y @ c
        ys = y @ s
        p = 0.0
        if cc > 0.0:
            p += yc * yc / cc
        if ss > 0.0:
            p += ys * ys / ss
        power[i] = 0.5 * p / variance
    return Periodogram(
        periods_hours=periods_hours, power=power, threshold=float(threshold), alpha=alpha
    )


def peak_period(pg: Periodogram) -> tuple[float, float, bool]:
    """Dominant period of a periodogram.

    Returns (period_hours, power, significant); among equal powers the
    smaller period wins.
    """
    if pg.periods_hours.size == 0:
        raise ValueError("empty periodogram")
    idx = int(np.argmax(pg.power))
    power = float(pg.power[idx])
    return float(pg.periods_hours[idx]), power, power > pg.threshold


def series_total(series: EventSeries) -> int:
    """Total event count across bins (conserved by construction)."""
    return int(series.bins.sum())
