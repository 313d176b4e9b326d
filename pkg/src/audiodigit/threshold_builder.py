"""Symbol detections + axis transforms -> final hearing thresholds.

Measured positions land between grid lines; clinically they belong on a
standard frequency column and a 5 dB step.  This module snaps raw values,
undoes the bone-conduction drawing offset, and resolves duplicates.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Literal, Optional, Sequence

from .core_model import (
    STANDARD_FREQUENCIES,
    THRESHOLD_MAX_DB,
    THRESHOLD_MIN_DB,
    Detection,
    MeasurementType,
    Threshold,
)
from .grid_mapper import AxisTransforms, NonpositiveFrequency, octave
from .line_geometry import Line, line_x_at

log = logging.getLogger(__name__)


class SnapTooFar(ValueError):
    """Raw frequency farther from every standard column than the cap allows."""


@dataclass(frozen=True)
class SnapConfig:
    standard_frequencies: tuple[int, ...] = STANDARD_FREQUENCIES
    threshold_step: float = 5.0
    bone_offset_mode: Literal["none", "ear_offset"] = "ear_offset"
    max_frequency_snap: float = 0.5  # octaves

    def __post_init__(self):
        if list(self.standard_frequencies) != sorted(self.standard_frequencies):
            raise ValueError("standard_frequencies must be sorted ascending")
        if not self.standard_frequencies:
            raise ValueError("standard_frequencies must be non-empty")
        if self.threshold_step <= 0:
            raise ValueError(f"threshold_step must be positive: {self.threshold_step}")
        if self.max_frequency_snap <= 0:
            raise ValueError(f"max_frequency_snap must be positive: {self.max_frequency_snap}")


@dataclass(frozen=True)
class RawSymbol:
    """A symbol detection lifted into measurement space, pre-snapping."""

    center: tuple[float, float]  # pixels, audiogram frame
    measurement: MeasurementType
    response: bool
    confidence: float
    frequency: float  # Hz
    threshold: float  # dB


def snap_frequency(f: float, cfg: SnapConfig) -> int:
    """Nearest standard frequency in octave (log) space, ties toward lower."""
    if f <= 0:
        raise NonpositiveFrequency(f"frequency must be positive: {f}")
    o = octave(f)
    best, best_dist = None, math.inf
    for s in cfg.standard_frequencies:
        d = abs(octave(s) - o)
        if d < best_dist:  # strict: equal distance keeps the lower frequency
            best, best_dist = s, d
    if best_dist > cfg.max_frequency_snap:
        raise SnapTooFar(f"{f:.1f} Hz is {best_dist:.3f} octaves from the nearest standard column")
    return best


def snap_threshold(t: float, cfg: SnapConfig) -> float:
    """Nearest multiple of the threshold step; half steps round away from zero."""
    q = t / cfg.threshold_step
    n = math.floor(q + 0.5) if q >= 0 else math.ceil(q - 0.5)
    return n * cfg.threshold_step


def _column_positions(
    transforms: AxisTransforms, vertical_lines: Sequence[Line], cy: float, cfg: SnapConfig
) -> list[tuple[int, float]]:
    """(frequency, x) per standard column, refined by detected lines when close."""
    detected = [line_x_at(ln, cy) for ln in vertical_lines]
    out = []
    for s in cfg.standard_frequencies:
        x = transforms.x_of_frequency(s)
        near = [dx for dx in detected if abs(dx - x) <= 3.0]
        if near:
            x = min(near, key=lambda dx: abs(dx - x))
        out.append((s, x))
    return out


def resolve_bone_offset(
    symbols: Sequence[RawSymbol],
    vertical_lines: Sequence[Line],
    transforms: AxisTransforms,
    cfg: SnapConfig,
) -> list[RawSymbol]:
    """Undo the bone-conduction drawing convention.

    Bone symbols are drawn beside their frequency line, not on it: left-ear
    marks to the right of the line, right-ear marks to the left.  Each bone
    symbol therefore snaps to the nearest standard column on its ear's side
    (at or left of center for left ear, at or right for right ear).  Air
    symbols and unqualified bone symbols pass through for plain snapping.
    """
    if cfg.bone_offset_mode != "ear_offset":
        return list(symbols)
    out = []
    for sym in symbols:
        if sym.measurement.conduction != "bone":
            out.append(sym)
            continue
        cx, cy = sym.center
        columns = _column_positions(transforms, vertical_lines, cy, cfg)
        # 1.5 px slack keeps "exactly on the line" symbols from flipping side
        if sym.measurement.ear == "left":
            cands = [(s, x) for s, x in columns if x <= cx + 1.5]
        else:
            cands = [(s, x) for s, x in columns if x >= cx - 1.5]
        cands = [(s, x) for s, x in cands if abs(octave(s) - octave(sym.frequency)) <= cfg.max_frequency_snap]
        if not cands:
            out.append(sym)
            continue
        s, _ = min(cands, key=lambda sx: abs(sx[1] - cx))
        out.append(replace(sym, frequency=float(s)))
    return out


def dedup(entries: Sequence[tuple[Threshold, float]]) -> list[Threshold]:
    """At most one threshold per (ear, frequency, conduction, masking) key.

    Keeps the highest-confidence entry, tie-break lowest dB; output sorted
    by (ear, conduction, frequency).
    """
    best: dict[tuple, tuple[Threshold, float]] = {}
    for t, conf in entries:
        cur = best.get(t.key)
        if cur is None or (-conf, t.threshold) < (-cur[1], cur[0].threshold):
            best[t.key] = (t, conf)
    out = [t for t, _ in best.values()]
    out.sort(key=lambda t: (t.ear, t.conduction, t.frequency, t.masking))
    return out


def build_digitized(
    detections: Sequence[Detection],
    transforms: AxisTransforms,
    cfg: SnapConfig,
    vertical_lines: Sequence[Line] = (),
) -> list[Threshold]:
    """Compose the measurement path: transform, bone offset, snap, dedup.

    Symbols whose frequency lands too far from any standard column, or whose
    snapped threshold leaves the chart range, are dropped with a warning
    rather than failing the audiogram.
    """
    raw = []
    for d in detections:
        if d.kind != "symbol":
            continue
        cx, cy = d.box.center
        raw.append(
            RawSymbol(
                (cx, cy),
                d.measurement,
                d.response,
                d.confidence,
                transforms.frequency_at(cx),
                transforms.threshold_at(cy),
            )
        )
    raw = resolve_bone_offset(raw, vertical_lines, transforms, cfg)
    entries = []
    for sym in raw:
        try:
            freq = snap_frequency(sym.frequency, cfg)
        except SnapTooFar as e:
            log.warning("dropping %s symbol: %s", sym.measurement, e)
            continue
        db = snap_threshold(sym.threshold, cfg)
        if not THRESHOLD_MIN_DB <= db <= THRESHOLD_MAX_DB:
            log.warning(
                "dropping %s symbol at %d Hz: %.0f dB is outside the chart range",
                sym.measurement,
                freq,
                db,
            )
            continue
        t = Threshold(
            frequency=int(freq),
            threshold=int(db),
            ear=sym.measurement.ear,
            conduction=sym.measurement.conduction,
            masking=sym.measurement.masking,
            response=sym.response,
        )
        entries.append((t, sym.confidence))
    return dedup(entries)
