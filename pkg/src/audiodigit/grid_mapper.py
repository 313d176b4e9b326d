"""Axis-label association and pixel-to-measurement transforms.

Frequencies live on a log axis: octave(f) = ln(f/125)/ln(2), so 125 Hz
is octave 0 and each doubling adds one.  Both axis transforms are affine
maps anchored on two label-line associations; when more than two exist
the farthest-apart pair wins for resolution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .core_model import Axis, Detection
from .line_geometry import Line, line_angle, line_x_at, line_y_at


class NonpositiveFrequency(ValueError):
    pass


class TooFewLabels(ValueError):
    def __init__(self, axis: Axis, message: str):
        super().__init__(message)
        self.axis = axis


class DegenerateTransform(ValueError):
    pass


def octave(f: float) -> float:
    """Octaves above 125 Hz: ln(f/125)/ln(2)."""
    if f <= 0:
        raise NonpositiveFrequency(f"frequency must be positive, got {f}")
    return math.log(f / 125.0) / math.log(2.0)


def octave_inverse(o: float) -> float:
    """Frequency at a given octave: 125 * 2^o."""
    return 125.0 * 2.0**o


@dataclass(frozen=True)
class AxisAssociation:
    coordinate: float  # y for the threshold axis, x for the frequency axis
    value: float  # dB, or octaves for the frequency axis


@dataclass(frozen=True)
class AffineMap:
    """Line through two anchor points (a0, v0), (a1, v1)."""

    a0: float
    v0: float
    a1: float
    v1: float

    def __post_init__(self):
        if self.a0 == self.a1:
            raise DegenerateTransform("anchor coordinates coincide")

    @property
    def slope(self) -> float:
        return (self.v1 - self.v0) / (self.a1 - self.a0)

    def __call__(self, a: float) -> float:
        return self.v0 + (self.v1 - self.v0) * (a - self.a0) / (self.a1 - self.a0)

    def inverse(self, v: float) -> float:
        if self.v0 == self.v1:
            raise DegenerateTransform("map is constant; no inverse")
        return self.a0 + (self.a1 - self.a0) * (v - self.v0) / (self.v1 - self.v0)


@dataclass(frozen=True)
class AxisTransforms:
    """The (pixel y -> dB, pixel x -> octave) transform pair."""

    y_to_threshold: AffineMap
    x_to_octave: AffineMap

    def __post_init__(self):
        if self.y_to_threshold.slope <= 0:
            # thresholds must increase downward on the chart
            raise DegenerateTransform(
                f"threshold axis slope {self.y_to_threshold.slope} is not positive"
            )
        if self.x_to_octave.slope == 0:
            raise DegenerateTransform("frequency axis is constant")

    def threshold_at(self, y: float) -> float:
        return self.y_to_threshold(y)

    def frequency_at(self, x: float) -> float:
        return octave_inverse(self.x_to_octave(x))

    def y_of_threshold(self, t: float) -> float:
        return self.y_to_threshold.inverse(t)

    def x_of_frequency(self, f: float) -> float:
        return self.x_to_octave.inverse(octave(f))


def _line_hits_box(line: Line, box) -> bool:
    t = math.radians(line.theta)
    c, s = math.cos(t), math.sin(t)
    ds = [
        x * c + y * s - line.rho
        for x in (box.x, box.right)
        for y in (box.y, box.bottom)
    ]
    return min(ds) <= 0.5 and max(ds) >= -0.5


def _center_distance(line: Line, cx: float, cy: float) -> float:
    t = math.radians(line.theta)
    return abs(cx * math.cos(t) + cy * math.sin(t) - line.rho)


def associate_labels(
    labels: list[Detection],
    lines: list[Line],
    axis: Axis,
    tol: float = 1.0,
) -> list[AxisAssociation]:
    """Pair axis labels with the nearest grid line crossing their box.

    Threshold labels pair with horizontal lines, frequency labels with
    vertical ones (within tol degrees of axis-aligned).  Frequency values
    convert to octaves.  Duplicate values keep the closest association;
    the result is sorted by coordinate, strictly increasing.
    """
    if axis == "threshold":
        family = [l for l in lines if abs(line_angle(l)) <= tol]
    else:
        family = [l for l in lines if abs(line_angle(l)) >= 90.0 - tol]

    candidates: list[tuple[float, float, float]] = []  # (coord, value, distance)
    for det in labels:
        if det.kind != "axis_label" or det.label is None or det.label.axis != axis:
            continue
        cx, cy = det.center
        crossing = [l for l in family if _line_hits_box(l, det.box)]
        if not crossing:
            continue
        best = min(crossing, key=lambda l: _center_distance(l, cx, cy))
        if axis == "threshold":
            coord = line_y_at(best, cx)
            value = det.label.value
        else:
            coord = line_x_at(best, cy)
            value = octave(det.label.value)
        candidates.append((coord, value, _center_distance(best, cx, cy)))

    by_value: dict[float, tuple[float, float, float]] = {}
    for cand in candidates:
        prev = by_value.get(cand[1])
        if prev is None or cand[2] < prev[2]:
            by_value[cand[1]] = cand
    by_coord: dict[float, tuple[float, float, float]] = {}
    for cand in by_value.values():
        prev = by_coord.get(cand[0])
        if prev is None or cand[2] < prev[2]:
            by_coord[cand[0]] = cand
    return [
        AxisAssociation(coord, value)
        for coord, value, _ in sorted(by_coord.values(), key=lambda c: c[0])
    ]


def _pick_anchors(assocs: list[AxisAssociation], axis: Axis) -> tuple[AxisAssociation, AxisAssociation]:
    if len(assocs) < 2:
        raise TooFewLabels(axis, f"{axis} axis has {len(assocs)} association(s); need 2")
    ordered = sorted(assocs, key=lambda a: a.coordinate)
    lo_coord = ordered[0].coordinate
    hi_coord = ordered[-1].coordinate
    if lo_coord == hi_coord:
        raise TooFewLabels(axis, f"{axis} axis associations share one coordinate")
    # among ties on coordinate separation, prefer the widest value spread
    lows = [a for a in ordered if a.coordinate == lo_coord]
    highs = [a for a in ordered if a.coordinate == hi_coord]
    first, last = max(
        ((a, b) for a in lows for b in highs), key=lambda p: abs(p[1].value - p[0].value)
    )
    if first.value == last.value:
        raise DegenerateTransform(
            f"{axis} anchors at {first.coordinate} and {last.coordinate} carry equal values"
        )
    return first, last


def derive_transforms(
    freq_assocs: list[AxisAssociation], thresh_assocs: list[AxisAssociation]
) -> AxisTransforms:
    """Anchor both affine maps on the farthest-apart associations."""
    f0, f1 = _pick_anchors(freq_assocs, "frequency")
    t0, t1 = _pick_anchors(thresh_assocs, "threshold")
    return AxisTransforms(
        y_to_threshold=AffineMap(t0.coordinate, t0.value, t1.coordinate, t1.value),
        x_to_octave=AffineMap(f0.coordinate, f0.value, f1.coordinate, f1.value),
    )


def pixel_to_measurement(
    point: tuple[float, float], transforms: AxisTransforms
) -> tuple[float, float]:
    """Unsnapped (frequency Hz, threshold dB) for a pixel coordinate."""
    x, y = point
    return (transforms.frequency_at(x), transforms.threshold_at(y))
