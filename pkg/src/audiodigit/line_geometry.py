"""Hough-transform line detection and rotation correction.

Lines are (rho, theta) pairs: rho is the signed distance from the image
origin to the line along its normal, theta the normal direction in
degrees within [0, 180).  The rotation corrector minimizes the summed
absolute deviation of all detected lines from the horizontal and
vertical axes; the minimizer of that piecewise-linear objective is the
median of the per-line target corrections.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import cv2
import numpy as np

from .raster_ops import BitRaster


class NoLines(ValueError):
    pass


@dataclass(frozen=True)
class Line:
    rho: float
    theta: float  # degrees, [0, 180)
    votes: int

    def __post_init__(self):
        if not 0.0 <= self.theta < 180.0:
            raise ValueError(f"theta out of range: {self.theta}")


@dataclass(frozen=True)
class HoughParams:
    rho_resolution: float = 1.0
    theta_resolution: float = 0.5
    vote_threshold: int = 100
    nms_rho: float = 5.0
    nms_theta: float = 2.0

    def __post_init__(self):
        if min(
            self.rho_resolution,
            self.theta_resolution,
            self.vote_threshold,
            self.nms_rho,
            self.nms_theta,
        ) <= 0:
            raise ValueError("all Hough parameters must be strictly positive")


def default_hough_params(width: int, height: int) -> HoughParams:
    """Defaults tuned for grids whose lines span most of the image."""
    return HoughParams(vote_threshold=max(1, round(0.5 * min(width, height))))


def hough_lines(bits: BitRaster, params: HoughParams) -> list[Line]:
    """Detect lines as local accumulator maxima, strongest first.

    Peaks above the vote threshold are non-max suppressed within the
    (nms_rho, nms_theta) window; surviving collinear peaks inside one
    window merge by vote-weighted averaging of (rho, theta).
    """
    ys, xs = np.nonzero(bits.bits)
    if len(xs) == 0:
        return []
    xs = xs.astype(np.float64)
    ys = ys.astype(np.float64)

    t_res = params.theta_resolution
    r_res = params.rho_resolution
    thetas = np.arange(0.0, 180.0, t_res)
    diag = math.hypot(bits.width, bits.height)
    n_half = int(math.ceil(diag / r_res))
    n_rho = 2 * n_half + 1

    acc = np.empty((len(thetas), n_rho), np.int32)
    for i, theta in enumerate(np.deg2rad(thetas)):
        rho = xs * math.cos(theta) + ys * math.sin(theta)
        bins = np.rint(rho / r_res).astype(np.int64) + n_half
        acc[i] = np.bincount(bins, minlength=n_rho)

    # local maxima within the NMS window; theta wraps at 180 with rho negated
    wt = int(math.ceil(params.nms_theta / t_res))
    wr = int(math.ceil(params.nms_rho / r_res))
    padded = np.vstack([acc[-wt:, ::-1], acc, acc[:wt, ::-1]]).astype(np.float32)
    kernel = np.ones((2 * wt + 1, 2 * wr + 1), np.uint8)
    dilated = cv2.dilate(padded, kernel)[wt : wt + len(thetas)]
    t_idx, r_idx = np.nonzero((acc >= params.vote_threshold) & (acc == dilated))
    if len(t_idx) == 0:
        return []

    peaks = [
        (int(acc[t, r]), thetas[t], (r - n_half) * r_res) for t, r in zip(t_idx, r_idx)
    ]
    peaks.sort(key=lambda p: (-p[0], p[1], p[2]))

    merged: list[Line] = []
    claimed = [False] * len(peaks)
    for i, (votes_i, theta_i, rho_i) in enumerate(peaks):
        if claimed[i]:
            continue
        group = []
        for j in range(i, len(peaks)):
            if claimed[j]:
                continue
            votes_j, theta_j, rho_j = peaks[j]
            # express peak j in the winner's theta frame
            if theta_j - theta_i > 90.0:
                theta_j, rho_j = theta_j - 180.0, -rho_j
            elif theta_i - theta_j > 90.0:
                theta_j, rho_j = theta_j + 180.0, -rho_j
            if abs(theta_j - theta_i) <= params.nms_theta and abs(rho_j - rho_i) <= params.nms_rho:
                claimed[j] = True
                group.append((votes_j, theta_j, rho_j))
        total = sum(v for v, _, _ in group)
        theta = sum(v * t for v, t, _ in group) / total
        rho = sum(v * r for v, _, r in group) / total
        if theta < 0.0:
            theta, rho = theta + 180.0, -rho
        elif theta >= 180.0:
            theta, rho = theta - 180.0, -rho
        merged.append(Line(rho, theta, votes_i))

    merged.sort(key=lambda l: (-l.votes, l.theta, l.rho))
    return merged


def line_angle(line: Line) -> float:
    """Direction angle in (-90, 90]: 0 = horizontal line, 90 = vertical."""
    a = line.theta - 90.0
    if a <= -90.0:
        a += 180.0
    return a


def partition_lines(lines: list[Line]) -> tuple[list[Line], list[Line]]:
    """Split into (near-vertical, near-horizontal) families.

    Vertical means |direction angle| in (45, 90]; the 45-degree boundary
    goes to the horizontal family.
    """
    v = [l for l in lines if abs(line_angle(l)) > 45.0]
    h = [l for l in lines if abs(line_angle(l)) <= 45.0]
    return v, h


def _vertical_direction(line: Line) -> float:
    # direction angle mapped into (45, 135) so vertical reads as 90
    a = line_angle(line)
    return a if a > 0 else a + 180.0


def correction_angle(v_lines: list[Line], h_lines: list[Line]) -> float:
    """Rotation that minimizes summed deviation from the two axes.

    The objective sum(|90 - (theta_v + c)|) + sum(|theta_h + c|) is
    piecewise linear in c, so the median of the per-line targets
    {90 - theta_v} and {-theta_h} minimizes it exactly.  Even-count tie
    intervals resolve toward the smallest |c|.
    """
    targets = [90.0 - _vertical_direction(l) for l in v_lines]
    targets += [-line_angle(l) for l in h_lines]
    if not targets:
        raise NoLines("no lines to estimate rotation from")
    targets.sort()
    n = len(targets)
    if n % 2 == 1:
        return targets[n // 2]
    lo, hi = targets[n // 2 - 1], targets[n // 2]
    return min(max(0.0, lo), hi)


def intersection(a: Line, b: Line) -> tuple[float, float] | None:
    """Intersection point of two infinite lines, or None if parallel."""
    ta, tb = math.radians(a.theta), math.radians(b.theta)
    det = math.sin(tb - ta)
    if abs(det) < 1e-12:
        return None
    x = (a.rho * math.sin(tb) - b.rho * math.sin(ta)) / det
    y = (b.rho * math.cos(ta) - a.rho * math.cos(tb)) / det
    return (x, y)


def filter_nonperpendicular(
    lines: list[Line], width: int, height: int, tol: float = 1.0
) -> list[Line]:
    """Keep lines that cross some other line perpendicularly in-frame.

    A line survives iff another line meets it at 90 degrees (within tol)
    and the crossing point lies inside the image bounds.
    """
    if tol <= 0:
        raise ValueError("tolerance must be positive")
    angles = [line_angle(l) for l in lines]
    keep = [False] * len(lines)
    for i in range(len(lines)):
        for j in range(i + 1, len(lines)):
            d = abs(angles[i] - angles[j]) % 180.0
            if abs(d - 90.0) > tol:
                continue
            pt = intersection(lines[i], lines[j])
            if pt is None:
                continue
            x, y = pt
            if 0.0 <= x <= width - 1 and 0.0 <= y <= height - 1:
                keep[i] = keep[j] = True
    return [l for l, k in zip(lines, keep) if k]


def line_x_at(line: Line, y: float) -> float:
    """x coordinate where a (near-vertical) line crosses height y."""
    t = math.radians(line.theta)
    c = math.cos(t)
    if abs(c) < 1e-9:
        raise ValueError("line is horizontal; x is not a function of y")
    return (line.rho - y * math.sin(t)) / c


def line_y_at(line: Line, x: float) -> float:
    """y coordinate where a (near-horizontal) line crosses width x."""
    t = math.radians(line.theta)
    s = math.sin(t)
    if abs(s) < 1e-9:
        raise ValueError("line is vertical; y is not a function of x")
    return (line.rho - x * math.cos(t)) / s
