"""Shared test helpers: drawing primitives and brute-force oracles."""

import numpy as np

from audiodigit.raster_ops import BitRaster, Raster


def blank_page(height=420, width=480):
    return np.full((height, width), 255, np.uint8)


def draw_grid(
    img,
    x_positions,
    y_positions,
    thickness=1,
):
    """Paint vertical lines at x_positions and horizontal lines at
    y_positions, each spanning the other family's extent."""
    x0, x1 = min(x_positions), max(x_positions)
    y0, y1 = min(y_positions), max(y_positions)
    for x in x_positions:
        img[y0 : y1 + 1, x : x + thickness] = 0
    for y in y_positions:
        img[y : y + 1, x0 : x1 + thickness] = 0
    return img


def grid_raster(x_positions=None, y_positions=None, height=420, width=480):
    if x_positions is None:
        x_positions = list(range(40, 441, 40))  # 11 vertical lines
    if y_positions is None:
        y_positions = list(range(30, 391, 30))  # 13 horizontal lines
    return Raster(draw_grid(blank_page(height, width), x_positions, y_positions))


def bits_of(raster, threshold=128):
    return BitRaster(raster.data < threshold)


def deviation_objective(v_directions, h_directions, corrections):
    """Summed deviation of all lines from their axes, vectorized over
    candidate corrections.  Vertical directions use the near-90 branch."""
    obj = np.zeros_like(corrections, dtype=np.float64)
    for t in v_directions:
        obj += np.abs(90.0 - (t + corrections))
    for t in h_directions:
        obj += np.abs(t + corrections)
    return obj


def grid_search_correction(v_directions, h_directions, step=0.01, span=45.0):
    """Brute-force minimizer of the deviation objective on a uniform grid;
    ties resolve toward the smallest absolute correction."""
    cs = np.arange(-span, span + step / 2, step)
    obj = deviation_objective(v_directions, h_directions, cs)
    candidates = cs[obj <= obj.min() + 1e-9]
    return float(candidates[np.argmin(np.abs(candidates))])
