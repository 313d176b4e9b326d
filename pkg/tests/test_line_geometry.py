"""Tests for Hough detection, partitioning, and rotation correction."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import bits_of, grid_raster, grid_search_correction
from audiodigit.line_geometry import (
    HoughParams,
    Line,
    NoLines,
    correction_angle,
    default_hough_params,
    filter_nonperpendicular,
    hough_lines,
    intersection,
    line_angle,
    line_x_at,
    line_y_at,
    partition_lines,
)
from audiodigit.raster_ops import BitRaster, Raster, binarize, otsu_threshold, rotate


def from_direction(angle, rho=0.0, votes=100):
    """Line with the given direction angle in (-90, 90]."""
    theta = angle + 90.0
    if theta >= 180.0:
        theta -= 180.0
    return Line(rho, theta, votes)


# ---------------------------------------------------------------------------
# hough_lines
# ---------------------------------------------------------------------------

def test_blank_raster_yields_nothing():
    bits = BitRaster(np.zeros((100, 100), np.bool_))
    assert hough_lines(bits, default_hough_params(100, 100)) == []


def test_single_row_single_line():
    img = np.zeros((100, 200), np.bool_)
    img[50, :] = True
    lines = hough_lines(BitRaster(img), default_hough_params(200, 100))
    assert len(lines) == 1
    (line,) = lines
    assert abs(line.theta - 90.0) <= 0.5
    assert abs(abs(line.rho) - 50.0) <= 1.0
    assert line.votes == 200


def test_single_column_single_line():
    img = np.zeros((100, 200), np.bool_)
    img[:, 70] = True
    lines = hough_lines(BitRaster(img), default_hough_params(200, 100))
    assert len(lines) == 1
    (line,) = lines
    assert abs(line.theta) <= 0.5 or abs(line.theta - 180.0) <= 0.5
    assert abs(abs(line.rho) - 70.0) <= 1.0


def test_grid_recovery_11_by_13():
    r = grid_raster()  # 11 vertical at x=40..440, 13 horizontal at y=30..390
    lines = hough_lines(bits_of(r), default_hough_params(r.width, r.height))
    v, h = partition_lines(lines)
    assert len(v) == 11 and len(h) == 13
    vx = sorted(line_x_at(l, 210) for l in v)
    hy = sorted(line_y_at(l, 240) for l in h)
    for got, want in zip(vx, range(40, 441, 40)):
        assert abs(got - want) <= 1.0
    for got, want in zip(hy, range(30, 391, 30)):
        assert abs(got - want) <= 1.0
    for l in v:
        assert abs(line_angle(l)) >= 89.5
    for l in h:
        assert abs(line_angle(l)) <= 0.5


def test_votes_sorted_descending():
    img = np.zeros((100, 200), np.bool_)
    img[50, :] = True  # 200 votes
    img[20:80, 30] = True  # 60 votes
    lines = hough_lines(BitRaster(img), HoughParams(vote_threshold=40))
    assert len(lines) == 2
    assert lines[0].votes >= lines[1].votes
    assert abs(lines[0].theta - 90.0) <= 0.5


def test_angled_line_within_one_cell():
    import cv2

    img = np.full((300, 300), 255, np.uint8)
    # line with normal direction 30 degrees at rho 180
    theta = np.deg2rad(30.0)
    pts = []
    for s in (-140, 140):
        x = 180 * np.cos(theta) - s * np.sin(theta)
        y = 180 * np.sin(theta) + s * np.cos(theta)
        pts.append((int(round(x)), int(round(y))))
    cv2.line(img, pts[0], pts[1], 0, 1)
    lines = hough_lines(bits_of(Raster(img)), HoughParams(vote_threshold=100))
    assert lines
    best = lines[0]
    assert abs(best.theta - 30.0) <= 0.5
    assert abs(best.rho - 180.0) <= 1.0


# ---------------------------------------------------------------------------
# line_angle / partition_lines
# ---------------------------------------------------------------------------

def test_line_angle_convention():
    assert line_angle(Line(0, 90.0, 1)) == 0.0  # horizontal
    assert line_angle(Line(0, 0.0, 1)) == 90.0  # vertical
    assert line_angle(Line(0, 93.0, 1)) == 3.0
    assert line_angle(Line(0, 1.0, 1)) == -89.0
    assert line_angle(Line(0, 179.0, 1)) == 89.0


def test_partition_families():
    v, h = partition_lines(
        [
            from_direction(89.0),
            from_direction(2.0),
            from_direction(45.0),
            from_direction(-46.0),
            from_direction(90.0),
        ]
    )
    assert [line_angle(l) for l in v] == [89.0, -46.0, 90.0]
    assert [line_angle(l) for l in h] == [2.0, 45.0]


def test_partition_is_a_partition():
    lines = [from_direction(a) for a in np.linspace(-89.9, 90.0, 37)]
    v, h = partition_lines(lines)
    assert len(v) + len(h) == len(lines)
    assert not (set(id(l) for l in v) & set(id(l) for l in h))


# ---------------------------------------------------------------------------
# correction_angle
# ---------------------------------------------------------------------------

def test_correction_median_of_horizontals():
    h = [from_direction(2.0) for _ in range(3)]
    assert correction_angle([], h) == -2.0


def test_correction_single_vertical():
    # direction 88: two degrees shy of vertical, so rotate by +2
    assert correction_angle([from_direction(88.0)], []) == pytest.approx(2.0)


def test_correction_no_lines():
    with pytest.raises(NoLines):
        correction_angle([], [])


def test_correction_tie_breaks_toward_zero():
    # targets {-3, 5}: any value between minimizes; zero is inside
    h = [from_direction(3.0), from_direction(-5.0)]
    assert correction_angle([], h) == 0.0
    # targets {2, 6}: interval excludes zero; nearest endpoint wins
    h = [from_direction(-2.0), from_direction(-6.0)]
    assert correction_angle([], h) == 2.0
    h = [from_direction(2.0), from_direction(6.0)]
    assert correction_angle([], h) == -2.0


def test_correction_zero_on_aligned_grid():
    r = grid_raster()
    lines = hough_lines(bits_of(r), default_hough_params(r.width, r.height))
    v, h = partition_lines(lines)
    assert abs(correction_angle(v, h)) <= 0.25


@pytest.mark.parametrize("rotation", [-3.0, 1.0, 3.0, 5.0])
def test_correction_recovers_rotation(rotation):
    r = rotate(grid_raster(), rotation)
    bits = binarize(r, otsu_threshold(r))
    lines = hough_lines(bits, default_hough_params(r.width, r.height))
    assert lines
    v, h = partition_lines(lines)
    assert correction_angle(v, h) == pytest.approx(-rotation, abs=0.25)


def test_correction_fixed_point():
    r = rotate(grid_raster(), 5.0)
    bits = binarize(r, otsu_threshold(r))
    lines = hough_lines(bits, default_hough_params(r.width, r.height))
    v, h = partition_lines(lines)
    c = correction_angle(v, h)
    r2 = rotate(r, c)
    bits2 = binarize(r2, otsu_threshold(r2))
    lines2 = hough_lines(bits2, default_hough_params(r2.width, r2.height))
    v2, h2 = partition_lines(lines2)
    assert abs(correction_angle(v2, h2)) <= 0.5


@settings(max_examples=300, deadline=None)
@given(st.data())
def test_correction_matches_grid_search(data):
    n_v = data.draw(st.integers(0, 8))
    n_h = data.draw(st.integers(0 if n_v else 1, 8))
    angle = st.floats(-44.0, 44.0, allow_nan=False, allow_infinity=False)
    v_dirs = [90.0 - a for a in data.draw(st.lists(angle, min_size=n_v, max_size=n_v))]
    h_dirs = data.draw(st.lists(angle, min_size=n_h, max_size=n_h))
    v_lines = [from_direction(d if d <= 90.0 else d - 180.0) for d in v_dirs]
    h_lines = [from_direction(d) for d in h_dirs]
    got = correction_angle(v_lines, h_lines)
    want = grid_search_correction(v_dirs, h_dirs)
    assert abs(got - want) <= 0.0101


@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.floats(-30.0, 30.0, allow_nan=False), min_size=1, max_size=9).filter(
        lambda a: len(a) % 2 == 1
    ),
    st.floats(-10.0, 10.0, allow_nan=False),
)
def test_correction_translation_equivariance(h_angles, delta):
    # odd counts give a unique median; even-count ties resolve toward the
    # smallest correction, which is deliberately not shift-equivariant
    base = correction_angle([], [from_direction(a) for a in h_angles])
    shifted = correction_angle([], [from_direction(a + delta) for a in h_angles])
    assert shifted == pytest.approx(base - delta, abs=1e-9)


# ---------------------------------------------------------------------------
# filter_nonperpendicular
# ---------------------------------------------------------------------------

def horizontal_at(y, votes=100):
    return Line(float(y), 90.0, votes)


def vertical_at(x, votes=100):
    return Line(float(x), 0.0, votes)


def test_filter_isolated_line():
    assert filter_nonperpendicular([horizontal_at(50)], 100, 100) == []


def test_filter_crossing_pair_kept():
    lines = [horizontal_at(50), vertical_at(60)]
    assert filter_nonperpendicular(lines, 100, 100) == lines


def test_filter_oblique_partner_dropped():
    lines = [horizontal_at(50), from_direction(45.0, rho=10.0)]
    assert filter_nonperpendicular(lines, 100, 100) == []


def test_filter_out_of_frame_crossing():
    # perpendicular but they meet at x=500, far outside a 100x100 image
    lines = [horizontal_at(50), vertical_at(500)]
    assert filter_nonperpendicular(lines, 100, 100) == []


def test_filter_tolerance():
    # 88.5-degree meeting angle passes a 2-degree tolerance, fails 1
    theta = np.deg2rad(1.5)
    almost_vertical = Line(60 * np.cos(theta) + 50 * np.sin(theta), 1.5, 100)
    lines = [horizontal_at(50), almost_vertical]
    assert filter_nonperpendicular(lines, 100, 100, tol=1.0) == []
    assert filter_nonperpendicular(lines, 100, 100, tol=2.0) == lines


# ---------------------------------------------------------------------------
# coordinate helpers
# ---------------------------------------------------------------------------

def test_intersection_point():
    pt = intersection(horizontal_at(50), vertical_at(60))
    assert pt == pytest.approx((60.0, 50.0))
    assert intersection(horizontal_at(50), horizontal_at(80)) is None


def test_line_coordinates():
    assert line_x_at(vertical_at(70), 10.0) == pytest.approx(70.0)
    assert line_y_at(horizontal_at(50), 10.0) == pytest.approx(50.0)
    with pytest.raises(ValueError):
        line_x_at(horizontal_at(50), 10.0)
    with pytest.raises(ValueError):
        line_y_at(vertical_at(70), 10.0)


def test_hough_params_validation():
    with pytest.raises(ValueError):
        HoughParams(rho_resolution=0)
    with pytest.raises(ValueError):
        HoughParams(vote_threshold=-5)
    assert default_hough_params(480, 420).vote_threshold == 210
