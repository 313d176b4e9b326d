"""Tests for label-line association and the axis transforms."""

import math

import pytest
from hypothesis import given, strategies as st

from audiodigit.core_model import BoundingBox, Detection, LabelValue
from audiodigit.grid_mapper import (
    AffineMap,
    AxisAssociation,
    AxisTransforms,
    DegenerateTransform,
    NonpositiveFrequency,
    TooFewLabels,
    associate_labels,
    derive_transforms,
    octave,
    octave_inverse,
    pixel_to_measurement,
)
from audiodigit.line_geometry import Line


def horizontal_at(y):
    return Line(float(y), 90.0, 100)


def vertical_at(x):
    return Line(float(x), 0.0, 100)


def label_at(box, text):
    return Detection(
        box, "axis_label", 0.9, label_text=text, label=__import__("audiodigit.core_model", fromlist=["parse_label_text"]).parse_label_text(text)
    )


# ---------------------------------------------------------------------------
# octave scale
# ---------------------------------------------------------------------------

def test_octave_reference_points():
    assert octave(125) == 0.0
    assert octave(250) == pytest.approx(1.0, abs=1e-12)
    assert octave(1000) == pytest.approx(3.0, abs=1e-12)
    assert octave(8000) == pytest.approx(6.0, abs=1e-12)


def test_octave_rejects_nonpositive():
    with pytest.raises(NonpositiveFrequency):
        octave(0)
    with pytest.raises(NonpositiveFrequency):
        octave(-100)


def test_octave_inverse_points():
    assert octave_inverse(0) == 125.0
    assert octave_inverse(1) == 250.0
    # direct evaluation: 125 * 2**5.263 = 4799.88...
    assert octave_inverse(5.263) == pytest.approx(4799.9, abs=0.5)


@given(st.floats(50.0, 16000.0))
def test_octave_mutual_inverse(f):
    assert octave_inverse(octave(f)) == pytest.approx(f, rel=1e-9)


@given(st.floats(-2.0, 7.0))
def test_octave_inverse_mutual(o):
    assert octave(octave_inverse(o)) == pytest.approx(o, abs=1e-9)


# ---------------------------------------------------------------------------
# associate_labels
# ---------------------------------------------------------------------------

def test_associates_nearest_crossing_line():
    # tall box centered at y=148 crossed by lines at 100, 150, and 200
    box = BoundingBox(0.0, 86.0, 30.0, 124.0)
    lines = [horizontal_at(100), horizontal_at(150), horizontal_at(200)]
    out = associate_labels([label_at(box, "20")], lines, "threshold")
    assert out == [AxisAssociation(150.0, 20.0)]


def test_label_without_crossing_line_dropped():
    box = BoundingBox(0.0, 140.0, 30.0, 16.0)  # y 140..156
    lines = [horizontal_at(100), horizontal_at(200)]
    assert associate_labels([label_at(box, "20")], lines, "threshold") == []


def test_frequency_labels_convert_to_octaves():
    b250 = BoundingBox(70.0, 10.0, 20.0, 14.0)  # center x=80
    b8000 = BoundingBox(550.0, 10.0, 20.0, 14.0)  # center x=560
    lines = [vertical_at(80), vertical_at(560)]
    out = associate_labels([label_at(b250, "250"), label_at(b8000, "8000")], lines, "frequency")
    assert out == [AxisAssociation(80.0, 1.0), AxisAssociation(560.0, 6.0)]


def test_duplicate_values_keep_closest():
    near = BoundingBox(0.0, 143.0, 30.0, 14.0)  # center y=150, on the line
    far = BoundingBox(0.0, 396.0, 30.0, 14.0)  # center y=403, line at 400
    lines = [horizontal_at(150), horizontal_at(400)]
    out = associate_labels([label_at(far, "20"), label_at(near, "20")], lines, "threshold")
    assert out == [AxisAssociation(150.0, 20.0)]


def test_result_sorted_strictly_increasing():
    boxes = {
        "60": BoundingBox(0.0, 293.0, 30.0, 14.0),
        "20": BoundingBox(0.0, 143.0, 30.0, 14.0),
        "100": BoundingBox(0.0, 443.0, 30.0, 14.0),
    }
    lines = [horizontal_at(150), horizontal_at(300), horizontal_at(450)]
    out = associate_labels([label_at(b, t) for t, b in boxes.items()], lines, "threshold")
    coords = [a.coordinate for a in out]
    assert coords == sorted(coords)
    assert len(set(coords)) == len(coords)
    assert [a.value for a in out] == [20.0, 60.0, 100.0]


def test_wrong_axis_labels_ignored():
    box = BoundingBox(70.0, 10.0, 20.0, 14.0)
    lines = [vertical_at(80)]
    # a dB label never pairs with vertical lines
    assert associate_labels([label_at(box, "20")], lines, "frequency") == []


def test_oblique_lines_excluded_by_tolerance():
    box = BoundingBox(0.0, 140.0, 30.0, 20.0)
    tilted = Line(150.0, 88.0, 100)  # direction angle -2
    assert associate_labels([label_at(box, "20")], [tilted], "threshold", tol=1.0) == []
    out = associate_labels([label_at(box, "20")], [tilted], "threshold", tol=3.0)
    assert len(out) == 1


# ---------------------------------------------------------------------------
# derive_transforms / pixel_to_measurement
# ---------------------------------------------------------------------------

def test_threshold_transform_midpoint():
    t = derive_transforms(
        [AxisAssociation(80.0, 1.0), AxisAssociation(560.0, 6.0)],
        [AxisAssociation(100.0, 0.0), AxisAssociation(300.0, 100.0)],
    )
    assert t.threshold_at(200.0) == pytest.approx(50.0)


def test_frequency_transform_octave_math():
    t = derive_transforms(
        [AxisAssociation(80.0, 1.0), AxisAssociation(560.0, 6.0)],
        [AxisAssociation(100.0, 0.0), AxisAssociation(300.0, 100.0)],
    )
    # o = 1 + 5*(272-80)/480 = 3, and 125*2^3 = 1000
    assert t.frequency_at(272.0) == pytest.approx(1000.0, rel=1e-12)
    # o = 1 + 5*(176-80)/480 = 2, and 125*2^2 = 500
    assert t.frequency_at(176.0) == pytest.approx(500.0, rel=1e-12)


def test_farthest_apart_anchors():
    t = derive_transforms(
        [AxisAssociation(80.0, 1.0), AxisAssociation(560.0, 6.0)],
        [
            AxisAssociation(100.0, 0.0),
            AxisAssociation(200.0, 50.0),
            AxisAssociation(300.0, 100.0),
        ],
    )
    m = t.y_to_threshold
    assert (m.a0, m.v0, m.a1, m.v1) == (100.0, 0.0, 300.0, 100.0)


def test_too_few_labels():
    with pytest.raises(TooFewLabels) as e:
        derive_transforms(
            [AxisAssociation(80.0, 1.0)],
            [AxisAssociation(100.0, 0.0), AxisAssociation(300.0, 100.0)],
        )
    assert e.value.axis == "frequency"
    with pytest.raises(TooFewLabels) as e:
        derive_transforms(
            [AxisAssociation(80.0, 1.0), AxisAssociation(560.0, 6.0)], []
        )
    assert e.value.axis == "threshold"


def test_equal_anchor_values_degenerate():
    with pytest.raises(DegenerateTransform):
        derive_transforms(
            [AxisAssociation(80.0, 1.0), AxisAssociation(560.0, 1.0)],
            [AxisAssociation(100.0, 0.0), AxisAssociation(300.0, 100.0)],
        )


def test_inverted_threshold_axis_degenerate():
    # thresholds must grow downward; an upward axis is degenerate
    with pytest.raises(DegenerateTransform):
        derive_transforms(
            [AxisAssociation(80.0, 1.0), AxisAssociation(560.0, 6.0)],
            [AxisAssociation(100.0, 100.0), AxisAssociation(300.0, 0.0)],
        )


def test_pixel_to_measurement_anchors_exact():
    t = derive_transforms(
        [AxisAssociation(100.0, octave(250)), AxisAssociation(300.0, octave(1000))],
        [AxisAssociation(100.0, 0.0), AxisAssociation(300.0, 100.0)],
    )
    f, db = pixel_to_measurement((100.0, 100.0), t)
    assert f == pytest.approx(250.0, rel=1e-12)
    assert db == pytest.approx(0.0, abs=1e-12)
    f, db = pixel_to_measurement((300.0, 300.0), t)
    assert f == pytest.approx(1000.0, rel=1e-12)
    assert db == pytest.approx(100.0, abs=1e-12)
    # octave-space midpoint is the geometric mean
    f, _ = pixel_to_measurement((200.0, 200.0), t)
    assert f == pytest.approx(500.0, rel=1e-12)


coords = st.floats(0.0, 2000.0)


@given(coords, coords, st.floats(-10.0, 120.0), st.floats(-10.0, 120.0))
def test_anchor_exactness_property(y0, y1, t0, t1):
    if abs(y1 - y0) < 1e-6 or abs(t1 - t0) < 1e-6:
        return
    if (t1 - t0) * (y1 - y0) < 0:
        y0, y1 = y1, y0  # keep the slope positive
    transforms = AxisTransforms(
        y_to_threshold=AffineMap(y0, t0, y1, t1),
        x_to_octave=AffineMap(0.0, 0.0, 480.0, 5.0),
    )
    assert transforms.threshold_at(y0) == pytest.approx(t0, abs=1e-9)
    assert transforms.threshold_at(y1) == pytest.approx(t1, abs=1e-9)


@given(st.floats(1.0, 6.0), st.floats(20.0, 200.0))
def test_frequency_linearity_in_octaves(octave_span, px_per_octave):
    m = AffineMap(100.0, 0.0, 100.0 + octave_span * px_per_octave, octave_span)
    t = AxisTransforms(
        y_to_threshold=AffineMap(0.0, -10.0, 100.0, 120.0), x_to_octave=m
    )
    # equal pixel steps multiply frequency by a constant ratio
    step = px_per_octave / 2
    r1 = t.frequency_at(150.0 + step) / t.frequency_at(150.0)
    r2 = t.frequency_at(300.0 + step) / t.frequency_at(300.0)
    assert r1 == pytest.approx(r2, rel=1e-9)
    assert r1 == pytest.approx(math.sqrt(2.0), rel=1e-9)


def test_transform_inverses():
    t = derive_transforms(
        [AxisAssociation(100.0, octave(250)), AxisAssociation(300.0, octave(1000))],
        [AxisAssociation(100.0, 0.0), AxisAssociation(300.0, 100.0)],
    )
    assert t.x_of_frequency(500.0) == pytest.approx(200.0, rel=1e-12)
    assert t.y_of_threshold(50.0) == pytest.approx(200.0, rel=1e-12)


def test_affine_map_validation():
    with pytest.raises(DegenerateTransform):
        AffineMap(100.0, 0.0, 100.0, 50.0)
