"""Tests for detection ingestion, template matching, and grid localization."""

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from audiodigit.core_model import (
    GLYPHS,
    BoundingBox,
    Detection,
    LabelValue,
    MeasurementType,
    SchemaError,
    UnknownGlyph,
    parse_measurement_glyph,
)
from audiodigit.glyphs import glyph_bitmap, text_bitmap
from audiodigit.line_geometry import HoughParams, hough_lines
from audiodigit.raster_ops import BitRaster, Raster, binarize
from audiodigit.symbol_matcher import (
    DetectionDocument,
    GlyphTemplate,
    box_iou,
    build_templates,
    clip_to_audiogram,
    detect_audiograms,
    emit_detections,
    grid_regions,
    ingest_detections,
    line_ink_runs,
    match_templates,
    suppress_grid_lines,
)

GLYPH_NAMES = list(GLYPHS)


def glyph_class(det: Detection) -> str:
    return next(k for k, v in GLYPHS.items() if v == det.measurement)


def stamp(page: np.ndarray, name: str, cx: int, cy: int) -> None:
    bm = glyph_bitmap(name)
    page[cy - 8 : cy + 9, cx - 8 : cx + 9][bm] = 0


def grid_page(
    x0: int = 80, y0: int = 60, cols: int = 11, rows: int = 13, pitch_x: int = 40, pitch_y: int = 28
) -> tuple[np.ndarray, BoundingBox]:
    """White page with a drawn grid; returns the page and the grid's box."""
    w = x0 + (cols - 1) * pitch_x + 80
    h = y0 + (rows - 1) * pitch_y + 80
    page = np.full((h, w), 255, np.uint8)
    right = x0 + (cols - 1) * pitch_x
    bottom = y0 + (rows - 1) * pitch_y
    for i in range(rows):
        page[y0 + i * pitch_y, x0 : right + 1] = 0
    for j in range(cols):
        page[y0 : bottom + 1, x0 + j * pitch_x] = 0
    return page, BoundingBox(x0, y0, right - x0, bottom - y0)


# -- templates ----------------------------------------------------------------


def test_build_templates_covers_all_glyphs():
    templates = build_templates()
    assert sorted(t.glyph for t in templates) == sorted(GLYPH_NAMES)
    for t in templates:
        assert t.bitmap.bits.any()
        ax, ay = t.anchor
        assert 0 <= ax < t.bitmap.width and 0 <= ay < t.bitmap.height


def test_template_rejects_unknown_glyph():
    bm = BitRaster(np.ones((5, 5), bool))
    with pytest.raises(UnknownGlyph):
        GlyphTemplate("star", bm, (2, 2))


def test_template_rejects_anchor_outside_bitmap():
    bm = BitRaster(np.ones((5, 5), bool))
    with pytest.raises(ValueError):
        GlyphTemplate("cross", bm, (5, 2))


def test_scaled_templates_shrink():
    half = build_templates(scale=0.5)
    for t in half:
        assert t.bitmap.width < 17 and t.bitmap.bits.any()


# -- detection documents -------------------------------------------------------


def doc_text(entries) -> str:
    return json.dumps({"source": "unit", "detections": entries})


BOX = {"x": 10, "y": 20, "width": 17, "height": 17}


def test_ingest_empty_detections():
    doc = ingest_detections(doc_text([]))
    assert doc.source == "unit" and doc.detections == ()


def test_ingest_symbol_cross_maps_to_left_air_unmasked():
    doc = ingest_detections(
        doc_text([{"kind": "symbol", "boundingBox": BOX, "confidence": 0.9, "measurementType": "cross"}])
    )
    (d,) = doc.detections
    assert d.measurement == MeasurementType("left", "air", False)
    assert d.response is True  # omitted response defaults to measured


def test_ingest_unknown_kind_rejected():
    with pytest.raises(SchemaError) as exc:
        ingest_detections(doc_text([{"kind": "squiggle", "boundingBox": BOX, "confidence": 0.9}]))
    assert exc.value.path == "$.detections[0].kind"


def test_ingest_clamps_confidence():
    doc = ingest_detections(doc_text([{"kind": "audiogram", "boundingBox": BOX, "confidence": 1.7}]))
    assert doc.detections[0].confidence == 1.0
    doc = ingest_detections(doc_text([{"kind": "audiogram", "boundingBox": BOX, "confidence": -0.2}]))
    assert doc.detections[0].confidence == 0.0


def test_ingest_parses_label_value():
    doc = ingest_detections(
        doc_text([{"kind": "axis_label", "boundingBox": BOX, "confidence": 0.8, "value": "2K"}])
    )
    (d,) = doc.detections
    assert d.label == LabelValue("frequency", 2000.0) and d.label_text == "2K"


@pytest.mark.parametrize(
    "entry, path",
    [
        ({"kind": "symbol", "boundingBox": BOX, "confidence": 0.9}, "$.detections[0].measurementType"),
        ({"kind": "axis_label", "boundingBox": BOX, "confidence": 0.9}, "$.detections[0].value"),
        (
            {"kind": "audiogram", "boundingBox": BOX, "confidence": 0.9, "value": "250"},
            "$.detections[0].value",
        ),
        (
            {"kind": "symbol", "boundingBox": BOX, "confidence": 0.9, "measurementType": "blob"},
            "$.detections[0].measurementType",
        ),
        (
            {"kind": "axis_label", "boundingBox": BOX, "confidence": 0.9, "value": "banana"},
            "$.detections[0].value",
        ),
    ],
)
def test_ingest_schema_violations_carry_path(entry, path):
    with pytest.raises(SchemaError) as exc:
        ingest_detections(doc_text([entry]))
    assert exc.value.path == path


def test_ingest_rejects_top_level_extras():
    text = json.dumps({"source": "x", "detections": [], "model": "v5"})
    with pytest.raises(SchemaError) as exc:
        ingest_detections(text)
    assert exc.value.path == "$.model"


def test_ingest_rejects_malformed_json():
    with pytest.raises(SchemaError):
        ingest_detections("{not json")


boxes = st.builds(
    BoundingBox,
    x=st.floats(0, 500),
    y=st.floats(0, 500),
    width=st.floats(1, 60),
    height=st.floats(1, 60),
)
confidences = st.floats(0, 1)
audiogram_dets = st.builds(Detection, box=boxes, kind=st.just("audiogram"), confidence=confidences)
label_dets = st.builds(
    lambda box, confidence, text: Detection(
        box, "axis_label", confidence, label_text=text, label=__import__("audiodigit.core_model", fromlist=["parse_label_text"]).parse_label_text(text)
    ),
    box=boxes,
    confidence=confidences,
    text=st.sampled_from(["250", "2K", "0.5", "40", "-10", "8000"]),
)
symbol_dets = st.builds(
    lambda box, confidence, glyph, response: Detection(
        box, "symbol", confidence, measurement=parse_measurement_glyph(glyph), response=response
    ),
    box=boxes,
    confidence=confidences,
    glyph=st.sampled_from(GLYPH_NAMES),
    response=st.booleans(),
)
documents = st.builds(
    DetectionDocument,
    source=st.text(min_size=1, max_size=20),
    detections=st.lists(st.one_of(audiogram_dets, label_dets, symbol_dets), max_size=6).map(tuple),
)


@given(documents)
def test_ingest_emit_identity(doc):
    assert ingest_detections(emit_detections(doc)) == doc


# -- template matching ---------------------------------------------------------


def test_match_blank_raster_empty():
    r = Raster(np.full((100, 100), 255, np.uint8))
    assert match_templates(r, build_templates(), 0.7) == []


def test_match_threshold_validated():
    r = Raster(np.full((50, 50), 255, np.uint8))
    with pytest.raises(ValueError):
        match_templates(r, build_templates(), 0.0)
    with pytest.raises(ValueError):
        match_templates(r, build_templates(), 1.2)


def test_match_single_circle_center_within_2px():
    page = np.full((120, 120), 255, np.uint8)
    stamp(page, "circle", 60, 55)
    dets = match_templates(Raster(page), build_templates(), 0.7)
    assert len(dets) == 1
    (d,) = dets
    assert d.measurement == MeasurementType("right", "air", False)
    cx, cy = d.box.center
    assert math.hypot(cx - 60, cy - 55) <= 2.0
    assert d.kind == "symbol" and d.confidence >= 0.7


@pytest.mark.parametrize("name", GLYPH_NAMES)
def test_each_isolated_glyph_matches_only_itself(name):
    page = np.full((120, 120), 255, np.uint8)
    stamp(page, name, 60, 55)
    dets = match_templates(Raster(page), build_templates(), 0.7)
    assert [glyph_class(d) for d in dets] == [name]


def test_overlapping_distinct_glyphs_both_detected():
    # circle drawn over a cross, centers 8 px apart: boxes overlap heavily
    page = np.full((120, 120), 255, np.uint8)
    stamp(page, "cross", 60, 50)
    stamp(page, "circle", 60, 58)
    dets = match_templates(Raster(page), build_templates(), 0.7)
    assert sorted(glyph_class(d) for d in dets) == ["circle", "cross"]
    a, b = dets
    assert box_iou(a.box, b.box) > 0.3


def test_same_glyph_near_duplicates_suppressed():
    # two squares 3 px apart produce two raw peaks whose boxes overlap
    # beyond IoU 0.5; keep-max leaves exactly one detection
    page = np.full((120, 140), 255, np.uint8)
    stamp(page, "square", 60, 55)
    stamp(page, "square", 63, 55)
    dets = match_templates(Raster(page), build_templates(), 0.7)
    assert [glyph_class(d) for d in dets] == ["square"]


def test_clean_grid_all_classes_recall_and_precision_one():
    page, _ = grid_page()
    spots = [
        (120, 88, "cross"),
        (160, 144, "circle"),
        (200, 200, "square"),
        (240, 256, "triangle"),
        (280, 116, "gt"),
        (320, 172, "lt"),
        (360, 228, "rbracket"),
        (400, 284, "lbracket"),
    ]
    for gx, gy, name in spots:
        stamp(page, name, gx, gy)
    dets = match_templates(Raster(page), build_templates(), 0.7)
    got = sorted((glyph_class(d), round(d.box.center[0]), round(d.box.center[1])) for d in dets)
    want = sorted((name, gx, gy) for gx, gy, name in spots)
    assert [g[0] for g in got] == [w[0] for w in want]
    for (_, gx, gy), (_, wx, wy) in zip(got, want):
        assert math.hypot(gx - wx, gy - wy) <= 2.0


def test_suppress_grid_lines_removes_lines_keeps_glyph():
    page, _ = grid_page()
    stamp(page, "cross", 160, 144)
    ink = binarize(Raster(page), 128).bits.astype(np.uint8)
    out = suppress_grid_lines(ink, 17)
    # grid rows/columns vanish away from the glyph
    assert out[60, 300:340].sum() == 0
    assert out[300:340, 80].sum() == 0
    # the glyph neighborhood keeps most of its ink
    assert out[136:153, 152:169].sum() >= 0.7 * glyph_bitmap("cross").sum()


# -- clipping ------------------------------------------------------------------


def det_at(x: float, y: float, w: float = 17, h: float = 17) -> Detection:
    return Detection(BoundingBox(x, y, w, h), "symbol", 0.9, measurement=GLYPHS["cross"])


def test_clip_keeps_and_translates():
    box = BoundingBox(100, 50, 200, 150)
    (d,) = clip_to_audiogram([det_at(150, 80)], box)
    assert (d.box.x, d.box.y) == (50.0, 30.0)
    assert (d.box.width, d.box.height) == (17.0, 17.0)


def test_clip_drops_outside_center():
    box = BoundingBox(100, 50, 200, 150)
    assert clip_to_audiogram([det_at(10, 10)], box) == []


def test_clip_boundary_center_kept():
    box = BoundingBox(100, 50, 200, 150)
    # center lands exactly on the left edge: closed box keeps it
    (d,) = clip_to_audiogram([det_at(91.5, 80)], box)
    assert d.box.x == 0.0 and d.box.width == pytest.approx(8.5)


@given(
    st.lists(
        st.builds(det_at, x=st.floats(0, 400), y=st.floats(0, 300)),
        max_size=8,
    )
)
def test_clip_never_grows_and_is_idempotent(dets):
    box = BoundingBox(100, 50, 200, 150)
    once = clip_to_audiogram(dets, box)
    assert len(once) <= len(dets)
    again = clip_to_audiogram(once, BoundingBox(0.0001, 0.0001, box.width, box.height))
    # re-clipping in the box's own frame changes nothing but the epsilon shift
    assert len(again) == len(once)
    for a, b in zip(again, once):
        assert abs(a.box.x - b.box.x) <= 0.001 and abs(a.box.y - b.box.y) <= 0.001


# -- audiogram localization ------------------------------------------------------


def test_box_iou_values():
    a = BoundingBox(0, 0, 10, 10)
    assert box_iou(a, a) == 1.0
    assert box_iou(a, BoundingBox(20, 20, 10, 10)) == 0.0
    half = box_iou(a, BoundingBox(5, 0, 10, 10))
    assert half == pytest.approx(50 / 150)


def test_detect_blank_page_empty():
    r = Raster(np.full((400, 400), 255, np.uint8))
    assert detect_audiograms(r) == []


def test_detect_single_grid_box():
    page, truth = grid_page()
    (box,) = detect_audiograms(Raster(page))
    assert box_iou(box, truth) >= 0.8


def test_detect_two_grids_sorted_by_area():
    page = np.full((700, 1000), 255, np.uint8)
    boxes_truth = []
    for x0, cols in [(60, 9), (560, 7)]:
        right = x0 + (cols - 1) * 45
        for i in range(8):
            page[80 + i * 40, x0 : right + 1] = 0
        for j in range(cols):
            page[80 : 80 + 7 * 40 + 1, x0 + j * 45] = 0
        boxes_truth.append(BoundingBox(x0, 80, right - x0, 7 * 40))
    got = detect_audiograms(Raster(page))
    assert len(got) == 2
    assert got[0].width * got[0].height >= got[1].width * got[1].height
    assert box_iou(got[0], boxes_truth[0]) >= 0.8
    assert box_iou(got[1], boxes_truth[1]) >= 0.8


def test_detect_ignores_header_text_and_separator():
    page, truth = grid_page()
    # page furniture: a separator rule and a text-like dashed row up top
    page[20, 40:520] = 0
    bm = text_bitmap("8000")
    page[30 : 30 + bm.shape[0], 200 : 200 + bm.shape[1]][bm] = 0
    (box,) = detect_audiograms(Raster(page))
    assert box_iou(box, truth) >= 0.8


def test_line_ink_runs_finds_endpoints():
    page = np.full((100, 400), 255, np.uint8)
    page[50, 100:301] = 0
    bits = binarize(Raster(page), 128)
    lines = hough_lines(bits, HoughParams(vote_threshold=50))
    (runs,) = line_ink_runs(bits, lines)
    ((x0, y0), (x1, y1)) = runs[0]
    assert len(runs) == 1
    assert abs(x0 - 100) <= 2 and abs(x1 - 300) <= 2
    assert abs(y0 - 50) <= 1 and abs(y1 - 50) <= 1


def test_line_ink_runs_bridges_small_gaps_and_splits_large():
    page = np.full((100, 400), 255, np.uint8)
    page[50, 100:200] = 0
    page[50, 205:301] = 0  # 5 px gap: bridged into one run
    page[50, 340:381] = 0  # 39 px gap: separate run
    bits = binarize(Raster(page), 128)
    lines = hough_lines(bits, HoughParams(vote_threshold=50))
    (runs,) = line_ink_runs(bits, lines)
    assert len(runs) == 2
    ((x0, _), (x1, _)) = runs[0]
    assert abs(x0 - 100) <= 2 and abs(x1 - 300) <= 2
    ((x2, _), (x3, _)) = runs[1]
    assert abs(x2 - 340) <= 2 and abs(x3 - 380) <= 2


def test_grid_regions_requires_enough_lines():
    # 5 horizontal x 7 vertical: too few horizontals for a grid
    page = np.full((400, 400), 255, np.uint8)
    for i in range(5):
        page[60 + i * 40, 50:351] = 0
    for j in range(7):
        page[60 : 60 + 4 * 40 + 1, 50 + j * 50] = 0
    assert detect_audiograms(Raster(page)) == []
