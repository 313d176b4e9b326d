"""Symbol and label detection.

Two sources of detections: externally generated detection documents
(replayed output of upstream neural detectors) and a built-in template
matcher that is sufficient for synthetic reports because it shares its
glyph artwork with the renderer.  Also locates audiogram grids on a page
by clustering mutually crossing horizontal and vertical lines.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from typing import Optional

import cv2
import numpy as np

from .core_model import (
    GLYPHS,
    BoundingBox,
    Detection,
    SchemaError,
    UnknownGlyph,
    UnparsableLabel,
    glyph_name,
    parse_label_text,
    parse_measurement_glyph,
    _box_from_json,
    _box_to_json,
    _boolean,
    _dump,
    _expect_list,
    _number,
    _string,
)
from .glyphs import GLYPH_STROKE, glyph_bitmap, scale_bitmap
from .line_geometry import (
    HoughParams,
    Line,
    filter_nonperpendicular,
    hough_lines,
    intersection,
    line_angle,
)
from .raster_ops import BitRaster, Raster, binarize, otsu_threshold


@dataclass(frozen=True)
class GlyphTemplate:
    """A matchable glyph bitmap; anchor marks the template center."""

    glyph: str
    bitmap: BitRaster
    anchor: tuple[int, int]

    def __post_init__(self):
        if self.glyph not in GLYPHS:
            raise UnknownGlyph(f"unknown glyph name: {self.glyph!r}")
        ax, ay = self.anchor
        if not (0 <= ax < self.bitmap.width and 0 <= ay < self.bitmap.height):
            raise ValueError(f"anchor {self.anchor} outside {self.bitmap.width}x{self.bitmap.height} bitmap")


@dataclass(frozen=True)
class DetectionDocument:
    source: str
    detections: tuple[Detection, ...]

    def __post_init__(self):
        object.__setattr__(self, "detections", tuple(self.detections))


def build_templates(scale: float = 1.0, thickness: int = GLYPH_STROKE) -> list[GlyphTemplate]:
    """Templates for all 8 glyph classes at the given render scale."""
    out = []
    for name in GLYPHS:
        bm = glyph_bitmap(name, thickness)
        if scale != 1.0:
            bm = scale_bitmap(bm, scale)
        raster = BitRaster(bm)
        out.append(GlyphTemplate(name, raster, (raster.width // 2, raster.height // 2)))
    return out


# -- detection documents -----------------------------------------------------

_FIELDS_BY_KIND = {
    "audiogram": (("kind", "boundingBox", "confidence"), ()),
    "axis_label": (("kind", "boundingBox", "confidence", "value"), ()),
    "symbol": (("kind", "boundingBox", "confidence", "measurementType"), ("response",)),
}


def _check_fields(obj, required: tuple[str, ...], optional: tuple[str, ...], path: str) -> None:
    if not isinstance(obj, dict):
        raise SchemaError(path, f"expected object, got {type(obj).__name__}")
    for k in required:
        if k not in obj:
            raise SchemaError(f"{path}.{k}", "missing required field")
    for k in obj:
        if k not in required and k not in optional:
            raise SchemaError(f"{path}.{k}", "unknown field")


def ingest_detections(document: str) -> DetectionDocument:
    """Parse and validate a detection document (strict field vocabulary)."""
    try:
        data = json.loads(document)
    except json.JSONDecodeError as e:
        raise SchemaError("$", f"invalid JSON: {e}") from None
    _check_fields(data, ("source", "detections"), (), "$")
    source = _string(data["source"], "$.source")
    items = _expect_list(data["detections"], "$.detections")
    detections = []
    for i, entry in enumerate(items):
        path = f"$.detections[{i}]"
        if not isinstance(entry, dict):
            raise SchemaError(path, f"expected object, got {type(entry).__name__}")
        kind = entry.get("kind")
        if kind not in _FIELDS_BY_KIND:
            raise SchemaError(f"{path}.kind", f"unknown kind {kind!r}")
        required, optional = _FIELDS_BY_KIND[kind]
        _check_fields(entry, required, optional, path)
        box = _box_from_json(entry["boundingBox"], f"{path}.boundingBox")
        conf = min(max(_number(entry["confidence"], f"{path}.confidence"), 0.0), 1.0)
        if kind == "audiogram":
            detections.append(Detection(box, "audiogram", conf))
        elif kind == "axis_label":
            text = _string(entry["value"], f"{path}.value")
            try:
                label = parse_label_text(text)
            except UnparsableLabel as e:
                raise SchemaError(f"{path}.value", str(e)) from None
            detections.append(Detection(box, "axis_label", conf, label_text=text, label=label))
        else:
            name = _string(entry["measurementType"], f"{path}.measurementType")
            try:
                mt = parse_measurement_glyph(name)
            except UnknownGlyph as e:
                raise SchemaError(f"{path}.measurementType", str(e)) from None
            response = True
            if "response" in entry:
                response = _boolean(entry["response"], f"{path}.response")
            detections.append(Detection(box, "symbol", conf, measurement=mt, response=response))
    return DetectionDocument(source, tuple(detections))


def emit_detections(doc: DetectionDocument) -> str:
    items = []
    for d in doc.detections:
        entry = {"kind": d.kind, "boundingBox": _box_to_json(d.box), "confidence": d.confidence}
        if d.kind == "axis_label":
            entry["value"] = d.label_text
        elif d.kind == "symbol":
            entry["measurementType"] = glyph_name(d.measurement)
            entry["response"] = d.response
        items.append(entry)
    return _dump({"source": doc.source, "detections": items})


# -- template matching -------------------------------------------------------


def box_iou(a: BoundingBox, b: BoundingBox) -> float:
    ix = max(0.0, min(a.right, b.right) - max(a.x, b.x))
    iy = max(0.0, min(a.bottom, b.bottom) - max(a.y, b.y))
    inter = ix * iy
    union = a.width * a.height + b.width * b.height - inter
    return inter / union if union > 0 else 0.0


def _keep_max(dets: list[Detection], iou_threshold: float = 0.5) -> list[Detection]:
    dets = sorted(dets, key=lambda d: (-d.confidence, d.box.x, d.box.y))
    kept: list[Detection] = []
    for d in dets:
        if all(box_iou(d.box, k.box) <= iou_threshold for k in kept):
            kept.append(d)
    return kept


def suppress_grid_lines(ink: np.ndarray, glyph_dim: int) -> np.ndarray:
    """Remove long straight strokes, then close the cuts they leave in glyphs.

    Any run much longer than a glyph is grid, not symbol; removing it keeps
    the matcher from firing on line crossings that resemble brackets.
    """
    klen = max(9, round(1.5 * glyph_dim))
    ink = ink.astype(np.uint8)
    horiz = cv2.morphologyEx(ink, cv2.MORPH_OPEN, np.ones((1, klen), np.uint8))
    vert = cv2.morphologyEx(ink, cv2.MORPH_OPEN, np.ones((klen, 1), np.uint8))
    out = ink & ~(horiz | vert)
    return cv2.morphologyEx(out, cv2.MORPH_CLOSE, np.ones((3, 3), np.uint8))


def _window_sums(img: np.ndarray, th: int, tw: int) -> np.ndarray:
    ii = cv2.integral(img)
    return ii[th:, tw:] - ii[:-th, tw:] - ii[th:, :-tw] + ii[:-th, :-tw]


def ncc_response(img: np.ndarray, template: np.ndarray) -> Optional[np.ndarray]:
    """NCC response map of a 0/1 float template, zeroed off local maxima.

    Entry (y, x) scores the template placed with top-left corner there.
    Positions that are not a local correlation maximum are zeroed, so a
    nonzero entry marks where the template actually locks on rather than
    the sloping tail of a peak elsewhere.  Windows holding less than a
    quarter of the template's ink are zeroed too: near-blank windows
    make the normalization term degenerate.
    """
    th, tw = template.shape
    if th > img.shape[0] or tw > img.shape[1]:
        return None
    res = cv2.matchTemplate(img, template, cv2.TM_CCOEFF_NORMED)
    res[_window_sums(img, th, tw) < 0.25 * template.sum()] = 0.0
    k = max(3, (min(th, tw) // 2) | 1)
    local_max = cv2.dilate(res, np.ones((k, k), np.uint8))
    res[res < local_max - 1e-6] = 0.0
    return res


def ncc_peaks(
    img: np.ndarray, template: np.ndarray, score_threshold: float
) -> list[tuple[int, int, float]]:
    """Local NCC maxima of a 0/1 float template over a 0/1 float image.

    Returns (x, y, score) per peak with (x, y) the window's top-left corner.
    """
    res = ncc_response(img, template)
    if res is None:
        return []
    ys, xs = np.nonzero(res >= score_threshold)
    return [(int(x), int(y), min(float(res[y, x]), 1.0)) for y, x in zip(ys, xs)]


def match_templates(
    r: Raster,
    templates: list[GlyphTemplate],
    score_threshold: float,
    binarize_threshold: Optional[int] = None,
    suppress_lines: bool = True,
) -> list[Detection]:
    """Find glyph occurrences by normalized cross-correlation.

    Matches run over the binarized raster (Otsu unless a fixed threshold is
    given).  Same-glyph overlaps collapse via IoU > 0.5 keep-max; distinct
    glyphs are never suppressed against each other, so stacked symbols at a
    shared frequency all survive.
    """
    if not 0.0 < score_threshold <= 1.0:
        raise ValueError(f"score_threshold out of (0, 1]: {score_threshold}")
    thr = otsu_threshold(r) if binarize_threshold is None else binarize_threshold
    ink = binarize(r, thr).bits.astype(np.uint8)
    if suppress_lines and templates:
        dim = max(max(t.bitmap.height, t.bitmap.width) for t in templates)
        ink = suppress_grid_lines(ink, dim)
    img = ink.astype(np.float32)
    by_glyph: dict[str, list[Detection]] = {}
    for t in templates:
        tpl = t.bitmap.bits.astype(np.float32)
        mt = parse_measurement_glyph(t.glyph)
        for x, y, score in ncc_peaks(img, tpl, score_threshold):
            box = BoundingBox(float(x), float(y), float(t.bitmap.width), float(t.bitmap.height))
            by_glyph.setdefault(t.glyph, []).append(Detection(box, "symbol", score, measurement=mt))
    out: list[Detection] = []
    for dets in by_glyph.values():
        out.extend(_keep_max(dets))
    out.sort(key=lambda d: (-d.confidence, d.box.x, d.box.y))
    return out


# -- audiogram localization --------------------------------------------------


def clip_to_audiogram(detections: list[Detection], audiogram_box: BoundingBox) -> list[Detection]:
    """Keep detections centered inside the box, re-expressed to its origin."""
    out = []
    for d in detections:
        cx, cy = d.box.center
        if not audiogram_box.contains(cx, cy):
            continue
        nx, ny = d.box.x - audiogram_box.x, d.box.y - audiogram_box.y
        w, h = d.box.width, d.box.height
        # boxes straddling the audiogram edge shrink to stay in-frame
        if nx < 0:
            w += nx
            nx = 0.0
        if ny < 0:
            h += ny
            ny = 0.0
        out.append(replace(d, box=BoundingBox(nx, ny, w, h)))
    return out


Extent = tuple[tuple[float, float], tuple[float, float]]


def line_ink_runs(
    bits: BitRaster, lines: list[Line], max_gap: int = 6, min_run: int = 20
) -> list[list[Extent]]:
    """Inked runs along each line, tolerating gaps up to max_gap px.

    Hough lines are infinite; the grid edge lives where the ink actually
    starts and stops.  A single line can cross several audiograms placed
    side by side, so every sufficiently long run is reported, endpoints
    sorted by coordinate.  Sampling checks a 3x3 neighborhood so quantized
    rho and mild antialiasing do not break runs.
    """
    occ = cv2.dilate(bits.bits.astype(np.uint8), np.ones((3, 3), np.uint8)) > 0
    h, w = occ.shape
    diag = int(math.hypot(w, h)) + 1
    ts = np.arange(-diag, diag + 1)
    out: list[list[Extent]] = []
    for ln in lines:
        th = math.radians(ln.theta)
        c, s = math.cos(th), math.sin(th)
        xs = np.rint(ln.rho * c - ts * s).astype(int)
        ys = np.rint(ln.rho * s + ts * c).astype(int)
        m = (xs >= 0) & (xs < w) & (ys >= 0) & (ys < h)
        runs: list[Extent] = []
        if m.any():
            xi, yi = xs[m], ys[m]
            idx = np.nonzero(occ[yi, xi])[0]
            if idx.size:
                breaks = np.nonzero(np.diff(idx) > max_gap + 1)[0]
                starts = np.concatenate(([0], breaks + 1))
                ends = np.concatenate((breaks, [idx.size - 1]))
                for a, b in zip(idx[starts], idx[ends]):
                    if b - a < min_run:
                        continue
                    p0 = (float(xi[a]), float(yi[a]))
                    p1 = (float(xi[b]), float(yi[b]))
                    runs.append((p0, p1) if p0 <= p1 else (p1, p0))
        runs.sort()
        out.append(runs)
    return out


def _near_extent(pt: tuple[float, float], ext: Extent, tol: float) -> bool:
    (x0, y0), (x1, y1) = ext
    return (
        min(x0, x1) - tol <= pt[0] <= max(x0, x1) + tol
        and min(y0, y1) - tol <= pt[1] <= max(y0, y1) + tol
    )


def grid_regions(
    lines: list[Line],
    runs: list[list[Extent]],
    min_horizontal: int = 6,
    min_vertical: int = 6,
    tol: float = 8.0,
) -> list[BoundingBox]:
    """Boxes around clusters of mutually crossing perpendicular line runs.

    Nodes are (line, run) pairs; two join a cluster when the lines' crossing
    point lies on both inked runs.  Clusters with enough lines each way are
    audiogram grids.  Sorted by area descending.
    """
    nodes = [(i, k) for i, rs in enumerate(runs) for k in range(len(rs))]
    horiz = {n for n in nodes if abs(line_angle(lines[n[0]])) <= 45.0}
    parent = {n: n for n in nodes}

    def find(n):
        while parent[n] != n:
            parent[n] = parent[parent[n]]
            n = parent[n]
        return n

    for a in nodes:
        if a not in horiz:
            continue
        for b in nodes:
            if b in horiz:
                continue
            pt = intersection(lines[a[0]], lines[b[0]])
            if pt is None:
                continue
            if _near_extent(pt, runs[a[0]][a[1]], tol) and _near_extent(pt, runs[b[0]][b[1]], tol):
                parent[find(a)] = find(b)

    clusters: dict[tuple[int, int], list[tuple[int, int]]] = {}
    for n in nodes:
        clusters.setdefault(find(n), []).append(n)
    boxes = []
    for members in clusters.values():
        n_h = sum(1 for n in members if n in horiz)
        n_v = len(members) - n_h
        if n_h < min_horizontal or n_v < min_vertical:
            continue
        pts = [p for i, k in members for p in runs[i][k]]
        xs = [p[0] for p in pts]
        ys = [p[1] for p in pts]
        boxes.append(BoundingBox(min(xs), min(ys), max(xs) - min(xs), max(ys) - min(ys)))
    boxes.sort(key=lambda b: -b.width * b.height)
    return boxes


def detect_audiograms(
    r: Raster,
    binarize_threshold: int | None = None,
    params: HoughParams | None = None,
) -> list[BoundingBox]:
    """Locate up to two audiogram grids on a report page.

    Page-level line detection needs a lower vote threshold than the default:
    an audiogram grid spans only part of the page, so even its longest lines
    collect far fewer votes than half the page dimension.
    """
    thr = binarize_threshold if binarize_threshold is not None else otsu_threshold(r)
    bits = binarize(r, thr)
    if params is None:
        params = HoughParams(vote_threshold=max(60, round(0.15 * min(r.width, r.height))))
    lines = filter_nonperpendicular(hough_lines(bits, params), r.width, r.height)
    if not lines:
        return []
    return grid_regions(lines, line_ink_runs(bits, lines))[:2]
