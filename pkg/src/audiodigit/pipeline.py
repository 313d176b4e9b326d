"""End-to-end digitization: report image in, structured thresholds out.

The stage order is fixed.  Audiogram grids are located on the full
page; each grid is then cropped with margin, binarized, and run through
line detection twice: once to estimate the rotation correction from the
raw line angles, and again after deskewing so that label association
sees axis-aligned lines.  Symbol and axis-label detections come either
from built-in template matching or from an external detection document
clipped to the audiogram.  Labels are associated with grid lines, the
two affine axis transforms are derived, and symbol centers are snapped
onto the audiometric grid.

Each audiogram independently yields either a list of thresholds or a
typed DigitizationFailure; one bad grid never aborts the rest of the
report.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path
from typing import Optional, Union

import cv2
import numpy as np

from .core_model import (
    STANDARD_FREQUENCIES,
    THRESHOLD_MAX_DB,
    THRESHOLD_MIN_DB,
    THRESHOLD_STEP_DB,
    BoundingBox,
    Detection,
    DigitizationFailure,
    Threshold,
    parse_label_text,
    serialize_digitized,
    serialize_failures,
)
from .glyphs import text_bitmap
from .grid_mapper import (
    AxisAssociation,
    DegenerateTransform,
    TooFewLabels,
    associate_labels,
    derive_transforms,
    octave,
)
from .line_geometry import (
    HoughParams,
    Line,
    correction_angle,
    filter_nonperpendicular,
    hough_lines,
    intersection,
    line_angle,
    line_x_at,
    line_y_at,
)
from .raster_ops import (
    BitRaster,
    Raster,
    binarize,
    crop,
    otsu_threshold,
    rotate,
    rotate_point,
    rotation_matrix,
)
from .symbol_matcher import (
    DetectionDocument,
    box_iou,
    build_templates,
    detect_audiograms,
    ingest_detections,
    line_ink_runs,
    ncc_response,
    parse_measurement_glyph,
    suppress_grid_lines,
)
from .threshold_builder import SnapConfig, build_digitized

AudiogramResult = Union[list[Threshold], DigitizationFailure]
DetectionSource = Union[str, Path, DetectionDocument]

# fraction of the grid box size kept as margin so axis labels stay in the crop
CROP_MARGIN = 0.18
# scanned pages are rotated a few degrees at most; steeper lines are artifacts
MAX_GRID_TILT = 15.0
SYMBOL_SCORE = 0.7
LABEL_SCORE = 0.75
# floors for pages that went through rotation or resampling: even an
# exact template tops out well below a clean match on such ink
SYMBOL_SCORE_DEGRADED = 0.33
LABEL_SCORE_DEGRADED = 0.5
# grid row pitch (px per 10 dB) at which the built-in templates match 1:1
NOMINAL_ROW_PITCH = 28.0
# template blur that absorbs the sub-pixel phase of resampled strokes
DEGRADE_SIGMA = 0.5
# gap between a bone-conduction mark and its frequency column, and the
# half-width of the search window centered on each candidate grid site
BONE_MARK_OFFSET = 10.0
SYMBOL_SITE_TOL = 3
# a match must explain most of the ink around its site; a fragment (a
# bracket riding an X flank) correlates well but leaves the rest of the
# blob unexplained
SITE_COVER_MIN = 0.72
# window ink relative to template ink; outside this band the match is
# riding something much fainter or much heavier than the glyph
SITE_INK_BAND = (0.36, 2.2)
# rank demotion per e-fold of ink imbalance, so a hollow template cannot
# outbid the right glyph on an overweight blob
SITE_INK_BALANCE = 0.6
# an accepted match must own this share of the ink it claims once every
# other accepted match has claimed theirs; a bracket that only re-reads
# the flank of an X owns nothing and is discarded
SITE_UNIQUE_MIN = 0.3
# the same two pressures for label strings: a superstring riding mostly
# blank margin loses to the string whose ink it actually covers, and a
# substring loses to the string that explains the whole slot
LABEL_INK_BALANCE = 0.3
LABEL_SLOT_COVER = 0.5


@dataclass(frozen=True)
class PipelineConfig:
    """Pipeline knobs.

    hough picks line-detection parameters (None derives a vote threshold
    from the crop size).  binarize_threshold fixes the ink cutoff (None
    means Otsu per crop).  label_tol is how many degrees from
    axis-aligned a grid line may be and still pair with an axis label.
    detection_source selects built-in template matching ("builtin"), a
    path to a detection document, or an in-memory DetectionDocument.
    """

    hough: Optional[HoughParams] = None
    binarize_threshold: Optional[int] = None
    label_tol: float = 1.0
    snap: SnapConfig = field(default_factory=SnapConfig)
    detection_source: DetectionSource = "builtin"

    def __post_init__(self):
        if self.label_tol <= 0:
            raise ValueError(f"label_tol must be positive: {self.label_tol}")
        if self.binarize_threshold is not None and not 0 <= self.binarize_threshold <= 255:
            raise ValueError(f"binarize_threshold out of [0, 255]: {self.binarize_threshold}")


def digitize_report(
    image: Raster, config: Optional[PipelineConfig] = None
) -> list[AudiogramResult]:
    """Digitize every audiogram on a report page, left to right.

    Returns one entry per audiogram: the extracted thresholds, or a
    DigitizationFailure naming the stage that broke down.  A page with
    no detectable grid yields a single no_audiogram_found failure.
    """
    cfg = config or PipelineConfig()
    external = _load_detections(cfg.detection_source)
    boxes: list[BoundingBox] = []
    if external is not None:
        boxes = [d.box for d in external.detections if d.kind == "audiogram"]
    if not boxes:
        boxes = detect_audiograms(image, cfg.binarize_threshold, cfg.hough)
    if not boxes:
        return [DigitizationFailure("no_audiogram_found", detail="no grid region detected")]
    boxes = sorted(boxes, key=lambda b: (b.x, b.y))
    return [_digitize_audiogram(image, box, cfg, external) for box in boxes]


def results_document(results: list[AudiogramResult]) -> str:
    """Serialize a report's outcome as a single document.

    A report with at least one digitized audiogram serializes the
    combined thresholds; a report where every audiogram failed
    serializes the failures instead.
    """
    if not all_failed(results):
        merged = [t for r in results if isinstance(r, list) for t in r]
        merged.sort(key=lambda t: (t.ear, t.conduction, t.frequency, t.masking))
        return serialize_digitized(merged)
    return serialize_failures([r for r in results if isinstance(r, DigitizationFailure)])


def all_failed(results: list[AudiogramResult]) -> bool:
    return not any(isinstance(r, list) for r in results)


def _load_detections(source: DetectionSource) -> Optional[DetectionDocument]:
    if isinstance(source, DetectionDocument):
        return source
    if source == "builtin":
        return None
    return ingest_detections(Path(source).read_text(encoding="utf-8"))


def _split_by_orientation(lines: list[Line]) -> tuple[list[Line], list[Line]]:
    vertical = [l for l in lines if abs(line_angle(l)) > 45.0]
    horizontal = [l for l in lines if abs(line_angle(l)) <= 45.0]
    return vertical, horizontal


def _expand_box(box: BoundingBox, margin: float, width: int, height: int) -> BoundingBox:
    # integer coordinates so crop() applies exactly this region
    mx, my = margin * box.width, margin * box.height
    x0 = max(0, int(math.floor(box.x - mx)))
    y0 = max(0, int(math.floor(box.y - my)))
    x1 = min(width, int(math.ceil(box.right + mx)))
    y1 = min(height, int(math.ceil(box.bottom + my)))
    return BoundingBox(float(x0), float(y0), float(max(x1 - x0, 1)), float(max(y1 - y0, 1)))


def _grid_mesh(
    lines: list[Line],
    runs: list[list],
    min_crossings: int = 3,
    tol: float = 4.0,
) -> tuple[Optional[BoundingBox], list[Line], list[Line]]:
    """Grid lines and their bounding box, from mutual run crossings.

    Label text rows and the header rule can accumulate enough Hough
    votes to pose as lines, and ink runs can leak into label glyphs
    sitting on a line's path.  Actual grid lines are the ones whose
    inked runs cross several perpendicular inked runs; the crossing
    points themselves are grid nodes, so their hull is the grid box no
    matter how far any single run leaks.  Only runs comparable to the
    line's longest run take part: a horizontal grid line also collects
    short runs over the threshold labels left of the grid, and aligned
    digit strokes there can pose as a vertical line, so short-run
    crossings would mesh the label column into the grid.
    """
    pairs = [(l, r) for l, r in zip(lines, runs) if abs(_line_tilt(l)) <= MAX_GRID_TILT]
    if not pairs:
        return None, [], []
    lines, runs = map(list, zip(*pairs))
    frame, kept_v, kept_h = _mesh_pass(lines, runs, min_crossings, tol, (0.0, 0.0))
    if frame is None:
        return frame, kept_v, kept_h
    # Angle consensus only among first-pass survivors: on a noisy page
    # the raw line set is mostly artifacts and would own the median.
    survivors = {id(l) for l in kept_v} | {id(l) for l in kept_h}
    pairs = [(l, r) for l, r in zip(lines, runs) if id(l) in survivors]
    kept_lines, kept_runs = _angle_consensus(*map(list, zip(*pairs)))
    # Grid rows sit at one fixed pitch; a smeared label-text band can
    # pose as a full-width line but lands off that lattice, so rows are
    # kept by a largest-consistent-ladder vote before the final pass.
    kept_lines, kept_runs = _prune_row_ladder(
        kept_lines, kept_runs, frame.x + frame.width / 2.0
    )
    # Second pass with an absolute floor tied to the preliminary frame:
    # stacked symbol outlines and digit strokes build pseudo-lines whose
    # own runs are short but still sit on real grid rows, so relative
    # filtering alone lets them through.
    floors = (0.35 * frame.height, 0.35 * frame.width)
    return _mesh_pass(kept_lines, kept_runs, min_crossings, tol, floors)


def _prune_row_ladder(
    lines: list[Line], runs: list[list], mid_x: float
) -> tuple[list[Line], list[list]]:
    """Drop horizontal lines that sit off the dominant row ladder.

    Row positions must differ by whole multiples of the row pitch.  A
    label-text band can sit almost one pitch above the top row, so the
    test has to stay tighter than that near-coincidence; and detection
    jitter is per row, so each gap is judged against its predecessor
    rather than against one anchor, which would accumulate drift.  The
    longest gap-consistent chain of row positions wins; sparse meshes
    are left alone, there is no ladder to vote on yet.
    """
    row_lines = sorted(
        ((line_y_at(l, mid_x), l) for l in lines if abs(line_angle(l)) <= 45.0),
        key=lambda p: p[0],
    )
    # one candidate position per cluster of near-coincident lines, taken
    # from the strongest line so an artifact cannot displace a real row
    ys: list[float] = []
    group: list[tuple[float, Line]] = []
    for y, l in row_lines + [(float("inf"), None)]:
        if group and y - group[0][0] >= 8.0:
            ys.append(max(group, key=lambda p: p[1].votes)[0])
            group = []
        if l is not None:
            group.append((y, l))
    if len(ys) < 5:
        return lines, runs
    diffs = [b - a for a, b in zip(ys, ys[1:])]
    pitch = float(np.median(diffs))
    if pitch <= 3.0:
        return lines, runs
    tol = max(2.2, 0.08 * pitch)

    length = [1] * len(ys)
    prev = [-1] * len(ys)
    for j in range(len(ys)):
        for i in range(j):
            gap = ys[j] - ys[i]
            k = round(gap / pitch)
            if k >= 1 and abs(gap - k * pitch) <= tol and length[i] + 1 > length[j]:
                length[j] = length[i] + 1
                prev[j] = i
    end = max(range(len(ys)), key=lambda j: length[j])
    chain = []
    while end >= 0:
        chain.append(ys[end])
        end = prev[end]
    if len(chain) < 5:
        return lines, runs

    # A line stays when it is ladder-consistent with a NEIGHBORING chain
    # row.  Judging against far members would let the per-gap pitch
    # error accumulate until an off-ladder artifact slips under the
    # tolerance, so only the nearest chain row on each side votes.
    chain.sort()

    def on_ladder(y: float) -> bool:
        below = max((cy for cy in chain if cy <= y), default=None)
        above = min((cy for cy in chain if cy >= y), default=None)
        for cy in (below, above):
            if cy is None:
                continue
            k = round((y - cy) / pitch)
            if abs(k) <= 3 and abs(y - cy - k * pitch) <= max(tol, 3.0):
                return True
        return False

    keep_ids = {id(l) for y, l in row_lines if on_ladder(y)}
    kept = [
        (l, r)
        for l, r in zip(lines, runs)
        if abs(line_angle(l)) > 45.0 or id(l) in keep_ids
    ]
    return [l for l, _ in kept], [r for _, r in kept]


def _deskew_angle(lines: list[Line]) -> float:
    """Rotation correction estimated from the strongest orientation group.

    Votes separate grid lines from symbol-row artifacts far more
    reliably than geometry does on a tilted page, so the correction is
    taken from whichever orientation group holds the strongest lines,
    restricted to lines near that group's top vote count.
    """
    vertical, horizontal = _split_by_orientation(lines)

    def strongest(group: list[Line]) -> list[Line]:
        ranked = sorted(group, key=lambda l: -l.votes)
        if not ranked:
            return []
        keep = [l for l in ranked if l.votes >= 0.6 * ranked[0].votes]
        return keep[:20]

    v, h = strongest(vertical), strongest(horizontal)
    vmax = max((l.votes for l in v), default=0)
    hmax = max((l.votes for l in h), default=0)
    if vmax == 0 and hmax == 0:
        return 0.0
    if vmax >= hmax:
        return correction_angle(v, [])
    return correction_angle([], h)


def _line_tilt(line: Line) -> float:
    # deviation from the nearest axis direction, sign preserved
    a = line_angle(line)
    if a > 45.0:
        return 90.0 - a
    if a < -45.0:
        return -90.0 - a
    return a


def _angle_consensus(
    lines: list[Line], runs: list[list], tol: float = 2.0
) -> tuple[list[Line], list[list]]:
    """Drop lines tilted away from their orientation group's consensus.

    Grid lines share one orientation even on a rotated page, while a
    Hough artifact grazing a label row sits at its own odd angle and
    can chain glyph ink into a long run that passes the length floors.
    The consensus tilt is a run-length weighted median, so a handful of
    long grid lines outvote any number of short-run artifacts.
    """
    vertical, horizontal = _split_by_orientation(lines)
    weight = {
        id(l): sum(_run_length(r) for r in rs) for l, rs in zip(lines, runs)
    }
    keep: set[int] = set()
    for group in (vertical, horizontal):
        if not group:
            continue
        ranked = sorted(group, key=_line_tilt)
        total = sum(weight[id(l)] for l in ranked)
        med = _line_tilt(ranked[len(ranked) // 2])
        if total > 0:
            acc = 0.0
            for l in ranked:
                acc += weight[id(l)]
                if acc >= total / 2.0:
                    med = _line_tilt(l)
                    break
        keep.update(id(l) for l in group if abs(_line_tilt(l) - med) <= tol)
    pairs = [(l, r) for l, r in zip(lines, runs) if id(l) in keep]
    if not pairs:
        return [], []
    kept_lines, kept_runs = zip(*pairs)
    return list(kept_lines), list(kept_runs)


def _mesh_pass(
    lines: list[Line],
    runs: list[list],
    min_crossings: int,
    tol: float,
    floors: tuple[float, float],
) -> tuple[Optional[BoundingBox], list[Line], list[Line]]:
    vertical, horizontal = _split_by_orientation(lines)
    index = {id(l): i for i, l in enumerate(lines)}
    floor_by_line = [
        floors[0] if abs(line_angle(l)) > 45.0 else floors[1] for l in lines
    ]
    long_runs = [
        [
            r
            for r in rs
            if _run_length(r) >= max(floor_by_line[i], 0.45 * max(_run_length(q) for q in rs))
        ]
        if rs
        else []
        for i, rs in enumerate(runs)
    ]
    counts = [0] * len(lines)
    crossings: list[tuple[int, int, tuple[float, float]]] = []
    for v in vertical:
        for h in horizontal:
            p = intersection(v, h)
            if p is None:
                continue
            iv, ih = index[id(v)], index[id(h)]
            if _within_runs(p, long_runs[iv], tol) and _within_runs(p, long_runs[ih], tol):
                counts[iv] += 1
                counts[ih] += 1
                crossings.append((iv, ih, p))
    kept_v = [l for l in vertical if counts[index[id(l)]] >= min_crossings]
    kept_h = [l for l in horizontal if counts[index[id(l)]] >= min_crossings]
    if len(kept_v) < 2 or len(kept_h) < 2:
        return None, kept_v, kept_h
    points = [
        p
        for iv, ih, p in crossings
        if counts[iv] >= min_crossings and counts[ih] >= min_crossings
    ]
    xs = [p[0] for p in points]
    ys = [p[1] for p in points]
    x0, y0 = max(0.0, min(xs)), max(0.0, min(ys))
    frame = BoundingBox(x0, y0, max(xs) - x0, max(ys) - y0)
    return frame, kept_v, kept_h


def _run_length(run) -> float:
    (x0, y0), (x1, y1) = run
    return math.hypot(x1 - x0, y1 - y0)


def _within_runs(p: tuple[float, float], rs: list, tol: float) -> bool:
    px, py = p
    for (x0, y0), (x1, y1) in rs:
        if (
            min(x0, x1) - tol <= px <= max(x0, x1) + tol
            and min(y0, y1) - tol <= py <= max(y0, y1) + tol
        ):
            return True
    return False


def _digitize_audiogram(
    image: Raster,
    box: BoundingBox,
    cfg: PipelineConfig,
    external: Optional[DetectionDocument],
) -> AudiogramResult:
    region = _expand_box(box, CROP_MARGIN, image.width, image.height)
    sub = crop(image, region)

    def hough_gated(r: Raster) -> tuple[list[Line], BitRaster]:
        params = cfg.hough or HoughParams(
            vote_threshold=max(60, round(0.15 * min(r.width, r.height)))
        )
        thr = cfg.binarize_threshold
        bits = _despeckle(binarize(r, otsu_threshold(r) if thr is None else thr))
        lines = filter_nonperpendicular(hough_lines(bits, params), r.width, r.height)
        return [l for l in lines if abs(_line_tilt(l)) <= MAX_GRID_TILT], bits

    def detect_lines(r: Raster) -> tuple[Optional[BoundingBox], list[Line], list[Line]]:
        lines, bits = hough_gated(r)
        return _grid_mesh(lines, line_ink_runs(bits, lines))

    # Deskew from raw line angles before any meshing: on a rotated page
    # long grid lines drift across quantized Hough bins and their ink
    # runs fragment, so run-based filtering only works once straightened.
    raw_lines, _ = hough_gated(sub)
    correction = _deskew_angle(raw_lines)
    if correction != 0.0:
        sub = rotate(sub, correction)
    frame, vertical, horizontal = detect_lines(sub)

    # a shrunken scan is blown back up to nominal scale, where the grid
    # row pitch is known and glyph templates match without rescaling
    rescale = 1.0
    page_scale = 1.0
    if frame is not None and len(horizontal) >= 2:
        page_scale = _estimate_scale(horizontal, sub.width / 2.0)
        if abs(page_scale - 1.0) > 0.05:
            rescale = 1.0 / page_scale
            data = cv2.resize(
                sub.data,
                (max(1, round(sub.width * rescale)), max(1, round(sub.height * rescale))),
                interpolation=cv2.INTER_CUBIC,
            )
            sub = Raster(data)
            frame, vertical, horizontal = detect_lines(sub)

    if frame is None or (len(vertical) < 2 and len(horizontal) < 2):
        return DigitizationFailure(
            "too_few_lines",
            detail=f"{len(vertical) + len(horizontal)} usable grid lines after deskew",
        )
    if len(vertical) < 2:
        return DigitizationFailure(
            "too_few_lines", axis="frequency", detail="fewer than 2 vertical grid lines"
        )
    if len(horizontal) < 2:
        return DigitizationFailure(
            "too_few_lines", axis="threshold", detail="fewer than 2 horizontal grid lines"
        )
    lines = vertical + horizontal
    if external is not None:
        symbols, labels = _clip_external(
            external, region, correction, rescale, sub.width, sub.height
        )
    else:
        scale = _estimate_scale(horizontal, sub.width / 2.0)
        thr = cfg.binarize_threshold
        thr = otsu_threshold(sub) if thr is None else thr
        symbols = _match_symbols(
            sub, thr, frame, vertical, horizontal, -correction, page_scale, rescale
        )
        labels = _match_labels(
            sub, thr, frame, scale, vertical, horizontal,
            -correction, page_scale, rescale,
        )

    mid_x = frame.x + frame.width / 2.0
    mid_y = frame.y + frame.height / 2.0
    freq_slope = _mesh_octave_slope(
        _dedupe_coords([line_x_at(l, mid_y) for l in vertical])
    )
    db_slope = _mesh_decibel_slope(
        _dedupe_coords([line_y_at(l, mid_x) for l in horizontal])
    )
    try:
        fa = associate_labels(labels, lines, "frequency", cfg.label_tol)
        ta = associate_labels(labels, lines, "threshold", cfg.label_tol)
        freq_assocs = (
            _axis_lock(fa, freq_slope, 0.12, "frequency")
            if freq_slope is not None
            else _axis_consensus(fa, 0.12)
        )
        db_assocs = (
            _axis_lock(ta, db_slope, 3.0, "threshold")
            if db_slope is not None
            else _axis_consensus(ta, 3.0)
        )
        transforms = derive_transforms(freq_assocs, db_assocs)
    except TooFewLabels as e:
        return DigitizationFailure("too_few_labels", axis=e.axis, detail=str(e))
    except DegenerateTransform as e:
        return DigitizationFailure("transform_degenerate", detail=str(e))
    return build_digitized(symbols, transforms, cfg.snap, vertical_lines=vertical)


def _mesh_decibel_slope(row_ys: list[float]) -> Optional[float]:
    """dB-per-pixel implied by the grid rows, or None.

    Chart rows sit one 10 dB band apart, so a uniform row ladder fixes
    the threshold-axis slope without reading a single label.  Gaps that
    are clean multiples of the pitch (a dropped row) are tolerated;
    irregular spacing means the mesh is not trustworthy here.
    """
    if len(row_ys) < 3:
        return None
    diffs = [b - a for a, b in zip(row_ys, row_ys[1:])]
    pitch = float(np.median(diffs))
    if pitch <= 3.0:
        return None
    for d in diffs:
        steps = max(1.0, round(d / pitch))
        if abs(d - steps * pitch) > 0.2 * pitch:
            return None
    return 10.0 / pitch


def _mesh_octave_slope(col_xs: list[float]) -> Optional[float]:
    """Octaves-per-pixel implied by the grid columns, or None.

    The full chart has one column per standard frequency, and their
    octave positions form a fixed unevenly spaced pattern.  When the
    detected columns reproduce that pattern the frequency-axis slope
    follows from the outermost pair alone; any other column count or
    arrangement gives no structural claim.
    """
    if len(col_xs) != len(STANDARD_FREQUENCIES):
        return None
    span = col_xs[-1] - col_xs[0]
    if span <= 0:
        return None
    octaves = [octave(f) for f in STANDARD_FREQUENCIES]
    for x, o in zip(col_xs, octaves):
        if abs((x - col_xs[0]) / span - o / octaves[-1]) > 0.03:
            return None
    return octaves[-1] / span


def _axis_lock(
    assocs: list[AxisAssociation], slope: float, tol: float, axis: str
) -> list[AxisAssociation]:
    """Offset vote under a mesh-implied slope.

    With the slope pinned by grid geometry each label reading votes for
    one axis offset; correct readings agree, misreads scatter.  The
    densest vote cluster sets the offset when enough labels back it.
    Misreads can pair up by coincidence (two wrong values whose gap
    happens to match their row gap), so a lone pair is only trusted
    when it is all the axis has.
    """
    if len(assocs) < 2:
        raise TooFewLabels(axis, f"{axis} axis has {len(assocs)} association(s); need 2")
    votes = sorted(
        (a.value - slope * a.coordinate, a.coordinate) for a in assocs
    )
    best: list[tuple[float, float]] = []
    for i in range(len(votes)):
        lo = votes[i][0]
        members = [v for v in votes[i:] if v[0] - lo <= 2.0 * tol]
        if len(members) > len(best):
            best = members
    need = 2 if len(assocs) == 2 else 3
    if len(best) < need:
        raise TooFewLabels(
            axis,
            f"{axis} labels do not agree on a common axis offset"
            f" ({len(best)} of {len(assocs)} concur)",
        )
    offset = float(np.median([v[0] for v in best]))
    lo_c = min(v[1] for v in best)
    hi_c = max(v[1] for v in best)
    return [
        AxisAssociation(lo_c, slope * lo_c + offset),
        AxisAssociation(hi_c, slope * hi_c + offset),
    ]


def _axis_consensus(
    assocs: list[AxisAssociation], tol: float
) -> list[AxisAssociation]:
    """Median-slope filter over label associations.

    A misread label (a dropped sign, a superstring match) disagrees with
    the affine relation every other association on the axis shares.  The
    median pairwise slope and median intercept ignore such outliers;
    the surviving extremes carry fitted values, so one bad label can
    never become an anchor.
    """
    if len(assocs) < 3:
        return assocs

    def fit(points: list[AxisAssociation]) -> Optional[tuple[float, float]]:
        slopes = [
            (b.value - a.value) / (b.coordinate - a.coordinate)
            for i, a in enumerate(points)
            for b in points[i + 1:]
            if b.coordinate != a.coordinate
        ]
        if not slopes:
            return None
        s = float(np.median(slopes))
        if s == 0.0:
            return None
        return s, float(np.median([a.value - s * a.coordinate for a in points]))

    first = fit(assocs)
    if first is None:
        return assocs
    s, b = first
    kept = [a for a in assocs if abs(a.value - (s * a.coordinate + b)) <= tol]
    if len(kept) < 2:
        return kept
    if len(kept) < len(assocs):
        refit = fit(kept)
        if refit is not None:
            s, b = refit
    lo = min(kept, key=lambda a: a.coordinate)
    hi = max(kept, key=lambda a: a.coordinate)
    return [
        AxisAssociation(lo.coordinate, s * lo.coordinate + b),
        AxisAssociation(hi.coordinate, s * hi.coordinate + b),
    ]


def _despeckle(bits: BitRaster, min_area: int = 3) -> BitRaster:
    """Drop ink specks too small to be part of any glyph or line.

    Salt noise survives binarization as 1-2 px components and would
    otherwise both vote in the line detector and pollute ink runs.
    """
    n, labels, stats, _ = cv2.connectedComponentsWithStats(
        bits.bits.astype(np.uint8), connectivity=8
    )
    if n <= 1:
        return bits
    keep = stats[:, cv2.CC_STAT_AREA] >= min_area
    keep[0] = False
    return BitRaster(keep[labels])


def _estimate_scale(horizontal: list[Line], center_x: float) -> float:
    """Render scale from the grid row pitch (rows sit 10 dB apart)."""
    ys = sorted(line_y_at(l, center_x) for l in horizontal)
    diffs = [b - a for a, b in zip(ys, ys[1:]) if b - a > 3.0]
    if not diffs:
        return 1.0
    pitch = float(np.median(diffs))
    return min(2.0, max(0.3, pitch / NOMINAL_ROW_PITCH))


def _grow_clamped(box: BoundingBox, pad: float, width: int, height: int) -> BoundingBox:
    x0, y0 = max(0.0, box.x - pad), max(0.0, box.y - pad)
    x1 = min(float(width), box.right + pad)
    y1 = min(float(height), box.bottom + pad)
    return BoundingBox(x0, y0, x1 - x0, y1 - y0)


def _inverted_gray(sub: Raster, thr: int) -> tuple[np.ndarray, BitRaster]:
    """Ink-positive grayscale plus the despeckled binary ink mask.

    Grayscale keeps the sub-pixel stroke shading that survives a
    downsample-upsample round trip, which hard binarization destroys;
    pixels that the despeckle pass identified as noise are blanked.
    """
    raw = binarize(sub, thr)
    keep = _despeckle(raw)
    gray = (255.0 - sub.data.astype(np.float32)) / 255.0
    gray[raw.bits & ~keep.bits] = 0.0
    return gray, keep


def _warp_same(img: np.ndarray, angle: float) -> np.ndarray:
    """rotate() geometry on a float array, zero fill, same canvas."""
    if angle == 0.0:
        return img
    m = rotation_matrix(img.shape[1], img.shape[0], angle)
    return cv2.warpAffine(
        img, m, (img.shape[1], img.shape[0]),
        flags=cv2.INTER_LINEAR, borderMode=cv2.BORDER_CONSTANT, borderValue=0.0,
    )


def _degrade_bitmap(
    bits: np.ndarray, rot: float, scale: float, rescale: float
) -> np.ndarray:
    """Push a nominal-scale bitmap through the page's resampling chain.

    The ink being matched was rotated, area-downsampled, deskewed, and
    cubically upsampled before it reaches the matcher.  A template only
    correlates well when its strokes carry the same width and smear, so
    it takes the same trip; the small final blur absorbs the sub-pixel
    phase that differs per glyph instance.
    """
    t = bits.astype(np.float32)
    th, tw = t.shape
    pad = int(np.ceil(np.hypot(th, tw))) + 6
    canvas = np.zeros((pad, pad), np.float32)
    oy, ox = (pad - th) // 2, (pad - tw) // 2
    canvas[oy:oy + th, ox:ox + tw] = t
    out = _warp_same(canvas, rot)
    n1 = max(1, round(pad * scale))
    if n1 != pad:
        out = cv2.resize(out, (n1, n1), interpolation=cv2.INTER_AREA)
    out = _warp_same(out, -rot)
    n2 = max(1, round(n1 * rescale))
    if n2 != n1:
        out = cv2.resize(out, (n2, n2), interpolation=cv2.INTER_CUBIC)
    out = cv2.GaussianBlur(np.clip(out, 0.0, None), (0, 0), DEGRADE_SIGMA)
    ys, xs = np.nonzero(out > 0.05)
    if ys.size == 0:
        return out
    return out[ys.min():ys.max() + 1, xs.min():xs.max() + 1]


def _chain_key(rot: float, scale: float, rescale: float) -> tuple[float, float, float]:
    return (round(rot * 4.0) / 4.0, round(scale, 2), round(rescale, 2))


def _chain_is_identity(rot: float, scale: float, rescale: float) -> bool:
    return abs(rot) < 0.25 and abs(scale - 1.0) <= 0.05 and rescale == 1.0


@lru_cache(maxsize=32)
def _degraded_glyphs(
    rot: float, scale: float, rescale: float
) -> tuple[tuple[str, np.ndarray], ...]:
    return tuple(
        (t.glyph, _degrade_bitmap(t.bitmap.bits, rot, scale, rescale))
        for t in build_templates()
    )


def _match_symbols(
    sub: Raster,
    thr: int,
    frame: BoundingBox,
    vertical: list[Line],
    horizontal: list[Line],
    rot_est: float = 0.0,
    scale: float = 1.0,
    rescale: float = 1.0,
) -> list[Detection]:
    """Find measurement symbols by degraded-template NCC at grid sites.

    Symbols can only sit where the chart puts them: on a frequency
    column at a multiple of the threshold step, which is every row line
    and every midpoint between adjacent rows.  Bone-conduction marks may
    additionally sit beside their column, offset toward the tested ear.
    Each such site is scored against every admissible glyph template and
    the best scorer above the floor wins the site; larger templates get
    a rank bonus so a fragment (a bracket riding an X flank) cannot
    outbid the glyph that explains the whole blob.  Correlation is taken
    at local maxima only, so the tail of a peak between sites never
    leaks into one.

    Grid lines are erased first (long straight strokes are never symbol
    ink) so crossings do not mimic brackets.  The score floor relaxes on
    degraded pages, where even a faithful template tops out well below a
    clean match.
    """
    gray, keep = _inverted_gray(sub, thr)
    key = _chain_key(rot_est, scale, rescale)
    templates = _degraded_glyphs(*key)
    floor = SYMBOL_SCORE if _chain_is_identity(*key) else SYMBOL_SCORE_DEGRADED
    dim = max(max(tpl.shape) for _, tpl in templates)
    suppressed = suppress_grid_lines(keep.bits.astype(np.uint8), dim) > 0
    gray = gray.copy()
    gray[keep.bits & ~suppressed] = 0.0
    # bone-conduction glyphs sit offset from their column, so pad the frame
    grown = _grow_clamped(frame, 14.0, sub.width, sub.height)
    window, bx, by = _band(gray, grown.x, grown.y, grown.right, grown.bottom)
    if window.size == 0:
        return []
    mid_x = frame.x + frame.width / 2.0
    mid_y = frame.y + frame.height / 2.0
    columns = _dedupe_coords([line_x_at(l, mid_y) for l in vertical])
    rows = _dedupe_coords([line_y_at(l, mid_x) for l in horizontal])
    site_ys = rows + [(a + b) / 2.0 for a, b in zip(rows, rows[1:])]
    unit = max(0.2, scale * rescale)
    bone_off = BONE_MARK_OFFSET * unit
    lo, hi = frame.x - 2.0, frame.x + frame.width + 2.0
    glyphs = {g: (parse_measurement_glyph(g), tpl) for g, tpl in templates}
    maps = {g: ncc_response(window, tpl) for g, (_, tpl) in glyphs.items()}

    def measure(img, tpl, px, py):
        th_t, tw_t = tpl.shape
        win = img[py: py + th_t, px: px + tw_t]
        if win.shape != tpl.shape:
            return None
        ink = float(win.sum()) / (float(tpl.sum()) + 1e-9)
        ncx, ncy = round(px + tw_t / 2.0), round(py + th_t / 2.0)
        site = img[max(0, ncy - 9): ncy + 10, max(0, ncx - 9): ncx + 10]
        cover = float(win[tpl > 0.05].sum()) / (float(site.sum()) + 1e-9)
        return ink, cover

    # every admissible (site, glyph) pairing above the floor is a
    # candidate; a site takes all glyphs, an offset site only the
    # bone glyphs of the ear the offset points toward
    cands = []
    for yi, sy in enumerate(site_ys):
        for ci, col in enumerate(columns):
            for off, ear in ((0.0, None), (bone_off, "left"), (-bone_off, "right")):
                sx = col + off
                if not lo <= sx <= hi:
                    continue
                cell = (ci, yi, 0 if ear is None else (1 if ear == "left" else -1))
                for name, (mt, tpl) in glyphs.items():
                    if ear is not None and (mt.conduction != "bone" or mt.ear != ear):
                        continue
                    res = maps[name]
                    if res is None:
                        continue
                    th_t, tw_t = tpl.shape
                    x0 = round(sx - tw_t / 2.0 - bx) - SYMBOL_SITE_TOL
                    y0 = round(sy - th_t / 2.0 - by) - SYMBOL_SITE_TOL
                    span = 2 * SYMBOL_SITE_TOL + 1
                    patch = res[max(0, y0): y0 + span, max(0, x0): x0 + span]
                    if patch.size == 0:
                        continue
                    iy, ix = np.unravel_index(np.argmax(patch), patch.shape)
                    score = float(patch[iy, ix])
                    if score < floor:
                        continue
                    px, py = max(0, x0) + ix, max(0, y0) + iy
                    got = measure(window, tpl, px, py)
                    if got is None:
                        continue
                    rank = score - SITE_INK_BALANCE * abs(math.log(got[0] + 1e-9))
                    cands.append((rank, score, cell, mt, tpl, px, py))

    # greedy acceptance on a shrinking residual: each accepted match
    # claims its ink, so fragments of an already-explained glyph fail
    # the ink and coverage gates no matter how well they correlated
    cands.sort(key=lambda c: (-c[0], c[5], c[6]))

    def support(tpl, px, py) -> np.ndarray:
        m = np.zeros(window.shape, np.bool_)
        m[py: py + tpl.shape[0], px: px + tpl.shape[1]] = tpl > 0.05
        return m

    # Greedy fill, then a backfitting prune, iterated to a fixpoint.
    # Greedy order alone can admit a fragment reading before the glyph
    # that owns the ink (an X flank scores well as a bracket at the
    # neighboring bone-offset site), and several fragments can carve up
    # a glyph so thoroughly that the true match fails its ink gates.
    # The prune drops any match keeping less than a minimum share of
    # ink no other accepted match explains, weakest first; pruned
    # matches are banned and the fill runs again on the freed ink.
    accepted: list[tuple[float, float, object, np.ndarray, int, int]] = []
    banned: set[tuple] = set()
    for _ in range(4):
        residual = window.copy()
        for _, _, _, _, tpl, px, py in accepted:
            patch = residual[py: py + tpl.shape[0], px: px + tpl.shape[1]]
            patch[tpl > 0.05] = 0.0
        taken = {cell for _, _, cell, _, _, _, _ in accepted}
        filled = False
        for rank, score, cell, mt, tpl, px, py in cands:
            if cell in taken or (cell, px, py, id(tpl)) in banned:
                continue
            got = measure(residual, tpl, px, py)
            if got is None:
                continue
            ink, cover = got
            if not SITE_INK_BAND[0] <= ink <= SITE_INK_BAND[1]:
                continue
            if cover < SITE_COVER_MIN:
                continue
            taken.add(cell)
            patch = residual[py: py + tpl.shape[0], px: px + tpl.shape[1]]
            patch[tpl > 0.05] = 0.0
            accepted.append((rank, score, cell, mt, tpl, px, py))
            filled = True

        pruned = False
        while len(accepted) > 1:
            masks = [support(tpl, px, py) for _, _, _, _, tpl, px, py in accepted]
            worst, worst_frac = None, 1.0
            for i in range(len(accepted)):
                others = np.zeros(window.shape, np.bool_)
                for j, m in enumerate(masks):
                    if j != i:
                        others |= m
                claimed = float(window[masks[i]].sum())
                frac = (
                    float(window[masks[i] & ~others].sum()) / claimed
                    if claimed > 0
                    else 0.0
                )
                if frac < worst_frac:
                    worst, worst_frac = i, frac
            if worst is None or worst_frac >= SITE_UNIQUE_MIN:
                break
            _, _, cell, _, tpl, px, py = accepted[worst]
            banned.add((cell, px, py, id(tpl)))
            del accepted[worst]
            pruned = True
        if not (filled or pruned):
            break

    out: list[Detection] = []
    for rank, score, cell, mt, tpl, px, py in accepted:
        box = BoundingBox(
            float(px + bx), float(py + by), float(tpl.shape[1]), float(tpl.shape[0])
        )
        out.append(Detection(box, "symbol", min(score, 1.0), measurement=mt))
    return out


_DB_STRINGS = tuple(str(v) for v in range(THRESHOLD_MIN_DB, THRESHOLD_MAX_DB + 1, THRESHOLD_STEP_DB))


def _frequency_strings() -> tuple[str, ...]:
    out = set()
    for f in STANDARD_FREQUENCIES:
        khz = f"{f / 1000:g}"
        out.update((str(f), khz))
        if f >= 1000:
            out.add(khz + "K")
    return tuple(sorted(out))


_FREQ_STRINGS = _frequency_strings()


@lru_cache(maxsize=4096)
def _text_template(
    text: str, rot: float = 0.0, scale: float = 1.0, rescale: float = 1.0
) -> tuple[np.ndarray, float]:
    """Degraded text template and the nominal bitmap's ink mass."""
    bm = text_bitmap(text)
    return _degrade_bitmap(bm, rot, scale, rescale), float(bm.sum())


def _band(
    img: np.ndarray, x0: float, y0: float, x1: float, y1: float
) -> tuple[np.ndarray, int, int]:
    h, w = img.shape
    ix0, iy0 = max(0, int(math.floor(x0))), max(0, int(math.floor(y0)))
    ix1, iy1 = min(w, int(math.ceil(x1))), min(h, int(math.ceil(y1)))
    if ix1 <= ix0 or iy1 <= iy0:
        return img[:0, :0], 0, 0
    return img[iy0:iy1, ix0:ix1], ix0, iy0


def _dedupe_coords(coords: list[float], min_gap: float = 8.0) -> list[float]:
    # real grid gaps are never under ~20 px at nominal scale; anything
    # closer is one physical line split across quantized angle bins
    out: list[float] = []
    for c in sorted(coords):
        if not out or c - out[-1] >= min_gap:
            out.append(c)
    return out


def _read_label_slot(
    gray: np.ndarray,
    ink_ii: np.ndarray,
    strings: tuple[str, ...],
    key: tuple[float, float, float],
    anchor_x: float,
    anchor_y: float,
    align: str,
    floor: float,
    jitter: int = 4,
) -> Optional[tuple[float, str, BoundingBox]]:
    """Best-scoring string for one label slot, or None if nothing reads.

    Every candidate string is evaluated at the same aligned placement
    (right-aligned for threshold labels, centered for frequency ones).
    Raw correlation cannot separate a substring from its superstring:
    a right-aligned short string sits pixel-perfect on the tail of a
    longer one.  Candidates are ranked by correlation minus penalties
    for window ink that disagrees with the template's own mass and for
    slot ink the placement leaves unexplained, so a string only wins
    when it accounts for the whole slot.
    """

    def region_ink(px: int, py: int, w: int, h: int) -> float:
        px, py = max(0, px), max(0, py)
        qx = min(ink_ii.shape[1] - 1, px + w)
        qy = min(ink_ii.shape[0] - 1, py + h)
        if qx <= px or qy <= py:
            return 0.0
        return float(ink_ii[qy, qx] - ink_ii[py, qx] - ink_ii[qy, px] + ink_ii[py, px])

    shapes = [_text_template(t, *key)[0].shape for t in strings]
    th_max = max(s[0] for s in shapes)
    tw_max = max(s[1] for s in shapes)
    if align == "right":
        sx0 = int(round(anchor_x - tw_max)) - jitter
        sy0 = int(round(anchor_y - th_max / 2.0)) - jitter
    else:
        sx0 = int(round(anchor_x - tw_max / 2.0)) - jitter
        sy0 = int(round(anchor_y - th_max)) - jitter
    slot_ink = region_ink(sx0, sy0, tw_max + 2 * jitter, th_max + 2 * jitter)

    best: Optional[tuple[float, float, str, BoundingBox]] = None
    for text in strings:
        tpl, tink = _text_template(text, *key)
        th, tw = tpl.shape
        if align == "right":
            x0 = anchor_x - tw
            y0 = anchor_y - th / 2.0
        else:
            x0 = anchor_x - tw / 2.0
            y0 = anchor_y - th
        ix0 = int(round(x0)) - jitter
        iy0 = int(round(y0)) - jitter
        window, bx, by = _band(
            gray, ix0, iy0, ix0 + tw + 2 * jitter, iy0 + th + 2 * jitter
        )
        if window.shape[0] < th or window.shape[1] < tw:
            continue
        res = cv2.matchTemplate(window, tpl, cv2.TM_CCOEFF_NORMED)
        _, score, _, loc = cv2.minMaxLoc(res)
        if score < floor:
            continue
        px, py = bx + loc[0], by + loc[1]
        wink = region_ink(px, py, tw, th)
        if not 0.45 * tink <= wink <= 2.2 * tink:
            continue
        unexplained = max(0.0, 1.0 - wink / (slot_ink + 1e-9))
        rank = (
            float(score)
            - LABEL_INK_BALANCE * abs(math.log(wink / tink + 1e-9))
            - LABEL_SLOT_COVER * unexplained**2
        )
        cand = (
            rank, float(score), text,
            BoundingBox(float(px), float(py), float(tw), float(th)),
        )
        if best is None or cand[0] > best[0]:
            best = cand
    if best is None:
        return None
    return best[1], best[2], best[3]


def _match_labels(
    sub: Raster,
    thr: int,
    frame: BoundingBox,
    scale: float,
    vertical: list[Line],
    horizontal: list[Line],
    rot_est: float = 0.0,
    chain_scale: float = 1.0,
    rescale: float = 1.0,
) -> list[Detection]:
    """Read axis labels at the slots the grid mesh implies.

    Threshold labels sit right-aligned in the margin left of each grid
    row; frequency labels sit centered above each vertical line.  Each
    slot is classified independently against the axis vocabulary, which
    keeps a misread at one slot from disturbing any other.
    """
    gray, keep = _inverted_gray(sub, thr)
    key = _chain_key(rot_est, chain_scale, rescale)
    floor = LABEL_SCORE if _chain_is_identity(*key) else LABEL_SCORE_DEGRADED
    ink_ii = cv2.integral(keep.bits.astype(np.float32))
    out: list[Detection] = []
    right_edge = frame.x - 8.0 * scale
    rows = _dedupe_coords([line_y_at(l, frame.x) for l in horizontal])
    for y in rows:
        got = _read_label_slot(
            gray, ink_ii, _DB_STRINGS, key, right_edge, y, "right", floor
        )
        if got is not None:
            score, text, box = got
            out.append(
                Detection(box, "axis_label", min(score, 1.0),
                          label_text=text, label=parse_label_text(text))
            )
    top_edge = frame.y - 10.0 * scale
    cols = _dedupe_coords([line_x_at(l, frame.y) for l in vertical])
    for x in cols:
        got = _read_label_slot(
            gray, ink_ii, _FREQ_STRINGS, key, x, top_edge, "center", floor
        )
        if got is not None:
            score, text, box = got
            out.append(
                Detection(box, "axis_label", min(score, 1.0),
                          label_text=text, label=parse_label_text(text))
            )
    return out


def _clip_external(
    doc: DetectionDocument,
    region: BoundingBox,
    correction: float,
    rescale: float,
    width: int,
    height: int,
) -> tuple[list[Detection], list[Detection]]:
    """Map externally supplied detections into the deskewed crop frame."""
    symbols: list[Detection] = []
    labels: list[Detection] = []
    for d in doc.detections:
        if d.kind == "audiogram" or not region.contains(*d.box.center):
            continue
        moved = _map_external_box(d.box, region, correction, rescale, width, height)
        if moved is None:
            continue
        if d.kind == "symbol":
            symbols.append(replace(d, box=moved))
        else:
            labels.append(replace(d, box=moved))
    return symbols, labels


def _map_external_box(
    box: BoundingBox,
    region: BoundingBox,
    correction: float,
    rescale: float,
    width: int,
    height: int,
) -> Optional[BoundingBox]:
    # rotation happens at pre-rescale crop size, magnification after
    bw, bh = round(width / rescale), round(height / rescale)
    corners = (
        (box.x, box.y),
        (box.right, box.y),
        (box.x, box.bottom),
        (box.right, box.bottom),
    )
    pts = [
        rotate_point(x - region.x, y - region.y, bw, bh, correction)
        for x, y in corners
    ]
    xs = [p[0] * rescale for p in pts]
    ys = [p[1] * rescale for p in pts]
    x0, y0 = max(0.0, min(xs)), max(0.0, min(ys))
    x1, y1 = min(float(width), max(xs)), min(float(height), max(ys))
    if x1 - x0 < 1e-6 or y1 - y0 < 1e-6:
        return None
    return BoundingBox(x0, y0, x1 - x0, y1 - y0)
