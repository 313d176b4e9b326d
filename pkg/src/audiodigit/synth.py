"""Synthetic audiology-report renderer with exhaustive ground truth.

Renders report pages (grid, axis labels, measurement glyphs, a header
block) from a declarative spec, degrades them with controlled
perturbations, and returns pixel-exact ground truth: a Fig.-4-shaped
annotation, axis transforms, and every symbol center.  Corpora built
from this module stand in for scanned clinical reports during
verification, so every coordinate here must round-trip through the
digitization pipeline exactly.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field, replace
from pathlib import Path

import cv2
import numpy as np

from .core_model import (
    STANDARD_FREQUENCIES,
    THRESHOLD_MAX_DB,
    THRESHOLD_MIN_DB,
    AnnotatedReport,
    AnnotationLabel,
    AnnotationSymbol,
    AudiogramAnnotation,
    BoundingBox,
    Corner,
    MeasurementType,
    Threshold,
    glyph_name,
    serialize_annotation,
    serialize_digitized,
)
from .glyphs import GLYPH_SIZE, glyph_bitmap, text_bitmap
from .grid_mapper import AffineMap, AxisTransforms, octave
from .raster_ops import Raster, rotate, rotate_point

DIFFICULTIES = ("clean", "moderate", "hard")
LAYOUTS = ("single_plot", "two_plots")
FREQUENCY_VARIANTS = ("hz", "k", "khz")

# page is letter-shaped at roughly 100 dpi
PAGE_WIDTH = 850
PAGE_HEIGHT = 1100
PLOT_TOP = 150
SINGLE_PLOT_LEFT = 200
TWO_PLOT_LEFT = 80
TWO_PLOT_SPACING = 120  # room for the second plot's dB labels

# annotation box margins around the grid rectangle; the left and top
# margins cover the label text, the right and bottom cover glyph ink
BOX_MARGIN_LEFT = 44
BOX_MARGIN_TOP = 26
BOX_MARGIN_RIGHT = 10
BOX_MARGIN_BOTTOM = 10

DB_LABEL_GAP = 8  # label right edge to grid left edge
FREQ_LABEL_GAP = 10  # label bottom edge to grid top edge
TEXT_SCALE = 2
SYMBOL_HALF = GLYPH_SIZE // 2
BONE_OFFSET_PX = 10

OCTAVE_LABELED = (125, 250, 500, 1000, 2000, 4000, 8000)


class SpecError(ValueError):
    """A report spec asks for something the declared grid cannot hold."""


@dataclass(frozen=True)
class GridSpec:
    """Chart geometry: which lines exist and how many pixels apart."""

    frequencies: tuple[int, ...] = STANDARD_FREQUENCIES
    db_range: tuple[int, int] = (THRESHOLD_MIN_DB, THRESHOLD_MAX_DB)
    # one octave of frequency axis, one 10 dB band of threshold axis
    cell_size: tuple[float, float] = (76.0, 28.0)

    def __post_init__(self):
        if len(self.frequencies) < 2 or list(self.frequencies) != sorted(set(self.frequencies)):
            raise ValueError("grid frequencies must be ascending and distinct")
        if self.frequencies[0] <= 0:
            raise ValueError("grid frequencies must be positive")
        if self.db_range[0] >= self.db_range[1]:
            raise ValueError(f"empty dB range: {self.db_range}")
        if min(self.cell_size) <= 0:
            raise ValueError(f"non-positive cell size: {self.cell_size}")

    @property
    def octave_span(self) -> float:
        return octave(self.frequencies[-1]) - octave(self.frequencies[0])

    @property
    def width(self) -> int:
        return round(self.cell_size[0] * self.octave_span)

    @property
    def height(self) -> int:
        return round(self.cell_size[1] / 10.0 * (self.db_range[1] - self.db_range[0]))


@dataclass(frozen=True)
class LabelStyle:
    """Which grid lines carry printed labels, and in what notation."""

    labeled_frequencies: tuple[int, ...] = OCTAVE_LABELED
    db_step: int = 10
    frequency_variant: str = "hz"

    def __post_init__(self):
        if self.frequency_variant not in FREQUENCY_VARIANTS:
            raise ValueError(f"unknown frequency variant: {self.frequency_variant!r}")
        if self.db_step <= 0:
            raise ValueError(f"non-positive label step: {self.db_step}")


@dataclass(frozen=True)
class Perturbations:
    rotation: float = 0.0  # degrees, applied to the whole page
    noise: float = 0.0  # salt-and-pepper pixel fraction
    downsample: float = 1.0  # uniform scale factor
    line_thickness: int = 1  # grid lines only; glyph stroke is fixed
    bone_offset_convention: bool = False

    def __post_init__(self):
        if not -10.0 <= self.rotation <= 10.0:
            raise ValueError(f"rotation out of range: {self.rotation}")
        if not 0.0 <= self.noise < 1.0:
            raise ValueError(f"noise fraction out of range: {self.noise}")
        if not 0.25 < self.downsample <= 1.0:
            raise ValueError(f"downsample factor out of range: {self.downsample}")
        if self.line_thickness < 1:
            raise ValueError(f"line thickness must be >= 1: {self.line_thickness}")


@dataclass(frozen=True)
class ReportSpec:
    seed: int
    layout: str = "single_plot"
    grid: GridSpec = field(default_factory=GridSpec)
    label_style: LabelStyle = field(default_factory=LabelStyle)
    thresholds: tuple[Threshold, ...] = ()
    perturbations: Perturbations = field(default_factory=Perturbations)

    def __post_init__(self):
        if self.layout not in LAYOUTS:
            raise ValueError(f"unknown layout: {self.layout!r}")


@dataclass(frozen=True)
class GroundTruth:
    """Everything the renderer knows about where things ended up.

    All coordinates are continuous post-perturbation image coordinates
    (pixel index i spans [i, i+1), so inked pixel centers sit at
    half-integers).  `transforms` belongs to the first audiogram and is
    exact whenever rotation is zero; under rotation go through
    measurement_at, which undoes the perturbations first.
    """

    annotation: AnnotatedReport
    transforms: AxisTransforms
    symbol_centers: tuple[tuple[tuple[float, float], Threshold], ...]
    audiogram_transforms: tuple[AxisTransforms, ...]
    rotation: float
    full_size: tuple[int, int]  # pre-downsample page (width, height)
    scale: tuple[float, float]  # actual per-axis downsample ratios


def measurement_at(gt: GroundTruth, x: float, y: float, audiogram: int = 0) -> tuple[float, float]:
    """Map a post-perturbation pixel to (frequency Hz, threshold dB).

    Inverts the downsample and rotation before applying the stored
    transforms, so it is exact for any perturbation combination.
    """
    sx, sy = gt.scale
    w, h = gt.full_size
    ix, iy = x / sx - 0.5, y / sy - 0.5
    ix, iy = rotate_point(ix, iy, w, h, -gt.rotation)
    t = gt.audiogram_transforms[audiogram]
    return (t.frequency_at((ix + 0.5) * sx), t.threshold_at((iy + 0.5) * sy))


def frequency_label_text(frequency: int, variant: str) -> str:
    """The printed form of a frequency label in the given notation."""
    if variant == "hz":
        return str(frequency)
    if variant == "khz":
        return f"{frequency / 1000:g}"
    if variant == "k":
        return f"{frequency / 1000:g}K" if frequency >= 1000 else str(frequency)
    raise ValueError(f"unknown frequency variant: {variant!r}")


# ---------------------------------------------------------------------------
# spec sampling


def _level_curve(rng: random.Random):
    """A plausible hearing-loss shape: base + tilt + optional 4 kHz notch."""
    base = rng.randrange(0, 55, 5)
    slope = rng.choice((-5, 0, 0, 5, 10))
    notch = rng.choice((0, 0, 0, 20, 30))

    def level(f: int) -> int:
        v = base + slope * (octave(f) - 3.0)
        if notch and f in (3000, 4000, 6000):
            v += notch if f == 4000 else notch / 2
        v = 5 * round(v / 5)
        return int(min(110, max(THRESHOLD_MIN_DB, v)))

    return level


def _x_slot(t: Threshold, bone_offset: bool) -> int:
    # symbols sharing a slot are drawn at the same x for a given frequency
    if t.conduction == "air" or not bone_offset:
        return 0
    return 1 if t.ear == "left" else -1


def _separate_collisions(
    thresholds: list[Threshold], layout: str, bone_offset: bool
) -> list[Threshold]:
    """Push same-column thresholds at least 10 dB apart.

    Coincident glyph centers are unrecoverable by any detector, and even
    a 5 dB neighbor leaks enough ink into a 17 px match window to sink
    small glyphs, so clean specs keep same-column symbols a full glyph
    height apart.  Groups hold at most four members, so the bounded
    shuffle below always fits the chart.
    """
    groups: dict[tuple[str, int, int], list[int]] = {}
    for i, t in enumerate(thresholds):
        # a single-plot chart holds both ears, so ears collide there too
        plot = t.ear if layout == "two_plots" else ""
        groups.setdefault((plot, t.frequency, _x_slot(t, bone_offset)), []).append(i)
    out = list(thresholds)
    for members in groups.values():
        if len(members) < 2:
            continue
        members.sort(key=lambda i: (thresholds[i].threshold, thresholds[i].key))
        levels = []
        for i in members:
            want = out[i].threshold
            if levels and want < levels[-1] + 10:
                want = levels[-1] + 10
            levels.append(want)
        if levels[-1] > 110:
            levels = [v - (levels[-1] - 110) for v in levels]
        for i, v in zip(members, levels):
            out[i] = replace(out[i], threshold=int(v))
    return out


def _sample_ear(rng: random.Random, ear: str, difficulty: str) -> list[Threshold]:
    level = _level_curve(rng)
    n_air = rng.randint(7, len(STANDARD_FREQUENCIES))
    air_freqs = sorted(rng.sample(STANDARD_FREQUENCIES, n_air))
    masked_air = rng.random() < 0.25
    out = []
    for f in air_freqs:
        v = level(f) + rng.choice((-5, 0, 0, 5))
        v = int(min(110, max(THRESHOLD_MIN_DB, v)))
        response = True if difficulty == "clean" else rng.random() >= 0.05
        out.append(Threshold(f, v, ear, "air", masked_air, response))
    if rng.random() < 0.6:
        bone_pool = [f for f in (250, 500, 1000, 2000, 3000, 4000) if f in STANDARD_FREQUENCIES]
        bone_freqs = sorted(rng.sample(bone_pool, rng.randint(3, len(bone_pool))))
        masked_bone = rng.random() < 0.25
        gap_floor = 5 if difficulty == "clean" else 0
        for f in bone_freqs:
            gap = rng.randrange(gap_floor, 25, 5)
            v = int(min(110, max(THRESHOLD_MIN_DB, level(f) - gap)))
            response = True if difficulty == "clean" else rng.random() >= 0.05
            out.append(Threshold(f, v, ear, "bone", masked_bone, response))
    return out


def sample_spec(seed: int, difficulty: str) -> ReportSpec:
    """Draw a deterministic report spec at the given difficulty.

    Clean specs carry identity perturbations and guarantee no two
    symbols render at coincident centers; moderate and hard specs admit
    progressively stronger rotation, noise, and downsampling.
    """
    if difficulty not in DIFFICULTIES:
        raise ValueError(f"unknown difficulty: {difficulty!r}")
    # string seeding hashes via sha512, stable across processes
    rng = random.Random(f"{difficulty}:{seed}")
    layout = rng.choice(LAYOUTS)
    cell = (76.0, 28.0) if layout == "single_plot" else (50.0, 28.0)
    grid = GridSpec(cell_size=cell)
    variants = FREQUENCY_VARIANTS if layout == "single_plot" else ("hz", "k")
    style = LabelStyle(frequency_variant=rng.choice(variants))

    thresholds = _sample_ear(rng, "right", difficulty) + _sample_ear(rng, "left", difficulty)

    if difficulty == "clean":
        perturb = Perturbations()
        thresholds = _separate_collisions(thresholds, layout, perturb.bone_offset_convention)
    elif difficulty == "moderate":
        perturb = Perturbations(
            rotation=rng.uniform(-3.0, 3.0),
            noise=rng.uniform(0.0, 0.005),
            downsample=rng.uniform(0.75, 1.0),
            line_thickness=rng.choice((1, 2)),
            bone_offset_convention=rng.random() < 0.5,
        )
    else:
        perturb = Perturbations(
            rotation=rng.uniform(-10.0, 10.0),
            noise=rng.uniform(0.0, 0.02),
            downsample=rng.uniform(0.4, 1.0),
            line_thickness=rng.choice((1, 2, 3)),
            bone_offset_convention=rng.random() < 0.5,
        )
    return ReportSpec(
        seed=seed,
        layout=layout,
        grid=grid,
        label_style=style,
        thresholds=tuple(thresholds),
        perturbations=perturb,
    )


# ---------------------------------------------------------------------------
# rendering


def _stamp(page: np.ndarray, bitmap: np.ndarray, ox: int, oy: int) -> None:
    h, w = bitmap.shape
    ph, pw = page.shape
    if ox < 0 or oy < 0 or ox + w > pw or oy + h > ph:
        # clip instead of failing; extreme rotations may push labels out
        x0, y0 = max(0, ox), max(0, oy)
        x1, y1 = min(pw, ox + w), min(ph, oy + h)
        if x1 <= x0 or y1 <= y0:
            return
        view = bitmap[y0 - oy : y1 - oy, x0 - ox : x1 - ox]
        page[y0:y1, x0:x1][view] = 0
        return
    page[oy : oy + h, ox : ox + w][bitmap] = 0


@dataclass
class _PlotFrame:
    """One audiogram's draw-frame geometry before perturbation."""

    x0: int
    y0: int
    grid: GridSpec
    transforms: AxisTransforms
    corners: list[Corner]
    labels: list[AnnotationLabel]
    symbols: list[AnnotationSymbol]
    centers: list[tuple[tuple[float, float], Threshold]]
    box: BoundingBox


def _draw_plot(
    page: np.ndarray,
    x0: int,
    y0: int,
    spec: ReportSpec,
    thresholds: list[Threshold],
) -> _PlotFrame:
    grid = spec.grid
    style = spec.label_style
    w, h = grid.width, grid.height
    o0 = octave(grid.frequencies[0])
    o1 = octave(grid.frequencies[-1])
    transforms = AxisTransforms(
        y_to_threshold=AffineMap(y0 + 0.5, grid.db_range[0], y0 + h + 0.5, grid.db_range[1]),
        x_to_octave=AffineMap(x0 + 0.5, o0, x0 + w + 0.5, o1),
    )
    thick = spec.perturbations.line_thickness

    for f in grid.frequencies:
        col = int(round(transforms.x_of_frequency(f) - 0.5))
        cv2.line(page, (col, y0), (col, y0 + h), 0, thick)
    db_lines = range(grid.db_range[0], grid.db_range[1] + 1, 10)
    for db in db_lines:
        row = int(round(transforms.y_of_threshold(db) - 0.5))
        cv2.line(page, (x0, row), (x0 + w, row), 0, thick)

    labels: list[AnnotationLabel] = []
    for db in range(grid.db_range[0], grid.db_range[1] + 1, style.db_step):
        text = text_bitmap(str(db), TEXT_SCALE)
        row = int(round(transforms.y_of_threshold(db) - 0.5))
        ox = x0 - DB_LABEL_GAP - text.shape[1]
        oy = row - text.shape[0] // 2
        _stamp(page, text, ox, oy)
        labels.append(AnnotationLabel(BoundingBox(ox, oy, text.shape[1], text.shape[0]), str(db)))
    for f in style.labeled_frequencies:
        if f not in grid.frequencies:
            continue
        value = frequency_label_text(f, style.frequency_variant)
        text = text_bitmap(value, TEXT_SCALE)
        col = int(round(transforms.x_of_frequency(f) - 0.5))
        ox = col - text.shape[1] // 2
        oy = y0 - FREQ_LABEL_GAP - text.shape[0]
        _stamp(page, text, ox, oy)
        labels.append(AnnotationLabel(BoundingBox(ox, oy, text.shape[1], text.shape[0]), value))

    symbols: list[AnnotationSymbol] = []
    centers: list[tuple[tuple[float, float], Threshold]] = []
    for t in thresholds:
        cx = transforms.x_of_frequency(t.frequency)
        if spec.perturbations.bone_offset_convention and t.conduction == "bone":
            cx += BONE_OFFSET_PX if t.ear == "left" else -BONE_OFFSET_PX
        cy = transforms.y_of_threshold(t.threshold)
        ox = int(round(cx - 0.5)) - SYMBOL_HALF
        oy = int(round(cy - 0.5)) - SYMBOL_HALF
        name = glyph_name(MeasurementType(t.ear, t.conduction, t.masking))
        _stamp(page, glyph_bitmap(name), ox, oy)
        box = BoundingBox(ox, oy, GLYPH_SIZE, GLYPH_SIZE)
        symbols.append(AnnotationSymbol(box, t.response, MeasurementType(t.ear, t.conduction, t.masking)))
        centers.append((box.center, t))

    corners = [
        Corner(x0 + 0.5, y0 + 0.5, "top", "left", grid.frequencies[0], grid.db_range[0]),
        Corner(x0 + w + 0.5, y0 + 0.5, "top", "right", grid.frequencies[-1], grid.db_range[0]),
        Corner(x0 + 0.5, y0 + h + 0.5, "bottom", "left", grid.frequencies[0], grid.db_range[1]),
        Corner(x0 + w + 0.5, y0 + h + 0.5, "bottom", "right", grid.frequencies[-1], grid.db_range[1]),
    ]
    box = BoundingBox(
        x0 - BOX_MARGIN_LEFT,
        y0 - BOX_MARGIN_TOP,
        w + BOX_MARGIN_LEFT + BOX_MARGIN_RIGHT,
        h + BOX_MARGIN_TOP + BOX_MARGIN_BOTTOM,
    )
    return _PlotFrame(x0, y0, grid, transforms, corners, labels, symbols, centers, box)


def _map_point(
    p: tuple[float, float],
    size: tuple[int, int],
    rotation: float,
    sx: float,
    sy: float,
) -> tuple[float, float]:
    x, y = p
    if rotation != 0.0:
        x, y = rotate_point(x - 0.5, y - 0.5, size[0], size[1], rotation)
        x, y = x + 0.5, y + 0.5
    return (x * sx, y * sy)


def _map_box(
    b: BoundingBox,
    size: tuple[int, int],
    rotation: float,
    sx: float,
    sy: float,
    bounds: tuple[float, float],
) -> BoundingBox:
    pts = [
        _map_point(p, size, rotation, sx, sy)
        for p in ((b.x, b.y), (b.right, b.y), (b.x, b.bottom), (b.right, b.bottom))
    ]
    xs = [p[0] for p in pts]
    ys = [p[1] for p in pts]
    # rotation can push label boxes past the page edge; keep the visible part
    x0 = min(max(0.0, min(xs)), bounds[0])
    y0 = min(max(0.0, min(ys)), bounds[1])
    x1 = max(x0, min(bounds[0], max(xs)))
    y1 = max(y0, min(bounds[1], max(ys)))
    return BoundingBox(x0, y0, x1 - x0, y1 - y0)


def _split_thresholds(spec: ReportSpec) -> list[list[Threshold]]:
    if spec.layout == "single_plot":
        return [list(spec.thresholds)]
    return [
        [t for t in spec.thresholds if t.ear == "right"],
        [t for t in spec.thresholds if t.ear == "left"],
    ]


def render(spec: ReportSpec) -> tuple[Raster, GroundTruth]:
    """Render a report page and its pixel-exact ground truth."""
    grid = spec.grid
    for t in spec.thresholds:
        if t.frequency not in grid.frequencies:
            raise SpecError(f"frequency {t.frequency} Hz is not on the grid")
        if not grid.db_range[0] <= t.threshold <= grid.db_range[1]:
            raise SpecError(f"threshold {t.threshold} dB is outside {grid.db_range}")

    if spec.layout == "single_plot":
        origins = [(SINGLE_PLOT_LEFT, PLOT_TOP)]
    else:
        second = TWO_PLOT_LEFT + grid.width + TWO_PLOT_SPACING
        origins = [(TWO_PLOT_LEFT, PLOT_TOP), (second, PLOT_TOP)]
    page_w = max(PAGE_WIDTH, origins[-1][0] + grid.width + 60)
    page_h = max(PAGE_HEIGHT, PLOT_TOP + grid.height + 80)
    page = np.full((page_h, page_w), 255, np.uint8)

    # header: a patient-number block and a separator rule
    header_rng = random.Random(f"header:{spec.seed}")
    header = text_bitmap(f"{header_rng.randrange(10000, 100000)}-{header_rng.randrange(1, 10)}", TEXT_SCALE)
    _stamp(page, header, 60, 26)
    cv2.line(page, (40, 70), (page_w - 40, 70), 0, 1)

    frames = [
        _draw_plot(page, x0, y0, spec, plot_thresholds)
        for (x0, y0), plot_thresholds in zip(origins, _split_thresholds(spec))
    ]

    perturb = spec.perturbations
    raster = Raster(page)
    if perturb.rotation != 0.0:
        raster = rotate(raster, perturb.rotation)
    if perturb.noise > 0.0:
        rng = np.random.default_rng([spec.seed & 0x7FFFFFFFFFFFFFFF, 7])
        data = raster.data.copy()
        count = int(round(perturb.noise * data.size))
        if count:
            idx = rng.choice(data.size, size=count, replace=False)
            data.reshape(-1)[idx] = rng.integers(0, 2, size=count, dtype=np.uint8) * 255
        raster = Raster(data)
    sx = sy = 1.0
    if perturb.downsample < 1.0:
        new_w = max(1, round(page_w * perturb.downsample))
        new_h = max(1, round(page_h * perturb.downsample))
        data = cv2.resize(raster.data, (new_w, new_h), interpolation=cv2.INTER_AREA)
        sx, sy = new_w / page_w, new_h / page_h
        raster = Raster(data)

    size = (page_w, page_h)
    bounds = (float(raster.width), float(raster.height))
    rot = perturb.rotation

    def map_point(p):
        return _map_point(p, size, rot, sx, sy)

    def map_box(b):
        return _map_box(b, size, rot, sx, sy, bounds)

    audiograms = []
    stored: list[AxisTransforms] = []
    centers: list[tuple[tuple[float, float], Threshold]] = []
    for frame in frames:
        corners = [
            Corner(*map_point((c.x, c.y)), c.vertical, c.horizontal, c.frequency, c.threshold)
            for c in frame.corners
        ]
        labels = [AnnotationLabel(map_box(l.box), l.value) for l in frame.labels]
        symbols = [AnnotationSymbol(map_box(s.box), s.response, s.measurement) for s in frame.symbols]
        audiograms.append(
            AudiogramAnnotation(map_box(frame.box), tuple(corners), tuple(labels), tuple(symbols))
        )
        t = frame.transforms
        stored.append(
            AxisTransforms(
                y_to_threshold=AffineMap(
                    t.y_to_threshold.a0 * sy, t.y_to_threshold.v0,
                    t.y_to_threshold.a1 * sy, t.y_to_threshold.v1,
                ),
                x_to_octave=AffineMap(
                    t.x_to_octave.a0 * sx, t.x_to_octave.v0,
                    t.x_to_octave.a1 * sx, t.x_to_octave.v1,
                ),
            )
        )
        centers.extend((map_point(c), t) for c, t in frame.centers)

    gt = GroundTruth(
        annotation=AnnotatedReport(tuple(audiograms)),
        transforms=stored[0],
        symbol_centers=tuple(centers),
        audiogram_transforms=tuple(stored),
        rotation=rot,
        full_size=size,
        scale=(sx, sy),
    )
    return raster, gt


# ---------------------------------------------------------------------------
# corpus emission


def emit_corpus(n: int, difficulty: str, seed: int, out_dir) -> list[dict]:
    """Write n rendered reports plus ground truth under out_dir.

    Emits report_NNNN.png, a Fig.-4-shaped annotation document, and a
    digitized truth document per report, plus manifest.json listing the
    image/annotation pairs.  Re-running with the same arguments rewrites
    byte-identical files.
    """
    if n <= 0:
        raise ValueError(f"corpus size must be positive: {n}")
    if difficulty not in DIFFICULTIES:
        raise ValueError(f"unknown difficulty: {difficulty!r}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = []
    for i in range(n):
        spec = sample_spec(seed + i, difficulty)
        raster, gt = render(spec)
        stem = f"report_{i:04d}"
        ok, encoded = cv2.imencode(".png", raster.data)
        if not ok:
            raise OSError(f"PNG encoding failed for {stem}")
        (out / f"{stem}.png").write_bytes(encoded.tobytes())
        (out / f"{stem}.annotation.json").write_text(
            serialize_annotation(gt.annotation), encoding="utf-8"
        )
        truth = sorted(spec.thresholds, key=lambda t: (t.ear, t.conduction, t.frequency, t.masking))
        (out / f"{stem}.digitized.json").write_text(serialize_digitized(truth), encoding="utf-8")
        records.append(
            {
                "image_path": f"{stem}.png",
                "annotation_path": f"{stem}.annotation.json",
                "difficulty": difficulty,
                "seed": seed + i,
            }
        )
    (out / "manifest.json").write_text(json.dumps(records, indent=2) + "\n", encoding="utf-8")
    return records
