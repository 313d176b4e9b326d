"""Domain vocabulary for audiogram digitization.

Measurement taxonomy, geometric primitives, the two JSON document schemas
(annotation and digitized-threshold lists), and the structured failure
model shared by every pipeline stage.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Literal, Optional

Ear = Literal["left", "right"]
Conduction = Literal["air", "bone"]
Axis = Literal["frequency", "threshold"]
FailureStage = Literal[
    "no_audiogram_found", "too_few_labels", "too_few_lines", "transform_degenerate"
]

STANDARD_FREQUENCIES: tuple[int, ...] = (
    125, 250, 500, 750, 1000, 1500, 2000, 3000, 4000, 6000, 8000,
)
THRESHOLD_MIN_DB = -10
THRESHOLD_MAX_DB = 120
THRESHOLD_STEP_DB = 5

CORNER_VERTICAL_POSITIONS = ("top", "bottom")
CORNER_HORIZONTAL_POSITIONS = ("left", "right")


class UnknownGlyph(ValueError):
    pass


class UnparsableLabel(ValueError):
    pass


class SchemaError(ValueError):
    """Document violates a schema; `path` locates the first offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass(frozen=True)
class MeasurementType:
    """One of the 8 symbol classes: (ear, conduction, masking)."""

    ear: Ear
    conduction: Conduction
    masking: bool


# glyph name -> class; the inverse must stay a bijection
GLYPHS: dict[str, MeasurementType] = {
    "cross": MeasurementType("left", "air", False),
    "circle": MeasurementType("right", "air", False),
    "square": MeasurementType("left", "air", True),
    "triangle": MeasurementType("right", "air", True),
    "gt": MeasurementType("left", "bone", False),
    "lt": MeasurementType("right", "bone", False),
    "rbracket": MeasurementType("left", "bone", True),
    "lbracket": MeasurementType("right", "bone", True),
}

_GLYPH_BY_TYPE: dict[MeasurementType, str] = {mt: name for name, mt in GLYPHS.items()}


def parse_measurement_glyph(name: str) -> MeasurementType:
    """Map a canonical glyph name (cross, circle, ...) to its class."""
    try:
        return GLYPHS[name]
    except KeyError:
        raise UnknownGlyph(f"unknown glyph name: {name!r}") from None


def glyph_name(mt: MeasurementType) -> str:
    """Inverse of parse_measurement_glyph."""
    try:
        return _GLYPH_BY_TYPE[mt]
    except KeyError:
        raise UnknownGlyph(f"no glyph for {mt!r}") from None


@dataclass(frozen=True)
class BoundingBox:
    x: float
    y: float
    width: float
    height: float

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"degenerate box: {self.width}x{self.height}")
        if self.x < 0 or self.y < 0:
            raise ValueError(f"negative box origin: ({self.x}, {self.y})")

    @property
    def center(self) -> tuple[float, float]:
        return (self.x + self.width / 2, self.y + self.height / 2)

    @property
    def right(self) -> float:
        return self.x + self.width

    @property
    def bottom(self) -> float:
        return self.y + self.height

    def contains(self, px: float, py: float) -> bool:
        # closed box: boundary points count as inside
        return self.x <= px <= self.right and self.y <= py <= self.bottom


@dataclass(frozen=True)
class LabelValue:
    axis: Axis
    value: float  # Hz on the frequency axis, dB on the threshold axis


def _frequency_variants() -> dict[str, int]:
    table: dict[str, int] = {}
    for f in STANDARD_FREQUENCIES:
        table[str(f)] = f
        khz = f"{f / 1000:g}"  # "0.25", "1.5", "8", ...
        table[khz] = f
        if f >= 1000:
            table[khz + "K"] = f
    return table


_FREQUENCY_VARIANTS = _frequency_variants()


def parse_label_text(text: str) -> LabelValue:
    """Map a printed axis-label string to its canonical Hz or dB value.

    Frequency variants cover plain Hz ("250"), kHz decimals ("0.25", "1.5"),
    and K-suffixed kHz ("4K", case-insensitive).  Any leftover integer that
    is a multiple of 5 inside the chart range parses as a dB value.
    """
    t = text.strip()
    f = _FREQUENCY_VARIANTS.get(t) or _FREQUENCY_VARIANTS.get(t.upper())
    if f is not None:
        return LabelValue("frequency", float(f))
    try:
        db = int(t)
    except ValueError:
        raise UnparsableLabel(f"not a recognized axis label: {text!r}") from None
    if db % THRESHOLD_STEP_DB == 0 and THRESHOLD_MIN_DB <= db <= THRESHOLD_MAX_DB:
        return LabelValue("threshold", float(db))
    raise UnparsableLabel(f"not a recognized axis label: {text!r}")


@dataclass(frozen=True)
class Threshold:
    """A single digitized hearing threshold."""

    frequency: int
    threshold: int
    ear: Ear
    conduction: Conduction
    masking: bool
    response: bool = True

    def __post_init__(self):
        if self.frequency not in STANDARD_FREQUENCIES:
            raise ValueError(f"non-standard frequency: {self.frequency}")
        if self.threshold % THRESHOLD_STEP_DB != 0:
            raise ValueError(f"threshold not a multiple of 5: {self.threshold}")

    @property
    def key(self) -> tuple:
        # identity for dedup and for set-based scoring
        return (self.ear, self.frequency, self.conduction, self.masking)


@dataclass(frozen=True)
class Detection:
    """A located chart element: audiogram box, axis label, or symbol."""

    box: BoundingBox
    kind: Literal["audiogram", "axis_label", "symbol"]
    confidence: float
    label_text: Optional[str] = None  # axis_label only: printed string
    label: Optional[LabelValue] = None  # axis_label only: parsed value
    measurement: Optional[MeasurementType] = None  # symbol only
    response: bool = True  # symbol only

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence out of range: {self.confidence}")
        if self.kind == "axis_label" and (self.label is None or self.label_text is None):
            raise ValueError("axis_label detection requires label_text and label")
        if self.kind == "symbol" and self.measurement is None:
            raise ValueError("symbol detection requires a measurement type")

    @property
    def center(self) -> tuple[float, float]:
        return self.box.center


@dataclass(frozen=True)
class DigitizationFailure:
    """Typed reason an audiogram could not be digitized."""

    stage: FailureStage
    axis: Optional[Axis] = None
    detail: str = ""


@dataclass(frozen=True)
class Corner:
    """An annotated audiogram corner with its chart coordinates."""

    x: float
    y: float
    vertical: str  # "top" | "bottom"
    horizontal: str  # "left" | "right"
    frequency: float
    threshold: float

    def __post_init__(self):
        if self.vertical not in CORNER_VERTICAL_POSITIONS:
            raise ValueError(f"bad vertical position: {self.vertical!r}")
        if self.horizontal not in CORNER_HORIZONTAL_POSITIONS:
            raise ValueError(f"bad horizontal position: {self.horizontal!r}")


@dataclass(frozen=True)
class AnnotationLabel:
    box: BoundingBox
    value: str


@dataclass(frozen=True)
class AnnotationSymbol:
    box: BoundingBox
    response: bool
    measurement: MeasurementType


@dataclass(frozen=True)
class AudiogramAnnotation:
    box: BoundingBox
    corners: tuple[Corner, ...] = ()
    labels: tuple[AnnotationLabel, ...] = ()
    symbols: tuple[AnnotationSymbol, ...] = ()


@dataclass(frozen=True)
class AnnotatedReport:
    audiograms: tuple[AudiogramAnnotation, ...]

    def __post_init__(self):
        if not 1 <= len(self.audiograms) <= 2:
            raise ValueError(f"a report holds 1 or 2 audiograms, got {len(self.audiograms)}")


# ---------------------------------------------------------------------------
# document serialization
#
# Digitized documents are a flat JSON array of
#   {frequency, threshold, masking, ear, conduction}
# objects; annotation documents are an array of one or two audiogram objects
#   {boundingBox, corners, labels, symbols}.
# Serialization is canonical (2-space indent, fixed key order) so that
# parse/serialize round-trips are byte-exact.
# ---------------------------------------------------------------------------

_JSON_KW = {"indent": 2, "ensure_ascii": False}


def _dump(obj) -> str:
    return json.dumps(obj, **_JSON_KW)


def serialize_digitized(thresholds: list[Threshold]) -> str:
    """Emit a digitized-threshold list as its JSON document."""
    items = [
        {
            "frequency": t.frequency,
            "threshold": t.threshold,
            "masking": t.masking,
            "ear": t.ear,
            "conduction": t.conduction,
        }
        for t in thresholds
    ]
    return _dump(items)


def _check_keys(obj: dict, required: tuple[str, ...], path: str) -> None:
    if not isinstance(obj, dict):
        raise SchemaError(path, f"expected object, got {type(obj).__name__}")
    for k in required:
        if k not in obj:
            raise SchemaError(f"{path}.{k}", "missing required field")
    for k in obj:
        if k not in required:
            raise SchemaError(f"{path}.{k}", "unknown field")


def _number(v, path: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise SchemaError(path, f"expected finite number, got {v!r}")
    return v


def _boolean(v, path: str) -> bool:
    if not isinstance(v, bool):
        raise SchemaError(path, f"expected boolean, got {v!r}")
    return v


def _string(v, path: str) -> str:
    if not isinstance(v, str):
        raise SchemaError(path, f"expected string, got {v!r}")
    return v


def _expect_list(v, path: str) -> list:
    if not isinstance(v, list):
        raise SchemaError(path, f"expected array, got {type(v).__name__}")
    return v


def parse_digitized(text: str) -> list[Threshold]:
    """Parse a digitized-threshold JSON document."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise SchemaError("$", f"invalid JSON: {e}") from None
    out = []
    for i, item in enumerate(_expect_list(data, "$")):
        path = f"$[{i}]"
        _check_keys(item, ("frequency", "threshold", "masking", "ear", "conduction"), path)
        freq = _number(item["frequency"], f"{path}.frequency")
        db = _number(item["threshold"], f"{path}.threshold")
        masking = _boolean(item["masking"], f"{path}.masking")
        ear = _string(item["ear"], f"{path}.ear")
        conduction = _string(item["conduction"], f"{path}.conduction")
        if ear not in ("left", "right"):
            raise SchemaError(f"{path}.ear", f"expected left/right, got {ear!r}")
        if conduction not in ("air", "bone"):
            raise SchemaError(f"{path}.conduction", f"expected air/bone, got {conduction!r}")
        if freq != int(freq) or int(freq) not in STANDARD_FREQUENCIES:
            raise SchemaError(f"{path}.frequency", f"non-standard frequency {freq!r}")
        if db != int(db) or int(db) % THRESHOLD_STEP_DB != 0:
            raise SchemaError(f"{path}.threshold", f"not a multiple of 5: {db!r}")
        out.append(Threshold(int(freq), int(db), ear, conduction, masking))
    return out


def _box_to_json(b: BoundingBox) -> dict:
    return {"x": b.x, "y": b.y, "width": b.width, "height": b.height}


def _box_from_json(obj, path: str) -> BoundingBox:
    _check_keys(obj, ("x", "y", "width", "height"), path)
    x = _number(obj["x"], f"{path}.x")
    y = _number(obj["y"], f"{path}.y")
    w = _number(obj["width"], f"{path}.width")
    h = _number(obj["height"], f"{path}.height")
    try:
        return BoundingBox(x, y, w, h)
    except ValueError as e:
        raise SchemaError(path, str(e)) from None


def serialize_annotation(report: AnnotatedReport) -> str:
    """Emit an annotated report as its JSON document (array of audiograms)."""
    doc = []
    for a in report.audiograms:
        doc.append(
            {
                "boundingBox": _box_to_json(a.box),
                "corners": [
                    {
                        "x": c.x,
                        "y": c.y,
                        "position": {"vertical": c.vertical, "horizontal": c.horizontal},
                        "frequency": c.frequency,
                        "threshold": c.threshold,
                    }
                    for c in a.corners
                ],
                "labels": [
                    {"boundingBox": _box_to_json(l.box), "value": l.value} for l in a.labels
                ],
                "symbols": [
                    {
                        "boundingBox": _box_to_json(s.box),
                        "response": s.response,
                        "measurementType": glyph_name(s.measurement),
                    }
                    for s in a.symbols
                ],
            }
        )
    return _dump(doc)


def parse_annotation(text: str) -> AnnotatedReport:
    """Parse an annotation JSON document."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise SchemaError("$", f"invalid JSON: {e}") from None
    items = _expect_list(data, "$")
    if not 1 <= len(items) <= 2:
        raise SchemaError("$", f"expected 1 or 2 audiograms, got {len(items)}")
    audiograms = []
    for i, item in enumerate(items):
        path = f"$[{i}]"
        _check_keys(item, ("boundingBox", "corners", "labels", "symbols"), path)
        box = _box_from_json(item["boundingBox"], f"{path}.boundingBox")
        corners = []
        for j, c in enumerate(_expect_list(item["corners"], f"{path}.corners")):
            cpath = f"{path}.corners[{j}]"
            _check_keys(c, ("x", "y", "position", "frequency", "threshold"), cpath)
            _check_keys(c["position"], ("vertical", "horizontal"), f"{cpath}.position")
            vert = _string(c["position"]["vertical"], f"{cpath}.position.vertical")
            horiz = _string(c["position"]["horizontal"], f"{cpath}.position.horizontal")
            try:
                corners.append(
                    Corner(
                        _number(c["x"], f"{cpath}.x"),
                        _number(c["y"], f"{cpath}.y"),
                        vert,
                        horiz,
                        _number(c["frequency"], f"{cpath}.frequency"),
                        _number(c["threshold"], f"{cpath}.threshold"),
                    )
                )
            except ValueError as e:
                raise SchemaError(cpath, str(e)) from None
        labels = []
        for j, l in enumerate(_expect_list(item["labels"], f"{path}.labels")):
            lpath = f"{path}.labels[{j}]"
            _check_keys(l, ("boundingBox", "value"), lpath)
            labels.append(
                AnnotationLabel(
                    _box_from_json(l["boundingBox"], f"{lpath}.boundingBox"),
                    _string(l["value"], f"{lpath}.value"),
                )
            )
        symbols = []
        for j, s in enumerate(_expect_list(item["symbols"], f"{path}.symbols")):
            spath = f"{path}.symbols[{j}]"
            _check_keys(s, ("boundingBox", "response", "measurementType"), spath)
            name = _string(s["measurementType"], f"{spath}.measurementType")
            try:
                mt = parse_measurement_glyph(name)
            except UnknownGlyph as e:
                raise SchemaError(f"{spath}.measurementType", str(e)) from None
            symbols.append(
                AnnotationSymbol(
                    _box_from_json(s["boundingBox"], f"{spath}.boundingBox"),
                    _boolean(s["response"], f"{spath}.response"),
                    mt,
                )
            )
        audiograms.append(
            AudiogramAnnotation(box, tuple(corners), tuple(labels), tuple(symbols))
        )
    return AnnotatedReport(tuple(audiograms))


def serialize_failures(failures: list[DigitizationFailure]) -> str:
    """Emit the failure document used when digitization yields no thresholds."""
    doc = {
        "failures": [
            {"stage": f.stage, "axis": f.axis, "detail": f.detail} for f in failures
        ]
    }
    return _dump(doc)
