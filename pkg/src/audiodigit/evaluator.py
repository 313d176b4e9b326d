"""Set-based scoring of digitized reports against ground truth.

Precision counts detected thresholds that exist in the truth set,
recall counts truth thresholds that were detected; membership is exact
equality of (ear, conduction, masking, frequency, threshold).  A
detected threshold with the wrong dB at an existing key is therefore a
false positive and a false negative at once.  The response flag is not
part of membership: it never survives the digitized document schema.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

from .core_model import Detection, AnnotatedReport, Threshold, _dump
from .grid_mapper import DegenerateTransform, AffineMap, AxisTransforms, octave
from .threshold_builder import SnapConfig, build_digitized

Key = tuple[str, int, str, bool]


class DegenerateCorners(ValueError):
    """Annotation corners cannot anchor a usable axis transform."""


@dataclass(frozen=True)
class ReportScore:
    """Per-report precision/recall; precision is None when undefined.

    Precision has no value when nothing was detected against a
    non-empty truth set (0/0 in the paper's equation); the None sentinel
    keeps such reports out of corpus precision means without rewarding
    total failure with a fake 1.0.
    """

    precision: float | None
    recall: float
    perfect: bool
    db_distances: tuple[int, ...] = ()


@dataclass(frozen=True)
class CorpusSummary:
    mean_precision: float
    std_precision: float
    mean_recall: float
    std_recall: float
    perfect_fraction: float
    grid_failure_fraction: float
    db_distance_histogram: dict[int, int]


def _members(thresholds: Iterable[Threshold]) -> set[tuple[Key, int]]:
    return {(t.key, t.threshold) for t in thresholds}


def score_report(detected: Iterable[Threshold], actual: Iterable[Threshold]) -> ReportScore:
    """Score a detected threshold set against the actual one."""
    d = _members(detected)
    a = _members(actual)
    inter = len(d & a)
    if d:
        precision = inter / len(d)
    else:
        precision = 1.0 if not a else None
    recall = inter / len(a) if a else 1.0

    d_by_key: dict[Key, set[int]] = {}
    a_by_key: dict[Key, set[int]] = {}
    for key, db in d:
        d_by_key.setdefault(key, set()).add(db)
    for key, db in a:
        a_by_key.setdefault(key, set()).add(db)
    distances = []
    for key in sorted(d_by_key.keys() & a_by_key.keys()):
        # mismatched dBs at a shared key pair up in sorted order; leftovers
        # are plain FP/FN and carry no distance
        d_miss = sorted(d_by_key[key] - a_by_key[key])
        a_miss = sorted(a_by_key[key] - d_by_key[key])
        distances.extend(abs(x - y) for x, y in zip(d_miss, a_miss))
    return ReportScore(
        precision=precision,
        recall=recall,
        perfect=precision == 1.0 and recall == 1.0,
        db_distances=tuple(distances),
    )


def _mean_std(values: list[float]) -> tuple[float, float]:
    if not values:
        return (0.0, 0.0)
    mean = sum(values) / len(values)
    var = sum((v - mean) ** 2 for v in values) / len(values)
    return (mean, var**0.5)


def summarize_corpus(scores: list[ReportScore], failures: int) -> CorpusSummary:
    """Aggregate per-report scores plus a grid-extraction failure count."""
    if failures < 0:
        raise ValueError(f"negative failure count: {failures}")
    mean_p, std_p = _mean_std([s.precision for s in scores if s.precision is not None])
    mean_r, std_r = _mean_std([s.recall for s in scores])
    perfect = sum(1 for s in scores if s.perfect)
    total = failures + len(scores)
    histogram: dict[int, int] = {}
    for s in scores:
        for d in s.db_distances:
            # thresholds are 5 dB quantized, so distances already sit on bins
            bin_ = int(5 * round(d / 5))
            histogram[bin_] = histogram.get(bin_, 0) + 1
    return CorpusSummary(
        mean_precision=mean_p,
        std_precision=std_p,
        mean_recall=mean_r,
        std_recall=std_r,
        perfect_fraction=perfect / len(scores) if scores else 0.0,
        grid_failure_fraction=failures / total if total else 0.0,
        db_distance_histogram=dict(sorted(histogram.items())),
    )


def serialize_summary(summary: CorpusSummary) -> str:
    """Canonical text form of a corpus summary."""
    return _dump(
        {
            "meanPrecision": summary.mean_precision,
            "stdPrecision": summary.std_precision,
            "meanRecall": summary.mean_recall,
            "stdRecall": summary.std_recall,
            "perfectFraction": summary.perfect_fraction,
            "gridFailureFraction": summary.grid_failure_fraction,
            "dbDistanceHistogram": [
                {"distance": k, "count": v} for k, v in summary.db_distance_histogram.items()
            ],
        }
    )


def _corner_transforms(annotation) -> AxisTransforms:
    corners = annotation.corners
    if (
        len(corners) < 2
        or len({c.x for c in corners}) < 2
        or len({c.y for c in corners}) < 2
        or len({c.frequency for c in corners}) < 2
        or len({c.threshold for c in corners}) < 2
    ):
        raise DegenerateCorners(f"{len(corners)} corners cannot anchor both axes")
    # the most-separated pair along each 1-D axis is its min/max corner
    cx0 = min(corners, key=lambda c: (c.x, c.y))
    cx1 = max(corners, key=lambda c: (c.x, c.y))
    cy0 = min(corners, key=lambda c: (c.y, c.x))
    cy1 = max(corners, key=lambda c: (c.y, c.x))
    try:
        return AxisTransforms(
            y_to_threshold=AffineMap(cy0.y, cy0.threshold, cy1.y, cy1.threshold),
            x_to_octave=AffineMap(cx0.x, octave(cx0.frequency), cx1.x, octave(cx1.frequency)),
        )
    except DegenerateTransform as exc:
        raise DegenerateCorners(str(exc)) from exc


def ground_truth_from_annotation(
    ann: AnnotatedReport, config: SnapConfig | None = None
) -> list[Threshold]:
    """Reconstruct the threshold set an annotation describes.

    Corner pixels anchor per-axis affine transforms; every annotated
    symbol's box center runs through the same snap path the pipeline
    uses, then duplicates collapse.  Exact for unrotated annotations.
    """
    config = config or SnapConfig()
    out: list[Threshold] = []
    for audiogram in ann.audiograms:
        transforms = _corner_transforms(audiogram)
        detections = [
            Detection(s.box, "symbol", 1.0, measurement=s.measurement, response=s.response)
            for s in audiogram.symbols
        ]
        out.extend(build_digitized(detections, transforms, config))
    return out
