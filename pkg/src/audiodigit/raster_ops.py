"""Image decoding and pixel-level primitives.

Grayscale rasters, binarization, rotation about the image center, and
cropping.  All operations are pure: they return new rasters and never
mutate their inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import cv2
import numpy as np

from .core_model import BoundingBox

WHITE = 255


class DecodeError(ValueError):
    pass


class EmptyCrop(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Raster:
    """Grayscale image; data is a height x width uint8 array."""

    data: np.ndarray

    def __post_init__(self):
        if self.data.ndim != 2 or self.data.dtype != np.uint8:
            raise ValueError("raster data must be a 2-D uint8 array")

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]


@dataclass(frozen=True, eq=False)
class BitRaster:
    """Binary image; bits is a height x width bool array, True = ink."""

    bits: np.ndarray

    def __post_init__(self):
        if self.bits.ndim != 2 or self.bits.dtype != np.bool_:
            raise ValueError("bit raster data must be a 2-D bool array")

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]


def decode_image(data: bytes) -> Raster:
    """Decode PNG or JPEG bytes into a grayscale raster."""
    buf = np.frombuffer(data, np.uint8)
    img = cv2.imdecode(buf, cv2.IMREAD_GRAYSCALE)
    if img is None:
        raise DecodeError("input bytes are not a decodable PNG or JPEG image")
    return Raster(img)


def encode_png(r: Raster) -> bytes:
    """Encode a raster as PNG bytes (deterministic for identical input)."""
    ok, buf = cv2.imencode(".png", r.data)
    if not ok:
        raise ValueError("PNG encoding failed")
    return buf.tobytes()


def otsu_threshold(r: Raster) -> int:
    """Per-image binarization threshold; ink = intensities strictly below it."""
    t, _ = cv2.threshold(r.data, 0, 255, cv2.THRESH_BINARY + cv2.THRESH_OTSU)
    # cv2 puts foreground at intensity > t; dark ink is the complement,
    # so binarize(r, t + 1) selects exactly the pixels cv2 calls background
    return int(t) + 1


def binarize(r: Raster, threshold: int) -> BitRaster:
    """Threshold a raster: bit = (intensity < threshold)."""
    if not 0 <= threshold <= 255:
        raise ValueError(f"threshold out of range: {threshold}")
    return BitRaster(r.data < threshold)


def rotation_matrix(width: int, height: int, angle: float) -> np.ndarray:
    """2x3 affine matrix rotating image content by `angle` degrees.

    Positive angles turn content clockwise on screen (y axis points down),
    so a horizontal line rotated by +a acquires direction angle +a.
    """
    center = ((width - 1) / 2.0, (height - 1) / 2.0)
    return cv2.getRotationMatrix2D(center, -angle, 1.0)


def rotate(r: Raster, angle: float) -> Raster:
    """Rotate about the image center; bilinear resampling, white fill."""
    if not -45.0 <= angle <= 45.0:
        raise ValueError(f"rotation angle out of range: {angle}")
    if angle == 0.0:
        return Raster(r.data.copy())
    m = rotation_matrix(r.width, r.height, angle)
    out = cv2.warpAffine(
        r.data,
        m,
        (r.width, r.height),
        flags=cv2.INTER_LINEAR,
        borderMode=cv2.BORDER_CONSTANT,
        borderValue=WHITE,
    )
    return Raster(out)


def rotate_point(x: float, y: float, width: int, height: int, angle: float) -> tuple[float, float]:
    """Where rotate() moves the point (x, y); exact same matrix math."""
    if angle == 0.0:
        return (x, y)
    m = rotation_matrix(width, height, angle)
    return (
        m[0, 0] * x + m[0, 1] * y + m[0, 2],
        m[1, 0] * x + m[1, 1] * y + m[1, 2],
    )


def crop(r: Raster, box: BoundingBox) -> Raster:
    """Extract the intersection of `box` with the raster bounds."""
    x0 = max(0, int(round(box.x)))
    y0 = max(0, int(round(box.y)))
    x1 = min(r.width, int(round(box.x + box.width)))
    y1 = min(r.height, int(round(box.y + box.height)))
    if x1 <= x0 or y1 <= y0:
        raise EmptyCrop(f"box {box} does not intersect a {r.width}x{r.height} raster")
    return Raster(r.data[y0:y1, x0:x1].copy())
