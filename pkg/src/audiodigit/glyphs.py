"""Built-in glyph and bitmap-font artwork.

The eight audiological symbol glyphs are drawn programmatically on a
17 px canvas; axis-label text uses a 5x7 bitmap font.  Both the synthetic
report renderer and the template matcher consume these, which is what
makes template matching a sufficient detector for synthetic corpora.
"""

from __future__ import annotations

import cv2
import numpy as np

GLYPH_SIZE = 17
GLYPH_STROKE = 2

_S = GLYPH_SIZE
_M = GLYPH_SIZE - 1


# offsets below were tuned so the worst cross-class NCC stays under 0.65
# while every glyph still matches itself above 0.89 after a 3x3 closing


def _cross(img, t):
    cv2.line(img, (1, 1), (_M - 1, _M - 1), 255, t)
    cv2.line(img, (1, _M - 1), (_M - 1, 1), 255, t)


def _circle(img, t):
    cv2.circle(img, (_S // 2, _S // 2), 6, 255, t)


def _square(img, t):
    cv2.rectangle(img, (1, 1), (_M - 1, _M - 1), 255, t)


def _triangle(img, t):
    pts = np.array([[_S // 2, 1], [1, _M - 1], [_M - 1, _M - 1]])
    cv2.polylines(img, [pts], True, 255, t)


def _gt(img, t):
    cv2.line(img, (5, 2), (_S - 5, _S // 2), 255, t)
    cv2.line(img, (_S - 5, _S // 2), (5, _S - 3), 255, t)


def _lt(img, t):
    cv2.line(img, (_S - 5, 2), (5, _S // 2), 255, t)
    cv2.line(img, (5, _S // 2), (_S - 5, _S - 3), 255, t)


def _rbracket(img, t):
    x = _S - 6
    cv2.line(img, (x, 2), (x, _S - 3), 255, t)
    cv2.line(img, (x - 4, 2), (x, 2), 255, t)
    cv2.line(img, (x - 4, _S - 3), (x, _S - 3), 255, t)


def _lbracket(img, t):
    x = 5
    cv2.line(img, (x, 2), (x, _S - 3), 255, t)
    cv2.line(img, (x, 2), (x + 4, 2), 255, t)
    cv2.line(img, (x, _S - 3), (x + 4, _S - 3), 255, t)


_PAINTERS = {
    "cross": _cross,
    "circle": _circle,
    "square": _square,
    "triangle": _triangle,
    "gt": _gt,
    "lt": _lt,
    "rbracket": _rbracket,
    "lbracket": _lbracket,
}


def glyph_bitmap(name: str, thickness: int = GLYPH_STROKE) -> np.ndarray:
    """Boolean ink mask for a canonical glyph on the 17 px canvas."""
    img = np.zeros((_S, _S), np.uint8)
    _PAINTERS[name](img, thickness)
    return img > 0


# 5x7 bitmap font covering the characters axis labels can contain
FONT = {
    "0": ("01110", "10001", "10011", "10101", "11001", "10001", "01110"),
    "1": ("00100", "01100", "00100", "00100", "00100", "00100", "01110"),
    "2": ("01110", "10001", "00001", "00010", "00100", "01000", "11111"),
    "3": ("11111", "00010", "00100", "00010", "00001", "10001", "01110"),
    "4": ("00010", "00110", "01010", "10010", "11111", "00010", "00010"),
    "5": ("11111", "10000", "11110", "00001", "00001", "10001", "01110"),
    "6": ("00110", "01000", "10000", "11110", "10001", "10001", "01110"),
    "7": ("11111", "00001", "00010", "00100", "01000", "01000", "01000"),
    "8": ("01110", "10001", "10001", "01110", "10001", "10001", "01110"),
    "9": ("01110", "10001", "10001", "01111", "00001", "00010", "01100"),
    ".": ("00000", "00000", "00000", "00000", "00000", "01100", "01100"),
    "-": ("00000", "00000", "00000", "11111", "00000", "00000", "00000"),
    "K": ("10001", "10010", "10100", "11000", "10100", "10010", "10001"),
}

FONT_HEIGHT = 7
FONT_WIDTH = 5
FONT_GAP = 1


def text_bitmap(text: str, scale: int = 2) -> np.ndarray:
    """Boolean ink mask for a label string, integer-scaled via block repeat."""
    cols = []
    gap = np.zeros((FONT_HEIGHT, FONT_GAP), np.bool_)
    for i, ch in enumerate(text.upper()):
        if i:
            cols.append(gap)
        rows = FONT[ch]
        cols.append(np.array([[c == "1" for c in row] for row in rows]))
    glyph = np.hstack(cols)
    if scale != 1:
        glyph = np.kron(glyph, np.ones((scale, scale), np.bool_))
    return glyph


def scale_bitmap(bitmap: np.ndarray, scale: float, coverage: float = 0.4) -> np.ndarray:
    """Resample a boolean bitmap; pixels keeping >= `coverage` ink survive."""
    if scale == 1.0:
        return bitmap.copy()
    h, w = bitmap.shape
    nh, nw = max(1, round(h * scale)), max(1, round(w * scale))
    soft = cv2.resize(bitmap.astype(np.float32), (nw, nh), interpolation=cv2.INTER_AREA)
    return soft >= coverage
