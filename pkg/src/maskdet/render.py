"""Draw detection boxes and labels onto RGB byte frames."""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np

CLASS_COLORS = {"Mask": (0, 200, 0), "NoMask": (220, 0, 0)}
FALLBACK_COLOR = (255, 200, 0)
TEXT_COLOR = (255, 255, 255)
LINE_WIDTH = 2

GLYPH_W, GLYPH_H = 5, 7

# 5x7 glyphs, one string of five bits per row; lowercase letters without an
# entry are drawn with their uppercase glyph
_FONT_ROWS = {
    "0": "01110 10001 10011 10101 11001 10001 01110",
    "1": "00100 01100 00100 00100 00100 00100 01110",
    "2": "01110 10001 00001 00010 00100 01000 11111",
    "3": "11111 00010 00100 00010 00001 10001 01110",
    "4": "00010 00110 01010 10010 11111 00010 00010",
    "5": "11111 10000 11110 00001 00001 10001 01110",
    "6": "00110 01000 10000 11110 10001 10001 01110",
    "7": "11111 00001 00010 00100 01000 01000 01000",
    "8": "01110 10001 10001 01110 10001 10001 01110",
    "9": "01110 10001 10001 01111 00001 00010 01100",
    "A": "01110 10001 10001 11111 10001 10001 10001",
    "B": "11110 10001 10001 11110 10001 10001 11110",
    "C": "01110 10001 10000 10000 10000 10001 01110",
    "D": "11100 10010 10001 10001 10001 10010 11100",
    "E": "11111 10000 10000 11110 10000 10000 11111",
    "F": "11111 10000 10000 11110 10000 10000 10000",
    "G": "01110 10001 10000 10111 10001 10001 01111",
    "H": "10001 10001 10001 11111 10001 10001 10001",
    "I": "01110 00100 00100 00100 00100 00100 01110",
    "J": "00111 00010 00010 00010 00010 10010 01100",
    "K": "10001 10010 10100 11000 10100 10010 10001",
    "L": "10000 10000 10000 10000 10000 10000 11111",
    "M": "10001 11011 10101 10101 10001 10001 10001",
    "N": "10001 10001 11001 10101 10011 10001 10001",
    "O": "01110 10001 10001 10001 10001 10001 01110",
    "P": "11110 10001 10001 11110 10000 10000 10000",
    "Q": "01110 10001 10001 10001 10101 10010 01101",
    "R": "11110 10001 10001 11110 10100 10010 10001",
    "S": "01111 10000 10000 01110 00001 00001 11110",
    "T": "11111 00100 00100 00100 00100 00100 00100",
    "U": "10001 10001 10001 10001 10001 10001 01110",
    "V": "10001 10001 10001 10001 10001 01010 00100",
    "W": "10001 10001 10001 10101 10101 10101 01010",
    "X": "10001 10001 01010 00100 01010 10001 10001",
    "Y": "10001 10001 10001 01010 00100 00100 00100",
    "Z": "11111 00001 00010 00100 01000 10000 11111",
    "a": "00000 00000 01110 00001 01111 10001 01111",
    "k": "10000 10000 10010 10100 11000 10100 10010",
    "o": "00000 00000 01110 10001 10001 10001 01110",
    "s": "00000 00000 01110 10000 01110 00001 11110",
    ".": "00000 00000 00000 00000 00000 01100 01100",
    "-": "00000 00000 00000 11111 00000 00000 00000",
    ":": "00000 01100 01100 00000 01100 01100 00000",
    " ": "00000 00000 00000 00000 00000 00000 00000",
    "?": "01110 10001 00001 00010 00100 00000 00100",
}

FONT = {ch: np.array([[c == "1" for c in row] for row in rows.split()], dtype=bool)
        for ch, rows in _FONT_ROWS.items()}


def glyph(ch: str) -> np.ndarray:
    if ch in FONT:
        return FONT[ch]
    return FONT.get(ch.upper(), FONT["?"])


def text_mask(text: str) -> np.ndarray:
    """Boolean bitmap of ``text`` with one blank column between glyphs."""
    if not text:
        return np.zeros((GLYPH_H, 0), dtype=bool)
    width = len(text) * (GLYPH_W + 1) - 1
    mask = np.zeros((GLYPH_H, width), dtype=bool)
    for i, ch in enumerate(text):
        x = i * (GLYPH_W + 1)
        mask[:, x:x + GLYPH_W] = glyph(ch)
    return mask


def _fill(frame, y0, y1, x0, x1, color):
    """Fill rows [y0, y1) and cols [x0, x1), silently cropped to the frame."""
    h, w = frame.shape[:2]
    y0, y1 = max(y0, 0), min(y1, h)
    x0, x1 = max(x0, 0), min(x1, w)
    if y0 < y1 and x0 < x1:
        frame[y0:y1, x0:x1] = color


def draw_rectangle(frame: np.ndarray, bbox, color, width: int = LINE_WIDTH) -> None:
    h, w = frame.shape[:2]
    x0 = min(max(int(math.floor(bbox[0])), 0), w - 1)
    y0 = min(max(int(math.floor(bbox[1])), 0), h - 1)
    x1 = min(max(int(math.ceil(bbox[2])) - 1, 0), w - 1)
    y1 = min(max(int(math.ceil(bbox[3])) - 1, 0), h - 1)
    _fill(frame, y0, y0 + width, x0, x1 + 1, color)
    _fill(frame, y1 - width + 1, y1 + 1, x0, x1 + 1, color)
    _fill(frame, y0, y1 + 1, x0, x0 + width, color)
    _fill(frame, y0, y1 + 1, x1 - width + 1, x1 + 1, color)


def draw_label(frame: np.ndarray, text: str, x: int, y_top_of_box: int, color) -> None:
    """Label on a filled tag just above ``y_top_of_box``, kept inside the frame."""
    h, w = frame.shape[:2]
    mask = text_mask(text)
    tag_h, tag_w = GLYPH_H + 2, mask.shape[1] + 2
    ty = y_top_of_box - tag_h
    tx = x
    ty = min(max(ty, 0), max(h - tag_h, 0))
    tx = min(max(tx, 0), max(w - tag_w, 0))
    _fill(frame, ty, ty + tag_h, tx, tx + tag_w, color)
    # glyph pixels, cropped where the tag itself does not fit
    gy, gx = ty + 1, tx + 1
    ys, xs = np.nonzero(mask)
    ys, xs = ys + gy, xs + gx
    inside = (ys < h) & (xs < w)
    frame[ys[inside], xs[inside]] = TEXT_COLOR


def render_annotations(frame: np.ndarray, detections: Sequence) -> np.ndarray:
    """Return a copy of ``frame`` with a box and ``"<name> <score>"`` per detection."""
    out = np.array(frame, dtype=np.uint8, copy=True)
    for det in detections:
        color = CLASS_COLORS.get(det.class_name, FALLBACK_COLOR)
        draw_rectangle(out, det.bbox, color)
        x0 = int(math.floor(det.bbox[0]))
        y0 = int(math.floor(det.bbox[1]))
        draw_label(out, f"{det.class_name} {det.score:.2f}", x0, y0, color)
    return out
