"""Frame I/O. Binary PPM (P6, maxval 255) is the canonical format; PNG/JPEG
are read through Pillow for convenience."""
from __future__ import annotations

import re
from pathlib import Path

import numpy as np

FRAME_SUFFIXES = (".ppm", ".png", ".jpg", ".jpeg")

_PPM_HEADER = re.compile(rb"P6\s+(?:#[^\n]*\s+)*(\d+)\s+(?:#[^\n]*\s+)*(\d+)\s+"
                         rb"(?:#[^\n]*\s+)*(\d+)\s")


def encode_ppm(image: np.ndarray) -> bytes:
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"PPM needs an HxWx3 image, got {img.shape}")
    if img.dtype != np.uint8:
        img = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    h, w, _ = img.shape
    return b"P6\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(img).tobytes()


def decode_ppm(data: bytes) -> np.ndarray:
    m = _PPM_HEADER.match(data)
    if not m:
        raise ValueError("not a binary PPM (P6) image")
    w, h, maxval = (int(g) for g in m.groups())
    if maxval != 255:
        raise ValueError(f"unsupported PPM maxval {maxval}")
    body = data[m.end():]
    if len(body) < w * h * 3:
        raise ValueError(f"truncated PPM: need {w * h * 3} bytes, have {len(body)}")
    return np.frombuffer(body[: w * h * 3], dtype=np.uint8).reshape(h, w, 3).copy()


def read_image(path) -> np.ndarray:
    path = Path(path)
    data = path.read_bytes()
    if data[:2] == b"P6":
        return decode_ppm(data)
    from PIL import Image
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def write_ppm(path, image: np.ndarray) -> None:
    Path(path).write_bytes(encode_ppm(image))


def list_frames(directory) -> list[Path]:
    """Image files in ``directory`` ordered lexicographically by name."""
    d = Path(directory)
    return sorted((p for p in d.iterdir() if p.suffix.lower() in FRAME_SUFFIXES),
                  key=lambda p: p.name)
