"""Thin PNG helpers around Pillow with float <-> uint8 conventions."""

from __future__ import annotations

import io

import numpy as np
from PIL import Image

__all__ = ["write_png", "read_png", "encode_png", "float_to_u8", "u8_to_float"]


def float_to_u8(img):
    return np.clip(np.rint(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)


def u8_to_float(img):
    return np.asarray(img, dtype=np.float32) / 255.0


def encode_png(array):
    """uint8 (H, W) or (H, W, 3) array -> PNG bytes (deterministic)."""
    arr = np.asarray(array)
    if arr.dtype != np.uint8:
        arr = float_to_u8(arr)
    mode = "L" if arr.ndim == 2 else "RGB"
    buf = io.BytesIO()
    Image.fromarray(arr, mode=mode).save(buf, format="PNG")
    return buf.getvalue()


def write_png(path, array):
    with open(path, "wb") as fh:
        fh.write(encode_png(array))


def read_png(path):
    with Image.open(path) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB" if im.mode in ("RGBA", "P") else "L")
        return np.array(im)
