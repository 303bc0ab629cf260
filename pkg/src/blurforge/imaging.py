"""PNG input and output for float images in [0, 1]."""

from __future__ import annotations

import hashlib
import os
from pathlib import Path

import numpy as np
import png
from PIL import Image


def to_uint(img: np.ndarray, bits: int = 8) -> np.ndarray:
    if bits not in (8, 16):
        raise ValueError(f"bit depth must be 8 or 16, got {bits}")
    peak = (1 << bits) - 1
    dtype = np.uint8 if bits == 8 else np.uint16
    return np.round(np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0) * peak).astype(dtype)


def write_png(path, img: np.ndarray, bits: int = 8) -> Path:
    """Write an ``(H, W, 3)`` or ``(H, W)`` float image.

    The file is written next to its destination and renamed into place, so an
    interrupted run never leaves a truncated PNG behind.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = to_uint(img, bits)
    tmp = path.with_name(path.name + ".part")
    if bits == 8:
        Image.fromarray(data).save(tmp, format="PNG")
    else:
        h, w = data.shape[:2]
        planes = 1 if data.ndim == 2 else data.shape[2]
        writer = png.Writer(w, h, greyscale=planes == 1, bitdepth=16)
        with open(tmp, "wb") as f:
            writer.write(f, data.reshape(h, w * planes).tolist())
    os.replace(tmp, path)
    return path


def read_png(path) -> np.ndarray:
    """Read an 8- or 16-bit PNG as float64 in [0, 1]. Alpha channels are dropped."""
    w, h, rows, info = png.Reader(filename=str(path)).asDirect()
    planes = info["planes"]
    data = np.vstack([np.asarray(r, dtype=np.float64) for r in rows]).reshape(h, w, planes)
    data /= (1 << info["bitdepth"]) - 1
    if info.get("alpha"):
        data = data[..., :-1]
    return data[..., 0] if data.shape[2] == 1 else data


def read_mask(path) -> np.ndarray:
    """Object mask in [0, 1]; color masks are reduced to their first channel."""
    m = read_png(path)
    return m if m.ndim == 2 else m[..., 0]


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
