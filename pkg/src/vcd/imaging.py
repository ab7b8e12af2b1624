"""Image helpers: resampling, test patterns and PNG I/O.

In-memory images are float arrays of shape ``(width, height, channels)``
indexed ``[x, y]``. PNG files store the usual ``(rows, cols)`` layout, so
reading and writing transposes the first two axes.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

__all__ = ["resample", "to_xy", "read_png", "write_png", "test_pattern", "as_channels"]


def as_channels(img) -> np.ndarray:
    img = np.asarray(img, dtype=float)
    if img.ndim == 2:
        img = img[..., np.newaxis]
    if img.ndim != 3:
        raise ValueError(f"expected a 2D image with optional channel axis, got shape {img.shape}")
    return img


def resample(img, shape: tuple[int, int]) -> np.ndarray:
    """Cell-centered bilinear resampling of an ``(w, h[, c])`` image to ``shape``."""
    img = as_channels(img)
    w, h = img.shape[:2]
    nw, nh = shape
    if (w, h) == (nw, nh):
        return img.copy()
    cx = (np.arange(nw) + 0.5) * (w / nw) - 0.5
    cy = (np.arange(nh) + 0.5) * (h / nh) - 0.5
    gx, gy = np.meshgrid(cx, cy, indexing="ij")
    out = np.empty((nw, nh, img.shape[2]))
    for c in range(img.shape[2]):
        out[..., c] = ndimage.map_coordinates(img[..., c], [gx, gy], order=1, mode="nearest")
    return out


def to_xy(rows_cols: np.ndarray) -> np.ndarray:
    """Convert a ``(rows, cols[, c])`` array into ``(x, y[, c])`` layout."""
    return np.swapaxes(np.asarray(rows_cols), 0, 1)


def read_png(path) -> np.ndarray:
    """Read an 8- or 16-bit grayscale/RGB(A) PNG into ``[0, 1]`` floats, ``(x, y, c)``."""
    path = Path(path)
    with Image.open(path) as im:
        if im.mode in ("I;16", "I;16B", "I"):
            arr = np.asarray(im, dtype=float) / 65535.0
        elif im.mode in ("L", "RGB"):
            arr = np.asarray(im, dtype=float) / 255.0
        else:
            arr = np.asarray(im.convert("RGB"), dtype=float) / 255.0
    return as_channels(to_xy(np.clip(arr, 0.0, 1.0)))


def write_png(path, img, bits: int = 8) -> None:
    """Write an ``(x, y[, c])`` image in ``[0, 1]``. 16-bit is grayscale only."""
    img = np.clip(as_channels(img), 0.0, 1.0)
    rc = to_xy(img)
    if bits == 16:
        if rc.shape[2] != 1:
            raise ValueError("16-bit PNG output supports one channel")
        data = np.round(rc[..., 0] * 65535.0).astype(np.uint16)
        Image.fromarray(data).save(path)  # PIL infers mode I;16
    elif bits == 8:
        data = np.round(rc * 255.0).astype(np.uint8)
        Image.fromarray(data[..., 0] if data.shape[2] == 1 else data).save(path)
    else:
        raise ValueError(f"bits must be 8 or 16, got {bits}")


def test_pattern(n: int = 64, kind: str = "chart") -> np.ndarray:
    """Deterministic grayscale test images of size ``n x n`` in ``(x, y, 1)``.

    ``chart`` is an eye-chart style block of bars and rings, ``rings`` a
    radial chirp, ``gradient`` a smooth ramp.
    """
    c = (np.arange(n) + 0.5) / n
    x, y = np.meshgrid(c, c, indexing="ij")
    if kind == "gradient":
        img = 0.2 + 0.6 * (0.5 * x + 0.5 * y)
    elif kind == "rings":
        r = np.hypot(x - 0.5, y - 0.5)
        img = 0.5 + 0.3 * np.cos(2 * np.pi * 40.0 * r**2)
    elif kind == "chart":
        img = np.full((n, n), 0.85)
        # Tumbling-E style bars in the upper half, rings below.
        for k, x0 in enumerate((0.08, 0.38, 0.68)):
            width = 0.06 + 0.02 * k
            for j in range(3):
                y0 = 0.08 + j * 2 * width
                img[(x >= x0) & (x < x0 + 5 * width) & (y >= y0) & (y < y0 + width)] = 0.15
            img[(x >= x0) & (x < x0 + width) & (y >= 0.08) & (y < 0.08 + 5 * width)] = 0.15
        r = np.hypot(x - 0.5, y - 0.75)
        img[(r > 0.08) & (r < 0.16)] = 0.15
        img[(r > 0.20) & (r < 0.23) & (y > 0.55)] = 0.15
    else:
        raise ValueError(f"unknown pattern {kind!r}")
    return img[..., np.newaxis]
