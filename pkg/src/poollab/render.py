"""RGB accuracy-grid rendering.

One pixel per (learning rate, swept value) cell. In min_mean_max mode the
R/G/B channels are the minimum, mean, and maximum over random seeds of the
summary accuracy (so brighter is better and blue-ish pixels flag seed
variance); in case_rgb mode the channels are the seed-means of the argmin,
first, and argmax case accuracies. Rows are learning rates descending from
the top; columns are swept values ascending. Missing or failed cells
render black.

Output is binary PPM (P6, maxval 255) with an optional minimal PNG
encoder; both writers are deterministic byte-for-byte.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

import numpy as np

from . import ConfigError
from . import records

CHANNEL_MODES = ("min_mean_max", "case_rgb")
METRIC_SOURCES = ("train", "validation")


@dataclass
class GridSpec:
    channel_mode: str = "min_mean_max"
    metric_source: str = "train"
    upscale: int = 1

    def __post_init__(self):
        if self.channel_mode not in CHANNEL_MODES:
            raise ConfigError(f"channel_mode must be one of {CHANNEL_MODES}")
        if self.metric_source not in METRIC_SOURCES:
            raise ConfigError(f"metric_source must be one of {METRIC_SOURCES}")
        if self.upscale < 1:
            raise ConfigError("upscale must be >= 1")


def channel_byte(value: float) -> int:
    """round-half-away-from-zero(255 * value), clipped to [0, 255]."""
    v = np.floor(255.0 * value + 0.5)
    return int(min(255.0, max(0.0, v)))


def grid_pixels(summaries: list[dict], spec: GridSpec) -> np.ndarray:
    """(n_lrs, n_x, 3) uint8 pixel grid from summary records."""
    cells: dict[tuple, list[dict]] = {}
    extents = set()
    for s in summaries:
        if s.get("kind") != records.SUMMARY:
            continue
        c = s["cell"]
        cells.setdefault((float(c["lr"]), c["x_value"]), []).append(s)
        extents.add(c.get("x_param"))
    if not cells:
        raise ValueError("render: no summary records")
    if len(extents) > 1:
        raise ValueError(f"render: records mix swept parameters {sorted(extents)}")

    lrs = sorted({k[0] for k in cells}, reverse=True)  # descending from top
    xs = sorted({k[1] for k in cells})
    img = np.zeros((len(lrs), len(xs), 3), dtype=np.uint8)

    if spec.channel_mode == "min_mean_max":
        key = "train_acc" if spec.metric_source == "train" else "val_acc"
        for (lr, x), group in cells.items():
            vals = [float(s.get(key, 0.0)) if s["status"] == "ok" else 0.0
                    for s in group]
            rgb = (min(vals), float(np.mean(vals)), max(vals))
            img[lrs.index(lr), xs.index(x)] = [channel_byte(v) for v in rgb]
    else:
        key = "case_train" if spec.metric_source == "train" else "case_val"
        for (lr, x), group in cells.items():
            triples = [s.get(key) if s["status"] == "ok" and s.get(key) else [0.0] * 3
                       for s in group]
            mean = np.mean(np.asarray(triples, dtype=float), axis=0)
            img[lrs.index(lr), xs.index(x)] = [channel_byte(v) for v in mean]
    return img


def upscale_nearest(img: np.ndarray, factor: int) -> np.ndarray:
    if factor == 1:
        return img
    return np.repeat(np.repeat(img, factor, axis=0), factor, axis=1)


def write_ppm(img: np.ndarray) -> bytes:
    """Binary PPM (P6, maxval 255) from an (H, W, 3) uint8 array."""
    if img.ndim != 3 or img.shape[2] != 3 or img.dtype != np.uint8:
        raise ValueError(f"write_ppm: need (H, W, 3) uint8, got {img.shape} {img.dtype}")
    h, w = img.shape[:2]
    return b"P6\n%d %d\n255\n" % (w, h) + img.tobytes()


def read_ppm(data: bytes) -> np.ndarray:
    parts = data.split(b"\n", 3)
    if parts[0] != b"P6" or parts[2] != b"255":
        raise ValueError("read_ppm: not a maxval-255 P6 file")
    w, h = (int(t) for t in parts[1].split())
    return np.frombuffer(parts[3][: w * h * 3], dtype=np.uint8).reshape(h, w, 3)


def _png_chunk(tag: bytes, payload: bytes) -> bytes:
    return (struct.pack(">I", len(payload)) + tag + payload
            + struct.pack(">I", zlib.crc32(tag + payload)))


def write_png(img: np.ndarray) -> bytes:
    """Minimal 8-bit RGB PNG (no filtering, fixed-level deflate)."""
    if img.ndim != 3 or img.shape[2] != 3 or img.dtype != np.uint8:
        raise ValueError(f"write_png: need (H, W, 3) uint8, got {img.shape} {img.dtype}")
    h, w = img.shape[:2]
    raw = b"".join(b"\x00" + img[y].tobytes() for y in range(h))
    return (b"\x89PNG\r\n\x1a\n"
            + _png_chunk(b"IHDR", struct.pack(">IIBBBBB", w, h, 8, 2, 0, 0, 0))
            + _png_chunk(b"IDAT", zlib.compress(raw, 9))
            + _png_chunk(b"IEND", b""))


def render_grid(summaries: list[dict], spec: GridSpec, png: bool = False) -> bytes:
    """Render summary records to PPM (or PNG) bytes per the grid spec."""
    img = upscale_nearest(grid_pixels(summaries, spec), spec.upscale)
    return write_png(img) if png else write_ppm(img)
