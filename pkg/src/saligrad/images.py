"""Binary portable pixmap IO (P5/P6, maxval 255) and heatmap rendering.

Self-contained and byte-deterministic: the same array always serializes to
the same bytes, which the CLI's repeatability guarantee leans on.
"""

from __future__ import annotations

import numpy as np


def write_pgm(path, gray: np.ndarray) -> None:
    """Write a (H, W) uint8 array as binary PGM."""
    gray = np.asarray(gray, dtype=np.uint8)
    if gray.ndim != 2:
        raise ValueError(f"expected (H, W), got {gray.shape}")
    h, w = gray.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(gray.tobytes())


def write_ppm(path, rgb: np.ndarray) -> None:
    """Write a (3, H, W) uint8 array as binary PPM."""
    rgb = np.asarray(rgb, dtype=np.uint8)
    if rgb.ndim != 3 or rgb.shape[0] != 3:
        raise ValueError(f"expected (3, H, W), got {rgb.shape}")
    _, h, w = rgb.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(rgb.transpose(1, 2, 0).tobytes())


def _read_header(f):
    fields = []
    while len(fields) < 4:
        line = f.readline()
        if not line:
            raise ValueError("truncated pixmap header")
        text = line.split(b"#", 1)[0]
        fields.extend(text.split())
    return fields[0], int(fields[1]), int(fields[2]), int(fields[3])


def read_pixmap(path) -> np.ndarray:
    """Read P5 -> (H, W) or P6 -> (3, H, W), values scaled to [0, 1] floats."""
    with open(path, "rb") as f:
        magic, w, h, maxval = _read_header(f)
        if maxval != 255:
            raise ValueError(f"only maxval 255 supported, got {maxval}")
        if magic == b"P5":
            raw = f.read(h * w)
            if len(raw) != h * w:
                raise ValueError("truncated pixmap payload")
            return np.frombuffer(raw, dtype=np.uint8).reshape(h, w) / 255.0
        if magic == b"P6":
            raw = f.read(3 * h * w)
            if len(raw) != 3 * h * w:
                raise ValueError("truncated pixmap payload")
            arr = np.frombuffer(raw, dtype=np.uint8).reshape(h, w, 3)
            return arr.transpose(2, 0, 1) / 255.0
        raise ValueError(f"unsupported pixmap magic {magic!r}")


def to_uint8(values: np.ndarray) -> np.ndarray:
    """Min-max scale to 0..255; a constant map renders as zeros."""
    values = np.asarray(values, dtype=np.float64)
    lo, hi = values.min(), values.max()
    if hi == lo:
        return np.zeros(values.shape, dtype=np.uint8)
    scaled = (values - lo) / (hi - lo)
    return np.round(scaled * 255.0).astype(np.uint8)


# four-stop piecewise-linear ramp: black -> red -> yellow -> white
_FIRE_STOPS = np.array([
    [0.0, 0.0, 0.0],
    [0.85, 0.1, 0.0],
    [1.0, 0.9, 0.0],
    [1.0, 1.0, 1.0],
])


def fire_lut() -> np.ndarray:
    """256 x 3 uint8 lookup table for the 'fire' colormap."""
    t = np.linspace(0.0, 1.0, 256)
    pos = t * (len(_FIRE_STOPS) - 1)
    i0 = np.minimum(pos.astype(int), len(_FIRE_STOPS) - 2)
    frac = (pos - i0)[:, None]
    rgb = _FIRE_STOPS[i0] * (1 - frac) + _FIRE_STOPS[i0 + 1] * frac
    return np.round(rgb * 255.0).astype(np.uint8)


def render_heatmap(path, values: np.ndarray, colormap: str = "gray") -> None:
    """Render a saliency map to PGM (gray) or PPM (fire)."""
    levels = to_uint8(values)
    if colormap == "gray":
        write_pgm(path, levels)
    elif colormap == "fire":
        lut = fire_lut()
        write_ppm(path, lut[levels].transpose(2, 0, 1))
    else:
        raise ValueError(f"unknown colormap {colormap!r}")
