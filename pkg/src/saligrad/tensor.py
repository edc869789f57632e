"""Dense float64 arrays and the patch-unfolding primitive behind im2row convolution.

Everything in this package runs on plain numpy arrays in channel-first
(K, H, W) layout, C-contiguous, double precision. The helpers here enforce
that convention and provide the unfold/fold pair that turns convolution into
a single matrix product.
"""

from __future__ import annotations

import numpy as np

VALID_NORMS = ("l2", "maxabs", "sum", "possum")


def as_tensor(values, shape=None) -> np.ndarray:
    """Coerce to a C-contiguous float64 array, rejecting non-finite entries."""
    arr = np.ascontiguousarray(values, dtype=np.float64)
    if shape is not None and arr.shape != tuple(shape):
        raise ValueError(f"expected shape {tuple(shape)}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("tensor contains non-finite values")
    return arr


def check_finite(name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"{name} produced non-finite values")


def unfold_patches(x: np.ndarray, kernel_size: int) -> np.ndarray:
    """Extract zero-padded kernel_size x kernel_size patches around every location.

    Input is (K, H, W); output is (kernel_size^2 * K, H * W) where column u
    holds the patch centered on location u (row-major over H, W). Within a
    column the ordering is channel-major, then kernel row, then kernel
    column: entry index k * N^2 + i * N + j is channel k of the pixel at
    kernel offset (i, j). Padding is zero, width (N - 1) / 2, so output
    spatial extent matches the input. N must be odd.

    A 1x1 kernel returns the input reshaped to (K, H*W) unchanged.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ValueError(f"expected (K, H, W) input, got shape {x.shape}")
    n = int(kernel_size)
    if n < 1 or n % 2 == 0:
        raise ValueError(f"kernel_size must be odd and positive, got {kernel_size}")
    k, h, w = x.shape
    pad = (n - 1) // 2
    padded = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    windows = np.lib.stride_tricks.sliding_window_view(padded, (n, n), axis=(1, 2))
    # (K, H, W, n, n) -> (K, n, n, H, W) -> (n^2 K, H W)
    cols = windows.transpose(0, 3, 4, 1, 2).reshape(k * n * n, h * w)
    return np.ascontiguousarray(cols)


def fold_patches(cols: np.ndarray, kernel_size: int, channels: int,
                 height: int, width: int) -> np.ndarray:
    """Adjoint of unfold_patches: scatter-add patch columns back to (K, H, W).

    Overlapping contributions accumulate; the zero-padding border is cropped.
    """
    n = int(kernel_size)
    pad = (n - 1) // 2
    grids = cols.reshape(channels, n, n, height, width)
    padded = np.zeros((channels, height + 2 * pad, width + 2 * pad))
    for i in range(n):
        for j in range(n):
            padded[:, i:i + height, j:j + width] += grids[:, i, j]
    return np.ascontiguousarray(padded[:, pad:pad + height, pad:pad + width])


def elementwise(a: np.ndarray, b: np.ndarray, op: str) -> np.ndarray:
    """Elementwise add or mul of two equal-shape tensors. No broadcasting."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if op == "add":
        return a + b
    if op == "mul":
        return a * b
    raise ValueError(f"unknown elementwise op {op!r}")


def norms(v: np.ndarray) -> dict[str, float]:
    """Reductions of a vector to a scalar: l2, maxabs, sum, possum.

    possum sums only the positive entries. An empty vector is rejected.
    """
    v = np.asarray(v, dtype=np.float64).ravel()
    if v.size == 0:
        raise ValueError("cannot reduce an empty vector")
    return {
        "l2": float(np.sqrt(np.sum(v * v))),
        "maxabs": float(np.max(np.abs(v))),
        "sum": float(np.sum(v)),
        "possum": float(np.sum(np.clip(v, 0.0, None))),
    }
