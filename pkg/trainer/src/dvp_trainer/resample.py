"""Linear resampling as dense matrices, one per axis.

Mirrors the repo-wide convention exactly: half-pixel centers, kernel support
widened by the scale ratio when downscaling, clamp-to-edge, per-row weight
normalization.  Matrices are built in float64 and applied as matmuls, so the
same operators serve training (autograd flows through matmul) and golden
exports.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
import torch


def _triangle(t: np.ndarray) -> np.ndarray:
    return np.maximum(0.0, 1.0 - np.abs(t))


def _bicubic(t: np.ndarray, a: float = -0.75) -> np.ndarray:
    at = np.abs(t)
    inner = (a + 2.0) * at**3 - (a + 3.0) * at**2 + 1.0
    outer = a * (at**3 - 5.0 * at**2 + 8.0 * at - 4.0)
    return np.where(at <= 1.0, inner, np.where(at < 2.0, outer, 0.0))


def _lanczos3(t: np.ndarray) -> np.ndarray:
    at = np.abs(t)
    x = np.where(at < 3.0, at, 0.0)
    return np.where(at < 3.0, np.sinc(x) * np.sinc(x / 3.0), 0.0)


_KERNELS = {
    "bilinear": (_triangle, 1.0),
    "bicubic": (_bicubic, 2.0),
    "lanczos": (_lanczos3, 3.0),
}


@lru_cache(maxsize=512)
def resize_matrix(in_size: int, out_size: int, kind: str = "bilinear") -> torch.Tensor:
    """Dense (out_size, in_size) float matrix mapping one axis."""
    kernel, base_radius = _KERNELS[kind]
    scale = in_size / out_size
    support = max(scale, 1.0)
    radius = base_radius * support
    centers = (np.arange(out_size, dtype=np.float64) + 0.5) * scale - 0.5
    first = np.ceil(centers - radius).astype(np.int64)
    ntaps = int(math.floor(2.0 * radius)) + 2
    k = first[:, None] + np.arange(ntaps)[None, :]
    w = kernel((k - centers[:, None]) / support)
    w = w / w.sum(axis=1, keepdims=True)
    dense = np.zeros((out_size, in_size), dtype=np.float64)
    idx = np.clip(k, 0, in_size - 1)
    for row in range(out_size):
        for tap in range(ntaps):
            dense[row, idx[row, tap]] += w[row, tap]
    return torch.from_numpy(dense.astype(np.float32))


def resize_bchw(x: torch.Tensor, target_h: int, target_w: int,
                kind: str = "bilinear") -> torch.Tensor:
    """Resize a (B, C, H, W) tensor, vertical axis first."""
    b, c, h, w = x.shape
    out = x
    if h != target_h:
        m = resize_matrix(h, target_h, kind).to(dtype=x.dtype)
        out = torch.einsum("oh,bchw->bcow", m, out)
    if w != target_w:
        m = resize_matrix(w, target_w, kind).to(dtype=x.dtype)
        out = torch.einsum("ow,bchw->bcho", m, out)
    return out
