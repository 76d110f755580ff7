"""Deterministic separable resamplers for rational scale factors.

This module pins THE sampling convention used everywhere in this repo, both
for 8-bit frames and for float feature maps:

  * half-pixel centers: output sample j reads source coordinate
    (j + 0.5) * in/out - 0.5;
  * downscaling stretches the kernel support by the scale ratio
    (anti-aliasing); upscaling uses the unit support;
  * taps falling outside the plane clamp to the edge sample;
  * the tap weights of every output position are normalized to sum to 1;
  * float path: float32 arithmetic, vertical axis resized before horizontal,
    final round half away from zero when storing 8-bit.

Matching the sub-LSB behavior of any third-party scaler is a non-goal; this
file is the reference.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .frame_io import FULL, PlanarFrame, ceil_half


class ResampleError(ValueError):
    pass


@dataclass(frozen=True)
class FilterKind:
    """bilinear | bicubic (sharpness a) | lanczos (lobe count)."""

    name: str
    a: float = -0.75
    taps: int = 3

    def __post_init__(self):
        if self.name not in ("bilinear", "bicubic", "lanczos"):
            raise ResampleError(f"unknown filter {self.name!r}")
        if self.name == "lanczos" and self.taps < 1:
            raise ResampleError("lanczos needs at least one lobe")

    @property
    def radius(self) -> float:
        if self.name == "bilinear":
            return 1.0
        if self.name == "bicubic":
            return 2.0
        return float(self.taps)

    def __str__(self) -> str:
        if self.name == "bicubic" and self.a != -0.75:
            return f"bicubic:{self.a}"
        if self.name == "lanczos" and self.taps != 3:
            return f"lanczos:{self.taps}"
        return self.name


BILINEAR = FilterKind("bilinear")
BICUBIC = FilterKind("bicubic")
LANCZOS3 = FilterKind("lanczos")


def parse_filter(text: str) -> FilterKind:
    name, _, arg = text.partition(":")
    name = name.strip().lower()
    if name == "bilinear":
        return BILINEAR
    if name == "bicubic":
        return FilterKind("bicubic", a=float(arg)) if arg else BICUBIC
    if name == "lanczos":
        return FilterKind("lanczos", taps=int(arg)) if arg else LANCZOS3
    raise ResampleError(f"unknown filter {text!r}")


@dataclass(frozen=True)
class ScaleFactor:
    """Exact rational downscale ratio; s > 1 shrinks, s = 1 is native."""

    num: int
    den: int = 1

    def __post_init__(self):
        if self.num <= 0 or self.den <= 0:
            raise ResampleError(f"scale must be positive, got {self.num}/{self.den}")
        g = math.gcd(self.num, self.den)
        object.__setattr__(self, "num", self.num // g)
        object.__setattr__(self, "den", self.den // g)

    @property
    def value(self) -> float:
        return self.num / self.den

    @property
    def is_integer(self) -> bool:
        return self.den == 1

    def target(self, extent: int) -> int:
        """Output extent for a source extent (round half away from zero)."""
        return (2 * extent * self.den + self.num) // (2 * self.num)

    def __str__(self) -> str:
        return f"{self.num}/{self.den}"

    @classmethod
    def parse(cls, text: str) -> "ScaleFactor":
        num, _, den = text.strip().partition("/")
        return cls(int(num), int(den) if den else 1)


NATIVE = ScaleFactor(1)


def _kernel(filt: FilterKind, t: np.ndarray) -> np.ndarray:
    at = np.abs(t)
    if filt.name == "bilinear":
        return np.maximum(0.0, 1.0 - at)
    if filt.name == "bicubic":
        a = filt.a
        inner = (a + 2.0) * at**3 - (a + 3.0) * at**2 + 1.0
        outer = a * (at**3 - 5.0 * at**2 + 8.0 * at - 4.0)
        return np.where(at <= 1.0, inner, np.where(at < 2.0, outer, 0.0))
    n = filt.taps
    x = np.where(at < n, at, 0.0)
    out = np.sinc(x) * np.sinc(x / n)
    return np.where(at < n, out, 0.0)


@lru_cache(maxsize=256)
def axis_weights(in_size: int, out_size: int, filt: FilterKind) -> tuple[np.ndarray, np.ndarray]:
    """Tap indices and normalized weights for one resampled axis.

    Returns (idx, w) of shape (out_size, taps); idx is clamped to the valid
    range (edge extension), w rows each sum to 1.
    """
    if out_size < 1:
        raise ResampleError(f"zero-sized target ({out_size})")
    if in_size < 1:
        raise ResampleError("empty source axis")
    scale = in_size / out_size
    support = max(scale, 1.0)
    radius = filt.radius * support
    centers = (np.arange(out_size, dtype=np.float64) + 0.5) * scale - 0.5
    first = np.ceil(centers - radius).astype(np.int64)
    ntaps = int(math.floor(2.0 * radius)) + 2
    k = first[:, None] + np.arange(ntaps)[None, :]
    t = (k - centers[:, None]) / support
    w = _kernel(filt, t)
    sums = w.sum(axis=1, keepdims=True)
    if np.any(sums == 0.0):
        raise ResampleError("degenerate filter window")
    w = w / sums
    idx = np.clip(k, 0, in_size - 1).astype(np.intp)
    return idx, w.astype(np.float32)


def _resize_axis(plane: np.ndarray, out_size: int, filt: FilterKind, axis: int) -> np.ndarray:
    idx, w = axis_weights(plane.shape[axis], out_size, filt)
    # Fixed tap-major accumulation order keeps results identical regardless of
    # available threads.
    if axis == 0:
        acc = np.zeros((out_size,) + plane.shape[1:], dtype=np.float32)
        for t in range(idx.shape[1]):
            acc += w[:, t].reshape(-1, *([1] * (plane.ndim - 1))) * plane[idx[:, t]]
    else:
        acc = np.zeros((plane.shape[0], out_size) + plane.shape[2:], dtype=np.float32)
        for t in range(idx.shape[1]):
            wt = w[:, t].reshape(1, -1, *([1] * (plane.ndim - 2)))
            acc += wt * plane[:, idx[:, t]]
    return acc


def resize_plane_float(plane: np.ndarray, target_w: int, target_h: int,
                       filt: FilterKind = BILINEAR) -> np.ndarray:
    """Resize a float32 2-D or (H, W, C) array; no clamping, no rounding.

    Used for network feature maps and loss evaluation; the vertical axis is
    resized first, then the horizontal one.
    """
    if target_w < 1 or target_h < 1:
        raise ResampleError(f"zero-sized target {target_w}x{target_h}")
    out = np.ascontiguousarray(plane, dtype=np.float32)
    if out.shape[0] != target_h:
        out = _resize_axis(out, target_h, filt, axis=0)
    if out.shape[1] != target_w:
        out = _resize_axis(out, target_w, filt, axis=1)
    return out


def round_u8(values: np.ndarray) -> np.ndarray:
    """Clamp to [0, 255] and round half away from zero to uint8."""
    return np.floor(np.clip(values, 0.0, 255.0) + 0.5).astype(np.uint8)


def _resize_axis_fixed8(plane: np.ndarray, out_size: int, filt: FilterKind, axis: int) -> np.ndarray:
    # Q8 fixed-point path: fast, approximate, excluded from bit-exact claims.
    idx, w = axis_weights(plane.shape[axis], out_size, filt)
    wq = np.round(w.astype(np.float64) * 256.0).astype(np.int32)
    src = plane.astype(np.int32)
    if axis == 0:
        acc = np.zeros((out_size,) + plane.shape[1:], dtype=np.int32)
        for t in range(idx.shape[1]):
            acc += wq[:, t].reshape(-1, *([1] * (plane.ndim - 1))) * src[idx[:, t]]
    else:
        acc = np.zeros((plane.shape[0], out_size) + plane.shape[2:], dtype=np.int32)
        for t in range(idx.shape[1]):
            wt = wq[:, t].reshape(1, -1, *([1] * (plane.ndim - 2)))
            acc += wt * src[:, idx[:, t]]
    return np.clip((acc + 128) >> 8, 0, 255).astype(np.uint8)


def resize_plane(plane: np.ndarray, target_w: int, target_h: int,
                 filt: FilterKind = BILINEAR, precision: str = "float32") -> np.ndarray:
    """Resize one 8-bit sample plane to target_w x target_h."""
    if target_w < 1 or target_h < 1:
        raise ResampleError(f"zero-sized target {target_w}x{target_h}")
    if plane.shape == (target_h, target_w):
        return plane.astype(np.uint8, copy=True)
    if precision == "fixed8":
        out = plane.astype(np.uint8)
        if out.shape[0] != target_h:
            out = _resize_axis_fixed8(out, target_h, filt, axis=0)
        if out.shape[1] != target_w:
            out = _resize_axis_fixed8(out, target_w, filt, axis=1)
        return out
    if precision != "float32":
        raise ResampleError(f"unknown precision {precision!r}")
    return round_u8(resize_plane_float(plane.astype(np.float32), target_w, target_h, filt))


def _clip_plane(plane: np.ndarray, lo: int, hi: int) -> np.ndarray:
    return np.clip(plane, lo, hi).astype(np.uint8)


def legal_range(pixel_range: str) -> tuple[tuple[int, int], tuple[int, int]]:
    """(luma_lo, luma_hi), (chroma_lo, chroma_hi) for a pixel range tag."""
    if pixel_range == FULL:
        return (0, 255), (0, 255)
    return (16, 235), (16, 240)


def downscale_frame(frame: PlanarFrame, s: ScaleFactor,
                    luma_filter: FilterKind = BICUBIC,
                    chroma_filter: FilterKind = BICUBIC,
                    precision: str = "float32") -> PlanarFrame:
    """Shrink a frame by the rational factor s; chroma defaults to bicubic."""
    if s.value < 1.0:
        raise ResampleError(f"downscale_frame needs s >= 1, got {s}")
    if s == NATIVE:
        return frame.copy()
    tw, th = s.target(frame.width), s.target(frame.height)
    cw, ch = ceil_half(tw), ceil_half(th)
    return PlanarFrame(
        tw,
        th,
        resize_plane(frame.y, tw, th, luma_filter, precision),
        resize_plane(frame.cb, cw, ch, chroma_filter, precision),
        resize_plane(frame.cr, cw, ch, chroma_filter, precision),
        frame.pixel_range,
    )


def upscale_frame(frame: PlanarFrame, target_w: int, target_h: int,
                  filt: FilterKind = BILINEAR, precision: str = "float32") -> PlanarFrame:
    """Upscale all three planes with the same filter (the client-side op)."""
    if target_w < frame.width or target_h < frame.height:
        raise ResampleError(
            f"upscale target {target_w}x{target_h} below source {frame.width}x{frame.height}"
        )
    if (target_w, target_h) == (frame.width, frame.height):
        return frame.copy()
    cw, ch = ceil_half(target_w), ceil_half(target_h)
    return PlanarFrame(
        target_w,
        target_h,
        resize_plane(frame.y, target_w, target_h, filt, precision),
        resize_plane(frame.cb, cw, ch, filt, precision),
        resize_plane(frame.cr, cw, ch, filt, precision),
        frame.pixel_range,
    )
