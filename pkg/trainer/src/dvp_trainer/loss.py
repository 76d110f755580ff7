"""Composite reconstruction loss against linear upscaling.

Every downscaled representation is brought back to the input resolution with
the linear upscaler and charged its L1 error plus a weighted L1 error of the
forward-difference gradients (edge preservation).  No codec is involved, so
the model stays codec-agnostic.
"""

from __future__ import annotations

from fractions import Fraction

import torch

from .resample import resize_bchw


def _fwd_diff(x: torch.Tensor, dim: int) -> torch.Tensor:
    # Forward difference with clamp-to-edge: last row/column becomes zero.
    idx = [slice(None)] * x.ndim
    idx[dim] = slice(-1, None)
    return torch.diff(x, dim=dim, append=x[tuple(idx)])


def gradient_term(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    gx = (_fwd_diff(a, -1) - _fwd_diff(b, -1)).abs().mean()
    gy = (_fwd_diff(a, -2) - _fwd_diff(b, -2)).abs().mean()
    return gx + gy


def composite_loss(downscaled: dict[Fraction, torch.Tensor], target: torch.Tensor,
                   lam: float, upscaler: str = "bilinear") -> torch.Tensor:
    """Sum over all scales (and thereby all streams) of L1 + lam * gradient L1."""
    h, w = target.shape[-2:]
    total = target.new_zeros(())
    for s, y in downscaled.items():
        up = resize_bchw(y, h, w, upscaler)
        total = total + (up - target).abs().mean()
        if lam > 0:
            total = total + lam * gradient_term(up, target)
    return total


def upscale_all(downscaled: dict[Fraction, torch.Tensor], h: int, w: int,
                upscaler: str = "bilinear") -> dict[Fraction, torch.Tensor]:
    return {s: resize_bchw(y, h, w, upscaler) for s, y in downscaled.items()}
