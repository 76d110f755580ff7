"""Torch model of the multi-scale downscaling network.

Dataflow per block: a 3x3 layer absorbs the downscaling (stride for integer
ratios, linear pre-downscale otherwise), a 1x1 squeezes channels, a second
3x3 re-expands, the first layer's pre-activation output joins back through a
skip sum, and a final 1x1 returns to the shared 4-channel width where the
linearly downscaled root features are added as a global residual.
"""

from __future__ import annotations

from fractions import Fraction

import torch
from torch import nn

from .resample import resize_bchw
from .topology import (
    CH_1X1,
    CH_3X3,
    DEFAULT_PRELU,
    PRE_SKIP_PRELU,
    STREAMS,
    block_ratios,
    target_extent,
)


class PrecodingBlock(nn.Module):
    def __init__(self, ratio: Fraction, down_kind: str = "bilinear"):
        super().__init__()
        self.ratio = ratio
        self.down_kind = down_kind
        self.integer_ratio = ratio.denominator == 1
        stride = ratio.numerator if self.integer_ratio else 1
        self.conv1 = nn.Conv2d(CH_1X1, CH_3X3, 3, stride=stride, padding=1)
        self.act1 = nn.PReLU(CH_3X3, init=DEFAULT_PRELU)
        self.conv_mid = nn.Conv2d(CH_3X3, CH_1X1, 1)
        self.act_mid = nn.PReLU(CH_1X1, init=DEFAULT_PRELU)
        self.conv2 = nn.Conv2d(CH_1X1, CH_3X3, 3, padding=1)
        self.act2 = nn.PReLU(CH_3X3, init=PRE_SKIP_PRELU)
        self.conv_out = nn.Conv2d(CH_3X3, CH_1X1, 1)
        self.act_out = nn.PReLU(CH_1X1, init=DEFAULT_PRELU)

    def forward(self, x: torch.Tensor, r_ds: torch.Tensor) -> torch.Tensor:
        th, tw = r_ds.shape[-2:]
        if not self.integer_ratio:
            x = resize_bchw(x, th, tw, self.down_kind)
        c1 = self.conv1(x)
        if c1.shape[-2:] != (th, tw):
            raise ValueError(
                f"block ratio {self.ratio}: got {tuple(c1.shape[-2:])}, wanted {(th, tw)}; "
                "use crop sizes that are multiples of 60"
            )
        a = self.act1(c1)
        a = self.act_mid(self.conv_mid(a))
        a = self.act2(self.conv2(a))
        merged = a + c1
        return self.act_out(self.conv_out(merged) + r_ds)


class PrecodingStream(nn.Module):
    def __init__(self, scales, down_kind: str = "bilinear"):
        super().__init__()
        self.scales = tuple(scales)
        self.blocks = nn.ModuleList(
            PrecodingBlock(r, down_kind) for r in block_ratios(self.scales)
        )
        self.projections = nn.ModuleList(
            nn.Conv2d(CH_1X1, 1, 3, padding=1) for _ in self.scales
        )

    def forward(self, r_act: torch.Tensor, r_pre: torch.Tensor,
                down_kind: str) -> dict[Fraction, torch.Tensor]:
        h, w = r_act.shape[-2:]
        out = {}
        x = r_act
        for block, proj, s in zip(self.blocks, self.projections, self.scales):
            th, tw = target_extent(h, s), target_extent(w, s)
            r_ds = resize_bchw(r_pre, th, tw, down_kind)
            x = block(x, r_ds)
            out[s] = proj(x)
        return out


class PrecodingNetwork(nn.Module):
    """Root mapping plus the three parallel downscaling streams."""

    def __init__(self, down_kind: str = "bilinear", seed: int | None = None):
        super().__init__()
        self.down_kind = down_kind
        self.root_conv1 = nn.Conv2d(1, CH_3X3, 3, padding=1)
        self.root_act1 = nn.PReLU(CH_3X3, init=DEFAULT_PRELU)
        self.root_conv2 = nn.Conv2d(CH_3X3, CH_1X1, 1)
        self.root_act2 = nn.PReLU(CH_1X1, init=DEFAULT_PRELU)
        self.streams = nn.ModuleList(
            PrecodingStream(scales, down_kind) for scales in STREAMS
        )
        if seed is not None:
            self.init_xavier(seed)

    def init_xavier(self, seed: int) -> None:
        gen = torch.Generator().manual_seed(seed)
        for module in self.modules():
            if isinstance(module, nn.Conv2d):
                # xavier_uniform_ has no generator argument; draw manually
                fan_in = module.in_channels * module.kernel_size[0] * module.kernel_size[1]
                fan_out = module.out_channels * module.kernel_size[0] * module.kernel_size[1]
                limit = (6.0 / (fan_in + fan_out)) ** 0.5
                with torch.no_grad():
                    module.weight.uniform_(-limit, limit, generator=gen)
                    module.bias.zero_()

    def root(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        a = self.root_act1(self.root_conv1(x))
        pre = self.root_conv2(a)
        return self.root_act2(pre), pre

    def forward(self, x: torch.Tensor) -> dict[Fraction, torch.Tensor]:
        """x: (B, 1, H, W) normalized luma -> per-scale downscaled luma."""
        r_act, r_pre = self.root(x)
        out: dict[Fraction, torch.Tensor] = {}
        for stream in self.streams:
            out.update(stream(r_act, r_pre, self.down_kind))
        return out
