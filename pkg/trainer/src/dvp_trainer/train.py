"""Training loop: Adam with a step decay, flips, crops, no codec in the loop."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import torch

from .data import CropSampler, load_luma_images
from .loss import composite_loss
from .network import PrecodingNetwork
from .topology import CROP_MULTIPLE
from .weights_io import save_dvpw


class DivergenceError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    image_dir: str
    out_path: str = "weights.dvpw"
    crop: int = 120
    batch: int = 32
    iterations: int = 200_000
    lr: float = 1e-3
    decay_at: int = 100_000
    decay_gamma: float = 0.1
    lam: float = 0.5
    flips: bool = True
    upscaler: str = "bilinear"
    down_kind: str = "bilinear"
    seed: int = 0
    log_every: int = 100

    def __post_init__(self):
        if self.crop % CROP_MULTIPLE:
            raise ValueError(f"crop must be a multiple of {CROP_MULTIPLE}, got {self.crop}")
        if self.batch < 1 or self.iterations < 1:
            raise ValueError("batch and iterations must be positive")


@dataclass
class TrainResult:
    weights_path: Path
    initial_loss: float
    final_loss: float
    history: list[float] = field(default_factory=list)


def _smoothed(history: list[float], span: int) -> float:
    tail = history[-span:]
    return sum(tail) / len(tail)


def train(cfg: TrainConfig, log=print) -> TrainResult:
    """Optimize the network and export a weight file."""
    torch.manual_seed(cfg.seed)
    planes = load_luma_images(cfg.image_dir, cfg.crop)
    sampler = CropSampler(planes, cfg.crop, cfg.batch, cfg.flips, cfg.seed)
    net = PrecodingNetwork(down_kind=cfg.down_kind, seed=cfg.seed)
    opt = torch.optim.Adam(net.parameters(), lr=cfg.lr)
    sched = torch.optim.lr_scheduler.MultiStepLR(
        opt, milestones=[cfg.decay_at], gamma=cfg.decay_gamma
    )

    span = max(1, min(50, cfg.iterations // 10))
    history: list[float] = []
    for it in range(cfg.iterations):
        batch = sampler.next_batch()
        out = net(batch)
        loss = composite_loss(out, batch, cfg.lam, cfg.upscaler)
        value = float(loss.detach())
        if not math.isfinite(value):
            raise DivergenceError(
                f"loss became {value} at iteration {it} (lr={sched.get_last_lr()[0]:g}); "
                "lower the learning rate or check the corpus"
            )
        opt.zero_grad()
        loss.backward()
        opt.step()
        sched.step()
        history.append(value)
        if log is not None and (it % cfg.log_every == 0 or it == cfg.iterations - 1):
            log(f"iter {it:>7}  loss {value:.5f}  smoothed {_smoothed(history, span):.5f}")

    path = save_dvpw(net, cfg.out_path)
    return TrainResult(
        weights_path=path,
        initial_loss=_smoothed(history[:span], span),
        final_loss=_smoothed(history, span),
        history=history,
    )
