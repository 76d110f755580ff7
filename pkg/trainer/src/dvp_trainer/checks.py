"""Self-checks: finite-difference gradient validation and a smoke train run."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch

from .data import synthetic_corpus
from .golden import synthetic_crop
from .loss import composite_loss
from .network import PrecodingNetwork
from .train import TrainConfig, TrainResult, train


def gradient_check(seed: int = 0, crop: int = 60, samples: int = 8,
                   step: float = 1e-6, lam: float = 0.5) -> float:
    """Max relative error between autograd and central differences (float64)."""
    torch.manual_seed(seed)
    net = PrecodingNetwork(seed=seed).double()
    x = torch.from_numpy(synthetic_crop(crop, seed + 1)).double()[None, None]

    loss = composite_loss(net(x), x, lam)
    loss.backward()

    rng = np.random.default_rng(seed)
    params = [p for p in net.parameters() if p.grad is not None]
    worst = 0.0
    checked = 0
    while checked < samples:
        p = params[rng.integers(len(params))]
        flat = p.detach().reshape(-1)
        idx = int(rng.integers(flat.numel()))
        auto = float(p.grad.reshape(-1)[idx])
        if abs(auto) < 1e-7:
            continue  # avoid indistinguishable-from-zero slots (L1 kinks)
        with torch.no_grad():
            orig = float(flat[idx])
            flat[idx] = orig + step
            up = float(composite_loss(net(x), x, lam))
            flat[idx] = orig - step
            down = float(composite_loss(net(x), x, lam))
            flat[idx] = orig
        fd = (up - down) / (2.0 * step)
        rel = abs(auto - fd) / max(abs(auto), abs(fd), 1e-12)
        worst = max(worst, rel)
        checked += 1
    return worst


def smoke_train_check(workdir: str | Path, iterations: int = 500,
                      seed: int = 0) -> TrainResult:
    """Short run over a 16-image synthetic corpus; loss must come down."""
    workdir = Path(workdir)
    corpus = synthetic_corpus(workdir / "corpus", count=16, size=140, seed=seed)
    cfg = TrainConfig(
        image_dir=str(corpus),
        out_path=str(workdir / "smoke.dvpw"),
        crop=60,
        batch=2,
        iterations=iterations,
        decay_at=max(1, iterations * 4 // 5),
        seed=seed,
        log_every=max(1, iterations // 4),
    )
    return train(cfg, log=None)
