"""Training data: images to normalized limited-range luma crops."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
from PIL import Image

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".webp"}


class CorpusError(RuntimeError):
    pass


def rgb_to_luma_norm(rgb: np.ndarray) -> np.ndarray:
    """RGB [0,255] -> BT.601 limited-range Y, normalized by /255."""
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    y = 16.0 + (219.0 / 255.0) * (0.299 * r + 0.587 * g + 0.114 * b)
    return (y / 255.0).astype(np.float32)


def load_luma_images(image_dir: str | Path, min_size: int) -> list[np.ndarray]:
    paths = sorted(
        p for p in Path(image_dir).iterdir() if p.suffix.lower() in IMAGE_SUFFIXES
    )
    if not paths:
        raise CorpusError(f"no training images under {image_dir}")
    planes = []
    for p in paths:
        with Image.open(p) as img:
            rgb = np.asarray(img.convert("RGB"), dtype=np.float64)
        if min(rgb.shape[:2]) < min_size:
            continue
        planes.append(rgb_to_luma_norm(rgb))
    if not planes:
        raise CorpusError(f"no image under {image_dir} is at least {min_size}px")
    return planes


class CropSampler:
    """Random crops with flip augmentation, deterministic under a seed."""

    def __init__(self, planes: list[np.ndarray], crop: int, batch: int,
                 flips: bool = True, seed: int = 0):
        self.planes = planes
        self.crop = crop
        self.batch = batch
        self.flips = flips
        self.rng = np.random.default_rng(seed)

    def next_batch(self) -> torch.Tensor:
        out = np.empty((self.batch, 1, self.crop, self.crop), dtype=np.float32)
        for i in range(self.batch):
            plane = self.planes[self.rng.integers(len(self.planes))]
            h, w = plane.shape
            top = int(self.rng.integers(0, h - self.crop + 1))
            left = int(self.rng.integers(0, w - self.crop + 1))
            patch = plane[top : top + self.crop, left : left + self.crop]
            if self.flips:
                if self.rng.random() < 0.5:
                    patch = patch[:, ::-1]
                if self.rng.random() < 0.5:
                    patch = patch[::-1, :]
            out[i, 0] = patch
        return torch.from_numpy(out)


def synthetic_corpus(directory: str | Path, count: int = 16, size: int = 140,
                     seed: int = 0) -> Path:
    """Writes a small corpus of structured noise images (for smoke runs)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    xx, yy = np.meshgrid(np.arange(size), np.arange(size))
    for i in range(count):
        base = (
            128
            + 70 * np.sin(xx / rng.uniform(5, 25) + rng.uniform(0, 6))
            * np.cos(yy / rng.uniform(5, 25))
            + rng.normal(0, 12, (size, size))
        )
        plane = np.clip(base, 0, 255).astype(np.uint8)
        rgb = np.stack([plane, np.roll(plane, i, axis=0), plane[::-1]], axis=-1)
        Image.fromarray(rgb, "RGB").save(directory / f"synthetic_{i:03d}.png")
    return directory
