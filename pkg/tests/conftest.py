import sys
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from dvp.frame_io import PlanarFrame, VideoSequence, ceil_half


def make_frame(width: int, height: int, seed: int = 0, pixel_range: str = "limited",
               smooth: bool = False) -> PlanarFrame:
    """Random legal-range test frame; smooth=True gives encoder-friendlier content."""
    rng = np.random.default_rng(seed)
    cw, ch = ceil_half(width), ceil_half(height)
    if smooth:
        xx, yy = np.meshgrid(np.arange(width), np.arange(height))
        base = 110 + 60 * np.sin(xx / 17.0 + seed) * np.cos(yy / 13.0)
        y = np.clip(base + rng.normal(0, 6, (height, width)), 16, 235)
        y = np.floor(y + 0.5).astype(np.uint8)
        cb = np.full((ch, cw), 128, dtype=np.uint8)
        cr = np.full((ch, cw), 120, dtype=np.uint8)
    else:
        y = rng.integers(16, 236, (height, width), dtype=np.uint8)
        cb = rng.integers(16, 241, (ch, cw), dtype=np.uint8)
        cr = rng.integers(16, 241, (ch, cw), dtype=np.uint8)
    return PlanarFrame(width, height, y, cb, cr, pixel_range)


def make_video(width: int, height: int, count: int, seed: int = 0,
               fps: Fraction = Fraction(30, 1), smooth: bool = False) -> VideoSequence:
    frames = [make_frame(width, height, seed * 1000 + i, smooth=smooth) for i in range(count)]
    return VideoSequence(frames, fps)


@pytest.fixture
def small_video():
    return make_video(32, 24, 6, seed=7)
