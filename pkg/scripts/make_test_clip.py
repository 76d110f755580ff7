#!/usr/bin/env python3
"""Synthesize a Y4M test clip (drifting gradients plus mild texture).

Example:
    python scripts/make_test_clip.py --out clip.y4m --size 320x180 --frames 90
"""

import argparse
from fractions import Fraction

import numpy as np

from dvp.frame_io import PlanarFrame, VideoSequence, ceil_half, write_y4m


def synth_frame(width: int, height: int, t: int, seed: int) -> PlanarFrame:
    rng = np.random.default_rng(seed * 100_003 + t)
    xx, yy = np.meshgrid(np.arange(width), np.arange(height))
    base = (
        120
        + 55 * np.sin(xx / 23.0 + t * 0.21)
        + 40 * np.cos((yy + 2 * t) / 17.0)
        + rng.normal(0, 5, (height, width))
    )
    y = np.floor(np.clip(base, 16, 235) + 0.5).astype(np.uint8)
    cw, ch = ceil_half(width), ceil_half(height)
    cb = np.full((ch, cw), 128, dtype=np.uint8)
    cr = np.clip(118 + 12 * np.sin(t / 9.0), 16, 240) * np.ones((ch, cw))
    return PlanarFrame(width, height, y, cb, np.floor(cr + 0.5).astype(np.uint8))


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="clip.y4m")
    ap.add_argument("--size", default="320x180")
    ap.add_argument("--frames", type=int, default=90)
    ap.add_argument("--fps", type=int, default=30)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    w, h = (int(v) for v in args.size.lower().split("x"))
    frames = [synth_frame(w, h, t, args.seed) for t in range(args.frames)]
    write_y4m(VideoSequence(frames, Fraction(args.fps, 1)), args.out)
    print(f"wrote {args.frames} frames of {w}x{h} to {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
