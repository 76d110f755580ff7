#!/usr/bin/env python3
"""Walk one GOP through the mode-selection stages and print every RD point.

Shows the raw per-scale probes, what monotonicity pruning and the convex
hull keep, and the final constant-bitrate remap with the winning mode.

Example:
    python scripts/rd_walkthrough.py --rate 4k --size 96x64
"""

import argparse
from fractions import Fraction

from make_test_clip import synth_frame

from dvp.cli import parse_rate
from dvp.codec_driver import default_profile
from dvp.frame_io import VideoSequence, segment_gops
from dvp.mode_select import FilterPrecoder, NetPrecoder, select_mode
from dvp.precoder_net import CANONICAL_SCALES, build_network
from dvp.resampler import BICUBIC


def show(title, points, selected=None):
    print(f"{title}:")
    for p in sorted(points, key=lambda p: p.rate):
        star = "  <== selected" if selected is not None and p.scale == selected else ""
        print(f"   s={str(p.scale):>4}  rate={p.rate:>10.1f}  distortion={p.distortion:>9.3f}{star}")


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--rate", default="4k")
    ap.add_argument("--size", default="96x64")
    ap.add_argument("--frames", type=int, default=8)
    ap.add_argument("--footprint", type=int, default=2)
    ap.add_argument("--precoder", default="bicubic", help="bicubic | net")
    args = ap.parse_args()

    w, h = (int(v) for v in args.size.lower().split("x"))
    frames = [synth_frame(w, h, t, seed=3) for t in range(args.frames)]
    gop = segment_gops(VideoSequence(frames, Fraction(30, 1)), args.frames)[0]
    profile = default_profile("mock")
    precoder = (NetPrecoder(build_network("random", seed=7))
                if args.precoder == "net" else FilterPrecoder(BICUBIC))

    decision = select_mode(gop, CANONICAL_SCALES, precoder, profile,
                           parse_rate(args.rate), footprint_n=args.footprint)
    log = decision.stage_log
    show("all RD points (one VBV probe per scale)", log.all_points)
    show("after monotonicity pruning", log.after_monotone)
    show("after lower convex hull", log.after_hull)
    print(f"remap bitrate (mean of survivors): {log.cbr_rate:.1f}")
    show("after CBR remap", log.remapped_points, selected=decision.selected)
    print(f"winner: s = {decision.selected}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
