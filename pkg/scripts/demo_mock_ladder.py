#!/usr/bin/env python3
"""End-to-end ladder demo on the mock codec: synthesize a clip, pick a
downscale mode per GOP and rung, and print the manifest with quality numbers.

Example:
    python scripts/demo_mock_ladder.py --bitrates 2k,8k,32k --gop 10
"""

import argparse
import tempfile
from fractions import Fraction
from pathlib import Path

from make_test_clip import synth_frame

from dvp.cli import parse_rates
from dvp.codec_driver import default_profile
from dvp.frame_io import VideoSequence, write_y4m
from dvp.pipeline import LadderConfig, run_ladder
from dvp.precoder_net import CANONICAL_SCALES, build_network, save_weights
from dvp.resampler import BICUBIC


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--bitrates", default="2k,8k,32k")
    ap.add_argument("--size", default="96x64")
    ap.add_argument("--frames", type=int, default=30)
    ap.add_argument("--gop", type=int, default=10)
    ap.add_argument("--footprint", type=int, default=2)
    ap.add_argument("--precoder", default="bicubic", help="bicubic | net")
    ap.add_argument("--weights", default="", help="DVPW file for --precoder net; random init if omitted")
    ap.add_argument("--out", default="")
    args = ap.parse_args()

    out_dir = Path(args.out) if args.out else Path(tempfile.mkdtemp(prefix="dvp-demo-"))
    w, h = (int(v) for v in args.size.lower().split("x"))
    frames = [synth_frame(w, h, t, seed=1) for t in range(args.frames)]
    src = out_dir / "source.y4m"
    out_dir.mkdir(parents=True, exist_ok=True)
    write_y4m(VideoSequence(frames, Fraction(30, 1)), src)

    weights = None
    luma_filter = BICUBIC if args.precoder != "net" else None
    if args.precoder == "net":
        weights = Path(args.weights) if args.weights else out_dir / "random.dvpw"
        if not args.weights:
            save_weights(build_network("random", seed=7), weights)

    cfg = LadderConfig(
        bitrates=parse_rates(args.bitrates),
        codec=default_profile("mock"),
        scales=list(CANONICAL_SCALES),
        gop_len=args.gop,
        footprint_n=args.footprint,
        weights_path=weights,
        luma_filter=luma_filter,
        output_dir=out_dir,
    )
    result = run_ladder(src, cfg)
    print(f"manifest: {result.manifest_path}")
    print(f"{'gop':>4} {'bitrate':>9} {'scale':>6} {'encoded':>10} {'psnr':>7}")
    report = {(c.entry.gop_index, c.entry.bitrate): c for c in result.cells}
    for entry in result.manifest:
        if "error" in entry:
            print(f"{entry['gop_index']:>4} {entry['bitrate']:>9} ERROR {entry['error']}")
            continue
        cell = report[(entry["gop_index"], entry["bitrate"])]
        psnr = f"{cell.sequence_psnr:.2f}" if cell.sequence_psnr else "-"
        print(f"{entry['gop_index']:>4} {entry['bitrate']:>9} {entry['scale']:>6} "
              f"{entry['encoded_width']}x{entry['encoded_height']:<6} {psnr:>7}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
