"""Command line interface: encode ladders, inspect metrics, debug pruning,
and report the network budget."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from fractions import Fraction
from pathlib import Path

from .codec_driver import default_profile
from .frame_io import read_y4m
from .metrics import sequence_quality, vmaf_external
from .mode_select import RDPoint, lower_convex_hull, prune_monotone
from .pipeline import LadderConfig, run_ladder
from .precoder_net import (
    CANONICAL_SCALES,
    build_network,
    count_params_and_macs,
    load_weights,
)
from .resampler import ScaleFactor, parse_filter


def parse_rate(text: str) -> int:
    t = text.strip().lower()
    mult = 1
    if t.endswith("k"):
        mult, t = 1000, t[:-1]
    elif t.endswith("m"):
        mult, t = 1_000_000, t[:-1]
    return round(float(t) * mult)


def parse_rates(text: str) -> list[int]:
    return [parse_rate(tok) for tok in text.split(",") if tok.strip()]


def parse_scales(text: str) -> list[ScaleFactor]:
    if text.strip().lower() == "all":
        return list(CANONICAL_SCALES)
    return [ScaleFactor.parse(tok) for tok in text.split(",") if tok.strip()]


def parse_dims(text: str) -> tuple[int, int]:
    w, _, h = text.lower().partition("x")
    return int(w), int(h)


def parse_fps(text: str) -> Fraction:
    num, _, den = text.partition(":")
    return Fraction(int(num), int(den) if den else 1)


def load_config_file(path: str) -> dict:
    """key=value lines, # comments; mirrors the long flag names."""
    out = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SystemExit(f"config line without '=': {raw!r}")
        key, val = line.split("=", 1)
        out[key.strip().replace("-", "_")] = val.strip()
    return out


def _merge_config(args: argparse.Namespace, parser_defaults: dict) -> argparse.Namespace:
    # Flags win over the config file, which wins over built-in defaults.
    if not getattr(args, "config", None):
        for key, default in parser_defaults.items():
            if getattr(args, key, None) is None:
                setattr(args, key, default)
        return args
    file_values = load_config_file(args.config)
    for key, default in parser_defaults.items():
        if getattr(args, key, None) is not None:
            continue
        if key in file_values:
            setattr(args, key, file_values[key])
        else:
            setattr(args, key, default)
    return args


_ENCODE_DEFAULTS = {
    "input": "",
    "codec": "mock",
    "bitrates": "500k,1500k,5000k",
    "gop": "90",
    "scales": "all",
    "footprint": "5",
    "upscaler": "bilinear",
    "chroma_downscaler": "bicubic",
    "out": "dvp-out",
    "jobs": "1",
    "preset": "",
    "weights": "",
    "precoder": "net",
    "manifest": "",
    "raw_dims": "",
    "raw_fps": "25",
    "encoder_template": "",
    "decoder_template": "",
    "cbr_encoder_template": "",
    "cache": "",
    "full_remap": "",
}


def cmd_encode(args: argparse.Namespace) -> int:
    if args.full_remap is False:
        args.full_remap = None  # let the config file supply it
    args = _merge_config(args, _ENCODE_DEFAULTS)
    if not args.input:
        raise SystemExit("encode needs --input (flag or config file)")
    args.full_remap = str(args.full_remap).lower() in ("1", "true", "yes")
    profile = default_profile(args.codec, args.preset or None)
    if args.encoder_template:
        profile.encode_vbv_template = args.encoder_template
    if args.cbr_encoder_template:
        profile.encode_cbr_template = args.cbr_encoder_template
    if args.decoder_template:
        profile.decode_template = args.decoder_template

    luma_filter = None
    weights_path = Path(args.weights) if args.weights else None
    if args.precoder != "net":
        luma_filter = parse_filter(args.precoder)
        weights_path = None

    cfg = LadderConfig(
        bitrates=parse_rates(args.bitrates),
        codec=profile,
        scales=parse_scales(args.scales),
        gop_len=int(args.gop),
        footprint_n=int(args.footprint),
        upscaler=parse_filter(args.upscaler),
        chroma_filter=parse_filter(args.chroma_downscaler),
        weights_path=weights_path,
        output_dir=Path(args.out),
        cache_dir=Path(args.cache) if args.cache else None,
        jobs=int(args.jobs),
        full_remap=bool(args.full_remap),
        luma_filter=luma_filter,
    )
    raw_dims = parse_dims(args.raw_dims) if args.raw_dims else None
    result = run_ladder(args.input, cfg, raw_dims=raw_dims,
                        raw_fps=parse_fps(args.raw_fps))
    if args.manifest:
        Path(args.manifest).parent.mkdir(parents=True, exist_ok=True)
        Path(args.manifest).write_text(result.manifest_path.read_text())
    ok = len(result.cells)
    print(f"{ok} cells encoded, {len(result.errors)} failed -> {result.manifest_path}")
    for err in result.errors:
        print(f"  gop {err['gop_index']} @ {err['bitrate']}: {err['error']}", file=sys.stderr)
    return 0 if not result.errors else 1


def cmd_metrics(args: argparse.Namespace) -> int:
    ref = read_y4m(args.reference)
    dist = read_y4m(args.distorted)
    report = sequence_quality(ref.frames, dist.frames)
    doc = {
        "sequence_psnr": report.sequence_psnr,
        "frames": len(report.per_frame),
    }
    if args.vmaf_template:
        status = vmaf_external(args.reference, args.distorted, args.vmaf_template,
                               ref.frames[0].width, ref.frames[0].height)
        doc["vmaf"] = status.score if status.available else None
        if not status.available:
            doc["vmaf_status"] = status.reason
    print(json.dumps(doc, indent=1))
    if args.json:
        Path(args.json).write_text(json.dumps(doc, indent=1) + "\n")
    return 0


def cmd_hull(args: argparse.Namespace) -> int:
    points = []
    with open(args.points, newline="") as fh:
        for row in csv.reader(fh):
            if not row or not row[0].strip() or row[0].strip().startswith("#"):
                continue
            try:
                rate, dist = float(row[0]), float(row[1])
            except ValueError:
                continue  # header
            scale = ScaleFactor.parse(row[2]) if len(row) > 2 else ScaleFactor(1)
            points.append(RDPoint(rate, dist, None, scale))
    if not points:
        raise SystemExit("no points in CSV (expected rate,distortion[,scale])")

    def show(stage: str, pts):
        print(f"{stage} ({len(pts)}):")
        for p in pts:
            print(f"  rate={p.rate:.1f} distortion={p.distortion:.4f} scale={p.scale}")

    show("input", points)
    monotone = prune_monotone(points)
    show("after monotonicity pruning", monotone)
    hull = lower_convex_hull(monotone)
    show("after convex hull", hull)
    cbr = sum(p.rate for p in hull) / len(hull)
    print(f"remap bitrate (mean of survivors): {cbr:.1f}")
    return 0


def cmd_netinfo(args: argparse.Namespace) -> int:
    if args.weights:
        net = load_weights(args.weights)
        source = str(args.weights)
    else:
        net = build_network("zeros")
        source = "canonical topology"
    budget = count_params_and_macs(net, args.width, args.height)
    print(f"network: {source}")
    print(f"parameters: {budget.params_total} "
          f"({budget.params_weights_only} in convolution kernels)")
    print(f"per-block parameters: {budget.block_params} "
          f"({budget.block_weight_params} kernel weights)")
    print(f"total MACs for {args.width}x{args.height}, all scales: "
          f"{budget.macs_total / 1e9:.3f}G")
    from .precoder_net import block_macs

    print(f"single block on a full-resolution map: "
          f"{block_macs(net, args.width, args.height) / 1e9:.3f}G")
    print("per-scale MACs (root + stream prefix + projection):")
    for s, macs in sorted(budget.macs_per_scale.items(), key=lambda kv: kv[0].value):
        print(f"  s={str(s):>4}: {macs / 1e9:.3f}G")
    if args.json:
        doc = {
            "params_total": budget.params_total,
            "params_weights_only": budget.params_weights_only,
            "block_params": budget.block_params,
            "block_weight_params": budget.block_weight_params,
            "macs_total": budget.macs_total,
            "block_macs_fullres": block_macs(net, args.width, args.height),
            "macs_per_scale": {str(s): m for s, m in budget.macs_per_scale.items()},
        }
        Path(args.json).write_text(json.dumps(doc, indent=1) + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dvp", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    enc = sub.add_parser("encode", help="run the full ladder over a source")
    enc.add_argument("--input", default=None, help="Y4M file (or raw .yuv with --raw-dims)")
    enc.add_argument("--codec", choices=["h264", "hevc", "vp9", "mock"], default=None)
    enc.add_argument("--bitrates", default=None, help="comma list, e.g. 500k,1500k,5000k")
    enc.add_argument("--gop", default=None, help="frames per GOP")
    enc.add_argument("--scales", default=None, help="'all' or comma list like 1,3/2,2")
    enc.add_argument("--footprint", default=None, help="evaluate every n-th frame")
    enc.add_argument("--weights", default=None, help="network weight file (.dvpw)")
    enc.add_argument("--precoder", default=None,
                     help="net | bilinear | bicubic | lanczos (classical fallback)")
    enc.add_argument("--upscaler", default=None, choices=["bilinear", "bicubic", "lanczos"])
    enc.add_argument("--chroma-downscaler", dest="chroma_downscaler", default=None)
    enc.add_argument("--out", default=None)
    enc.add_argument("--manifest", default=None, help="extra manifest copy location")
    enc.add_argument("--jobs", default=None)
    enc.add_argument("--preset", default=None)
    enc.add_argument("--full-remap", action="store_true",
                     help="remap survivors over the whole GOP, not the footprint")
    enc.add_argument("--encoder-template", default=None)
    enc.add_argument("--cbr-encoder-template", default=None)
    enc.add_argument("--decoder-template", default=None)
    enc.add_argument("--raw-dims", dest="raw_dims", default=None, help="WxH for raw .yuv input")
    enc.add_argument("--raw-fps", dest="raw_fps", default=None, help="num[:den]")
    enc.add_argument("--cache", default=None, help="cache directory (default out/cache)")
    enc.add_argument("--config", default=None, help="key=value file mirroring these flags")
    enc.set_defaults(func=cmd_encode)

    met = sub.add_parser("metrics", help="PSNR (and optional VMAF) between two videos")
    met.add_argument("--reference", required=True)
    met.add_argument("--distorted", required=True)
    met.add_argument("--vmaf-template", dest="vmaf_template", default="",
                     help="command with {REF} {DIS} {W} {H} {OUT}")
    met.add_argument("--json", default="", help="also write the report here")
    met.set_defaults(func=cmd_metrics)

    hull = sub.add_parser("hull", help="walk the pruning stages over a CSV of RD points")
    hull.add_argument("--points", required=True, help="CSV of rate,distortion[,scale]")
    hull.set_defaults(func=cmd_hull)

    ninfo = sub.add_parser("netinfo", help="analytic parameter and MAC budget")
    ninfo.add_argument("--weights", default="", help="validate a weight file (optional)")
    ninfo.add_argument("--width", type=int, default=1920)
    ninfo.add_argument("--height", type=int, default=1080)
    ninfo.add_argument("--json", default="")
    ninfo.set_defaults(func=cmd_netinfo)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
