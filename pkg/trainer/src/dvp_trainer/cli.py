"""dvp-train: fit the downscaling network and export weights/golden vectors."""

from __future__ import annotations

import argparse

import torch

from .golden import export_golden_pack
from .network import PrecodingNetwork
from .train import TrainConfig, train
from .weights_io import load_dvpw, save_dvpw


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dvp-train", description=__doc__)
    p.add_argument("--images", required=True, help="training image directory")
    p.add_argument("--iters", type=int, default=200_000,
                   help="0 skips training and exports the initialization")
    p.add_argument("--out", default="weights.dvpw")
    p.add_argument("--golden", default="", help="also export a golden pack here")
    p.add_argument("--golden-crops", type=int, default=4)
    p.add_argument("--crop", type=int, default=120)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--decay-at", type=int, default=100_000)
    p.add_argument("--lambda", dest="lam", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-flips", action="store_true")
    p.add_argument("--upscaler", default="bilinear",
                   choices=["bilinear", "bicubic", "lanczos"])
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.iters > 0:
        cfg = TrainConfig(
            image_dir=args.images,
            out_path=args.out,
            crop=args.crop,
            batch=args.batch,
            iterations=args.iters,
            lr=args.lr,
            decay_at=args.decay_at,
            lam=args.lam,
            flips=not args.no_flips,
            upscaler=args.upscaler,
            seed=args.seed,
        )
        result = train(cfg)
        print(f"trained {args.iters} iterations: loss "
              f"{result.initial_loss:.5f} -> {result.final_loss:.5f}; wrote {result.weights_path}")
        net = load_dvpw(result.weights_path)
    else:
        torch.manual_seed(args.seed)
        net = PrecodingNetwork(seed=args.seed)
        save_dvpw(net, args.out)
        print(f"wrote untrained initialization to {args.out}")
    if args.golden:
        export_golden_pack(args.golden, n_crops=args.golden_crops, crop=args.crop,
                           seed=args.seed, net=net, lam=args.lam,
                           upscaler=args.upscaler)
        print(f"golden pack at {args.golden}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
