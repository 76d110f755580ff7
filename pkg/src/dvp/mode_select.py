"""Per-GOP adaptive downscale-mode selection on the rate-distortion plane.

One candidate encode per scale gives one RD point per mode.  Points that
break rate-distortion monotonicity are dropped, the survivors are reduced to
their lower convex hull, and the remaining modes are re-encoded at a common
constant bitrate (the mean of the surviving rates) so their distortions are
directly comparable.  The minimum-distortion survivor wins.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from tempfile import TemporaryDirectory
from typing import Iterable, Sequence

import numpy as np

from .codec_driver import (
    CBR,
    CodecProfile,
    decode,
    encode,
    run_parallel,
    vbv_for_scale,
)
from .frame_io import FootprintView, GopSegment, PlanarFrame, footprint
from .metrics import sequence_mse
from .precoder_net import NetworkWeights, precode_frame
from .resampler import (
    BICUBIC,
    BILINEAR,
    FilterKind,
    ScaleFactor,
    downscale_frame,
    upscale_frame,
)


class ModeSelectionError(RuntimeError):
    def __init__(self, message: str, scale: ScaleFactor | None = None):
        super().__init__(message)
        self.scale = scale


@dataclass
class PrecodedGop:
    """The downscaled frames of one GOP at one scale (Algorithm input h)."""

    scale: ScaleFactor
    frames: tuple[PlanarFrame, ...]


@dataclass(frozen=True)
class RDPoint:
    rate: float  # bits/s
    distortion: float  # MSE at native resolution
    gop_handle: PrecodedGop | None
    scale: ScaleFactor

    def __post_init__(self):
        if self.rate <= 0:
            raise ValueError("RD point needs a positive rate")
        if self.distortion < 0:
            raise ValueError("RD point needs non-negative distortion")


@dataclass
class StageLog:
    all_points: list[RDPoint]
    after_monotone: list[RDPoint]
    after_hull: list[RDPoint]
    cbr_rate: float
    remapped_points: list[RDPoint]


@dataclass
class ModeDecision:
    selected: ScaleFactor
    selected_handle: PrecodedGop | None
    stage_log: StageLog


# ---------------------------------------------------------------------------
# Precoders: the network or a classical filter

class Precoder:
    """Maps frames to their downscaled version at a requested scale."""

    def precode(self, frames: Sequence[PlanarFrame], scale: ScaleFactor) -> PrecodedGop:
        raise NotImplementedError

    def describe(self) -> str:
        raise NotImplementedError


class NetPrecoder(Precoder):
    def __init__(self, weights: NetworkWeights, chroma_filter: FilterKind = BICUBIC,
                 down_filter: FilterKind = BILINEAR):
        self.weights = weights
        self.chroma_filter = chroma_filter
        self.down_filter = down_filter

    def precode(self, frames, scale):
        out = [
            precode_frame(f, self.weights, [scale], self.chroma_filter, self.down_filter)[scale]
            for f in frames
        ]
        return PrecodedGop(scale, tuple(out))

    def describe(self) -> str:
        return "network"


class FilterPrecoder(Precoder):
    def __init__(self, luma_filter: FilterKind = BICUBIC,
                 chroma_filter: FilterKind = BICUBIC):
        self.luma_filter = luma_filter
        self.chroma_filter = chroma_filter

    def precode(self, frames, scale):
        out = [downscale_frame(f, scale, self.luma_filter, self.chroma_filter) for f in frames]
        return PrecodedGop(scale, tuple(out))

    def describe(self) -> str:
        return f"filter:{self.luma_filter}"


def as_precoder(source: Precoder | NetworkWeights | FilterKind) -> Precoder:
    if isinstance(source, Precoder):
        return source
    if isinstance(source, NetworkWeights):
        return NetPrecoder(source)
    return FilterPrecoder(source)


# ---------------------------------------------------------------------------
# Step 1: RD point extraction

def _measure(handle: PrecodedGop, reference: Sequence[PlanarFrame], profile: CodecProfile,
             rc, fps: Fraction, upscaler: FilterKind, workdir: Path, tag: str) -> RDPoint:
    native_w, native_h = reference[0].width, reference[0].height
    out = workdir / f"{tag}{profile.bitstream_suffix}"
    enc = encode(handle.frames, profile, rc, fps, out, scale=handle.scale)
    dec = decode(enc, profile)
    up = [upscale_frame(f, native_w, native_h, upscaler) for f in dec]
    d = sequence_mse(reference, up)
    # A perfect reproduction would put distortion at exactly 0, which the RD
    # plane cannot represent meaningfully; epsilon keeps the point usable.
    return RDPoint(enc.measured_rate, max(d, 1e-12), handle, handle.scale)


def extract_rd_points(gop: GopSegment | FootprintView, scales: Iterable[ScaleFactor],
                      precoder: Precoder | NetworkWeights | FilterKind,
                      profile: CodecProfile, target_rate: int,
                      footprint_n: int = 1, upscaler: FilterKind = BILINEAR,
                      jobs: int = 1, workdir: Path | None = None) -> list[RDPoint]:
    """One candidate VBV encode per scale over the footprinted GOP."""
    scales = sorted(set(scales), key=lambda s: s.value)
    if not scales:
        raise ModeSelectionError("no scales to evaluate")
    if isinstance(gop, FootprintView):
        frames, fps = gop.frames, gop.parent.fps
    else:
        view = footprint(gop, footprint_n)
        frames, fps = view.frames, gop.fps
    pc = as_precoder(precoder)

    def probe(scale: ScaleFactor, base: Path) -> RDPoint:
        try:
            handle = pc.precode(frames, scale)
            rc = vbv_for_scale(profile, scale, target_rate)
            return _measure(handle, frames, profile, rc, fps, upscaler,
                            base, f"probe_s{scale.num}_{scale.den}")
        except Exception as e:
            raise ModeSelectionError(f"scale {scale}: {e}", scale=scale) from e

    if workdir is not None:
        base = Path(workdir)
        base.mkdir(parents=True, exist_ok=True)
        return run_parallel([lambda s=s: probe(s, base) for s in scales], jobs)
    with TemporaryDirectory(prefix="dvp-rd-") as tmp:
        return run_parallel([lambda s=s: probe(s, Path(tmp)) for s in scales], jobs)


# ---------------------------------------------------------------------------
# Step 2: pruning

def _sort_key(p: RDPoint):
    # Equal rates order by ascending distortion, then descending scale.
    return (p.rate, p.distortion, -p.scale.value)


def prune_monotone(points: Iterable[RDPoint]) -> list[RDPoint]:
    """Keep only points forming a strictly decreasing distortion-over-rate run.

    The lowest-rate point always survives; each later point survives only if
    it strictly improves on the best distortion seen so far.
    """
    ordered = sorted(points, key=_sort_key)
    if not ordered:
        raise ModeSelectionError("no RD points to prune")
    kept = [ordered[0]]
    best = ordered[0].distortion
    for p in ordered[1:]:
        if p.distortion < best:
            kept.append(p)
            best = p.distortion
    return kept


def lower_convex_hull(points: Sequence[RDPoint]) -> list[RDPoint]:
    """Lower convex hull of (rate, distortion) points.

    Expects the prune_monotone output (rates strictly rising, distortions
    strictly falling).  Two or fewer points pass through unchanged; interior
    points survive only if they sit strictly below the chord of their hull
    neighbours.
    """
    pts = list(points)
    if len(pts) <= 2:
        return pts
    hull: list[RDPoint] = []
    for p in pts:
        while len(hull) >= 2:
            a, b = hull[-2], hull[-1]
            cross = (b.distortion - a.distortion) * (p.rate - a.rate) - (
                p.distortion - a.distortion
            ) * (b.rate - a.rate)
            if cross >= 0:  # b on or above chord a-p: not strictly convex
                hull.pop()
            else:
                break
        hull.append(p)
    return hull


# ---------------------------------------------------------------------------
# Step 3: CBR remapping and final selection

def pick_min_distortion(points: Sequence[RDPoint]) -> RDPoint:
    """Minimum-distortion point; ties break toward the larger scale factor."""
    return min(points, key=lambda p: (p.distortion, -p.scale.value))


def cbr_remap_and_select(survivors: Sequence[RDPoint], reference: Sequence[PlanarFrame],
                         profile: CodecProfile, fps: Fraction,
                         upscaler: FilterKind = BILINEAR, jobs: int = 1,
                         stage_log: StageLog | None = None) -> ModeDecision:
    """Re-encode every survivor at the mean surviving rate and pick the best."""
    survivors = list(survivors)
    if not survivors:
        raise ModeSelectionError("no surviving RD points")
    cbr_rate = float(np.mean([p.rate for p in survivors]))
    rc = CBR(max(1, round(cbr_rate)))

    def remap(point: RDPoint, base: Path) -> RDPoint:
        try:
            return _measure(point.gop_handle, reference, profile, rc, fps, upscaler,
                            base, f"remap_s{point.scale.num}_{point.scale.den}")
        except Exception as e:
            raise ModeSelectionError(f"scale {point.scale}: {e}", scale=point.scale) from e

    with TemporaryDirectory(prefix="dvp-cbr-") as tmp:
        remapped = run_parallel(
            [lambda p=p: remap(p, Path(tmp)) for p in survivors], jobs)
    winner = pick_min_distortion(remapped)
    log = stage_log or StageLog(list(survivors), list(survivors), list(survivors), 0.0, [])
    log.cbr_rate = cbr_rate
    log.remapped_points = remapped
    return ModeDecision(winner.scale, winner.gop_handle, log)


# ---------------------------------------------------------------------------
# Full algorithm

def select_mode(gop: GopSegment, scales: Iterable[ScaleFactor],
                precoder: Precoder | NetworkWeights | FilterKind,
                profile: CodecProfile, target_rate: int, footprint_n: int = 1,
                upscaler: FilterKind = BILINEAR, jobs: int = 1,
                full_remap: bool = False) -> ModeDecision:
    """Pick the downscale mode for one GOP at one target bitrate.

    The remap step reuses the footprinted frames by default; full_remap
    re-precodes the whole GOP for the surviving scales before remapping.
    """
    view = footprint(gop, footprint_n)
    pc = as_precoder(precoder)
    all_points = extract_rd_points(view, scales, pc, profile, target_rate,
                                   upscaler=upscaler, jobs=jobs)
    monotone = prune_monotone(all_points)
    hull = lower_convex_hull(monotone)
    log = StageLog(all_points, monotone, hull, 0.0, [])

    reference: Sequence[PlanarFrame] = view.frames
    survivors = hull
    if full_remap and footprint_n > 1:
        reference = gop.frames
        survivors = [
            RDPoint(p.rate, p.distortion, pc.precode(gop.frames, p.scale), p.scale)
            for p in hull
        ]
    return cbr_remap_and_select(survivors, reference, profile, gop.fps, upscaler,
                                jobs=jobs, stage_log=log)
