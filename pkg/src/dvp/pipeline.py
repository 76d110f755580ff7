"""End-to-end ladder runs: per-GOP mode selection, production encodes,
manifest emission, quality reporting and a resumable encode cache."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
import numpy as np

from .codec_driver import CBR, CodecProfile, RateControl, VBV, decode, encode, run_parallel, vbv_for_scale
from .frame_io import GopSegment, VideoSequence, read_y4m, read_yuv420, segment_gops
from .metrics import sequence_quality
from .mode_select import Precoder, as_precoder, select_mode
from .precoder_net import CANONICAL_SCALES, NetworkWeights, load_weights
from .resampler import BICUBIC, BILINEAR, FilterKind, NATIVE, ScaleFactor, upscale_frame


class PipelineError(RuntimeError):
    pass


@dataclass
class LadderConfig:
    bitrates: list[int]
    codec: CodecProfile
    scales: list[ScaleFactor] = field(default_factory=lambda: list(CANONICAL_SCALES))
    gop_len: int = 90
    footprint_n: int = 5
    upscaler: FilterKind = BILINEAR
    chroma_filter: FilterKind = BICUBIC
    weights_path: Path | None = None
    output_dir: Path = Path("dvp-out")
    cache_dir: Path | None = None  # defaults to output_dir / "cache"
    jobs: int = 1
    full_remap: bool = False
    compute_quality: bool = True
    luma_filter: FilterKind | None = None  # set to bypass the network

    def __post_init__(self):
        if not self.bitrates:
            raise PipelineError("ladder needs at least one bitrate")
        if any(b <= a for a, b in zip(self.bitrates, self.bitrates[1:])):
            raise PipelineError("bitrates must be strictly increasing")
        if self.gop_len < 1:
            raise PipelineError("gop_len must be >= 1")
        self.output_dir = Path(self.output_dir)
        if self.cache_dir is None:
            self.cache_dir = self.output_dir / "cache"
        self.cache_dir = Path(self.cache_dir)


@dataclass
class ManifestEntry:
    gop_index: int
    start_frame: int
    frame_count: int
    bitrate: int
    scale: str  # "num/den"
    encoded_width: int
    encoded_height: int
    segment_uri: str
    codec: str

    def as_dict(self) -> dict:
        # Key order is part of the manifest contract.
        return {
            "gop_index": self.gop_index,
            "start_frame": self.start_frame,
            "frame_count": self.frame_count,
            "bitrate": self.bitrate,
            "scale": self.scale,
            "encoded_width": self.encoded_width,
            "encoded_height": self.encoded_height,
            "segment_uri": self.segment_uri,
            "codec": self.codec,
        }


@dataclass
class CellResult:
    entry: ManifestEntry
    decision_scale: str
    measured_rate: float
    sequence_psnr: float | None
    cached: bool


@dataclass
class LadderResult:
    manifest: list[dict]
    errors: list[dict]
    cells: list[CellResult]
    manifest_path: Path
    report_path: Path


# ---------------------------------------------------------------------------
# Cache keys

def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _rc_fields(rc: RateControl) -> dict:
    if isinstance(rc, VBV):
        return {"kind": "vbv", "crf": rc.crf, "maxrate": rc.maxrate, "bufsize": rc.bufsize}
    return {"kind": "cbr", "bitrate": rc.bitrate}


def cache_key(gop_hash: str, scale: ScaleFactor, codec: CodecProfile, rc: RateControl) -> str:
    """Stable identifier of one encode artifact; canonical field ordering."""
    doc = {
        "gop": gop_hash,
        "scale": str(scale),
        "codec": {"name": codec.name, "preset": codec.preset},
        "rc": _rc_fields(rc),
    }
    return hashlib.sha256(_canonical(doc).encode()).hexdigest()


def _cell_key(gop: GopSegment, bitrate: int, cfg: LadderConfig, weights_id: str,
              precoder_kind: str) -> str:
    doc = {
        "gop": gop.content_hash(),
        "bitrate": bitrate,
        "codec": {"name": cfg.codec.name, "preset": cfg.codec.preset},
        "scales": sorted(str(s) for s in cfg.scales),
        "footprint": cfg.footprint_n,
        "upscaler": str(cfg.upscaler),
        "chroma": str(cfg.chroma_filter),
        "precoder": precoder_kind,
        "weights": weights_id,
        "full_remap": cfg.full_remap,
    }
    return hashlib.sha256(_canonical(doc).encode()).hexdigest()


# ---------------------------------------------------------------------------
# Ladder run

def _load_source(source, raw_dims: tuple[int, int] | None, raw_fps: Fraction | None) -> VideoSequence:
    path = Path(source)
    if path.suffix.lower() == ".y4m":
        return read_y4m(path)
    if raw_dims is None:
        raise PipelineError("raw input needs explicit dimensions")
    return read_yuv420(path, raw_dims[0], raw_dims[1], raw_fps or Fraction(25, 1))


def _segment_name(gop: GopSegment, bitrate: int, suffix: str) -> str:
    return f"gop{gop.index:04d}_br{bitrate}{suffix}"


def run_ladder(source, cfg: LadderConfig, raw_dims: tuple[int, int] | None = None,
               raw_fps: Fraction | None = None) -> LadderResult:
    """Encode a source across the whole ladder and emit the manifest.

    Every (GOP, bitrate) cell is independent; failures produce a structured
    error entry and the other cells proceed.  Intact cached cells are reused
    without invoking the encoder again.
    """
    video = _load_source(source, raw_dims, raw_fps)
    gops = segment_gops(video, cfg.gop_len)

    if cfg.luma_filter is not None:
        precoder: Precoder | NetworkWeights = as_precoder(cfg.luma_filter)
        weights_id = "none"
    else:
        if cfg.weights_path is None:
            raise PipelineError("network precoding needs --weights (or set a classical filter)")
        weights = load_weights(cfg.weights_path)
        precoder = as_precoder(weights)
        weights_id = hashlib.sha256(Path(cfg.weights_path).read_bytes()).hexdigest()

    seg_dir = cfg.output_dir / "segments"
    seg_dir.mkdir(parents=True, exist_ok=True)
    cfg.cache_dir.mkdir(parents=True, exist_ok=True)

    def run_cell(gop: GopSegment, bitrate: int):
        key = _cell_key(gop, bitrate, cfg, weights_id, type(precoder).__name__)
        cache_file = cfg.cache_dir / f"{key}.json"
        seg_path = seg_dir / _segment_name(gop, bitrate, cfg.codec.bitstream_suffix)
        if cache_file.exists() and seg_path.exists():
            doc = json.loads(cache_file.read_text())
            entry = ManifestEntry(**doc["entry"])
            return CellResult(entry, doc["decision_scale"], doc["measured_rate"],
                              doc.get("sequence_psnr"), cached=True)

        decision = select_mode(gop, cfg.scales, precoder, cfg.codec, bitrate,
                               cfg.footprint_n, cfg.upscaler, jobs=1,
                               full_remap=cfg.full_remap)
        s_star = decision.selected
        if s_star == NATIVE:
            production = gop.frames
        else:
            production = as_precoder(precoder).precode(gop.frames, s_star).frames
        rc = vbv_for_scale(cfg.codec, s_star, bitrate)
        enc = encode(production, cfg.codec, rc, gop.fps, seg_path, scale=s_star)

        psnr = None
        if cfg.compute_quality:
            decoded = decode(enc, cfg.codec)
            upscaled = [upscale_frame(f, gop.width, gop.height, cfg.upscaler)
                        for f in decoded]
            psnr = sequence_quality(gop.frames, upscaled).sequence_psnr

        entry = ManifestEntry(
            gop_index=gop.index,
            start_frame=gop.start_frame,
            frame_count=len(gop),
            bitrate=bitrate,
            scale=str(s_star),
            encoded_width=s_star.target(gop.width),
            encoded_height=s_star.target(gop.height),
            segment_uri=str(seg_path.relative_to(cfg.output_dir)),
            codec=cfg.codec.name,
        )
        cache_file.write_text(json.dumps({
            "entry": entry.as_dict(),
            "decision_scale": str(s_star),
            "measured_rate": enc.measured_rate,
            "sequence_psnr": psnr,
            "encode_key": cache_key(gop.content_hash(), s_star, cfg.codec, rc),
        }, indent=1))
        return CellResult(entry, str(s_star), enc.measured_rate, psnr, cached=False)

    cells: list[CellResult] = []
    errors: list[dict] = []
    work = [(gop, rate) for gop in gops for rate in cfg.bitrates]

    def task(gop: GopSegment, rate: int):
        try:
            return run_cell(gop, rate)
        except Exception as e:
            return {"gop_index": gop.index, "bitrate": rate, "error": str(e)}

    results = run_parallel([lambda g=g, r=r: task(g, r) for g, r in work], cfg.jobs)
    for res in results:
        if isinstance(res, dict):
            errors.append(res)
        else:
            cells.append(res)

    cells.sort(key=lambda c: (c.entry.gop_index, c.entry.bitrate))
    manifest = [c.entry.as_dict() for c in cells]
    manifest.extend(sorted(errors, key=lambda e: (e["gop_index"], e["bitrate"])))

    manifest_path = cfg.output_dir / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=1) + "\n", encoding="utf-8")

    report = {
        "source": str(source),
        "codec": cfg.codec.name,
        "cells": [
            {
                "gop_index": c.entry.gop_index,
                "bitrate": c.entry.bitrate,
                "scale": c.entry.scale,
                "measured_rate": c.measured_rate,
                "sequence_psnr": c.sequence_psnr,
                "cached": c.cached,
            }
            for c in cells
        ],
        "rungs": [
            {
                "bitrate": rate,
                "mean_psnr": float(np.mean([c.sequence_psnr for c in cells
                                            if c.entry.bitrate == rate
                                            and c.sequence_psnr is not None]))
                if any(c.entry.bitrate == rate and c.sequence_psnr is not None for c in cells)
                else None,
            }
            for rate in cfg.bitrates
        ],
        "errors": errors,
    }
    report_path = cfg.output_dir / "report.json"
    report_path.write_text(json.dumps(report, indent=1) + "\n", encoding="utf-8")
    return LadderResult(manifest, errors, cells, manifest_path, report_path)
