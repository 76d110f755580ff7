"""Multi-scale downscaling network: topology, weight files, forward pass.

The network is a shared two-layer root followed by three parallel streams of
downscaling blocks.  Each block shrinks the running feature maps to the next
scale of its stream, either with a strided 3x3 convolution (integer
inter-block ratio) or a linear pre-downscale followed by a stride-1 3x3
convolution.  A per-scale 3x3 projection turns the 4-channel embedding into a
single luma plane.

Channel widths: every 3x3 layer outputs 8 channels, every 1x1 layer outputs
4, projections output 1.  Each block ends in a 1x1 layer so that its output
returns to the shared 4-channel width; that keeps the chain composable and
lets the linearly-downscaled root features be added pixel-wise as a global
residual.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Iterable, Mapping, Union

import numpy as np

from .frame_io import PlanarFrame, ceil_half
from .resampler import (
    BICUBIC,
    BILINEAR,
    NATIVE,
    FilterKind,
    ScaleFactor,
    legal_range,
    resize_plane,
    resize_plane_float,
)

DVPW_MAGIC = b"DVPW"
DVPW_VERSION = 1

CHANNELS_3X3 = 8
CHANNELS_1X1 = 4
ROOT_CHANNELS = 4  # K, the width shared by root output, blocks and residuals

CANONICAL_SCALES: tuple[ScaleFactor, ...] = (
    ScaleFactor(1),
    ScaleFactor(5, 4),
    ScaleFactor(4, 3),
    ScaleFactor(3, 2),
    ScaleFactor(2),
    ScaleFactor(5, 2),
    ScaleFactor(3),
    ScaleFactor(4),
    ScaleFactor(6),
)

STREAM_SCALES: tuple[tuple[ScaleFactor, ...], ...] = (
    (ScaleFactor(4, 3), ScaleFactor(2), ScaleFactor(4)),
    (ScaleFactor(3, 2), ScaleFactor(3), ScaleFactor(6)),
    (ScaleFactor(5, 4), ScaleFactor(5, 2)),
)

DEFAULT_PRELU_SLOPE = 0.25
# The activation feeding the in-block skip summation starts as an identity so
# the non-linear path has full range from the first step.
PRE_SKIP_PRELU_SLOPE = 1.0


class WeightsError(ValueError):
    """Bad weight file or inconsistent layer tensors."""


def _ratio(cur: ScaleFactor, prev: ScaleFactor) -> ScaleFactor:
    return ScaleFactor(cur.num * prev.den, cur.den * prev.num)


@dataclass
class ConvSpec:
    name: str
    kernel: int
    in_channels: int
    out_channels: int
    stride: int = 1
    weights: np.ndarray | None = None  # (out, in, k, k) float32
    bias: np.ndarray | None = None  # (out,)
    prelu: np.ndarray | None = None  # (out,) slopes; None = linear layer

    @property
    def weight_shape(self) -> tuple[int, int, int, int]:
        return (self.out_channels, self.in_channels, self.kernel, self.kernel)

    def validate(self) -> None:
        if self.weights is None or self.weights.shape != self.weight_shape:
            got = None if self.weights is None else self.weights.shape
            raise WeightsError(f"{self.name}: weight shape {got}, expected {self.weight_shape}")
        if self.bias is None or self.bias.shape != (self.out_channels,):
            raise WeightsError(f"{self.name}: bad bias")
        if self.prelu is not None and self.prelu.shape != (self.out_channels,):
            raise WeightsError(f"{self.name}: bad prelu slopes")
        for arr in (self.weights, self.bias, self.prelu):
            if arr is not None and not np.isfinite(arr).all():
                raise WeightsError(f"{self.name}: non-finite values")

    def param_count(self) -> int:
        n = self.weights.size + self.bias.size
        if self.prelu is not None:
            n += self.prelu.size
        return n

    def weight_param_count(self) -> int:
        return int(self.weights.size)


@dataclass
class PrecodingBlockSpec:
    """One downscaling step: 3x3 -> 1x1 -> 3x3 (+skip) -> 1x1 (+residual)."""

    alpha: ScaleFactor
    conv1: ConvSpec
    conv_mid: ConvSpec
    conv2: ConvSpec
    conv_out: ConvSpec

    def layers(self) -> tuple[ConvSpec, ...]:
        return (self.conv1, self.conv_mid, self.conv2, self.conv_out)


@dataclass
class PrecodingStreamSpec:
    scales: tuple[ScaleFactor, ...]
    blocks: list[PrecodingBlockSpec]
    projections: list[ConvSpec]


@dataclass
class NetworkWeights:
    root: tuple[ConvSpec, ConvSpec]
    streams: list[PrecodingStreamSpec]
    metadata: dict = field(default_factory=dict)

    def all_layers(self) -> Iterable[ConvSpec]:
        yield from self.root
        for stream in self.streams:
            for block in stream.blocks:
                yield from block.layers()
            yield from stream.projections

    def validate(self) -> None:
        for layer in self.all_layers():
            layer.validate()

    def param_count(self) -> int:
        return sum(l.param_count() for l in self.all_layers())

    def weight_param_count(self) -> int:
        return sum(l.weight_param_count() for l in self.all_layers())


# ---------------------------------------------------------------------------
# Canonical topology

def _layer_defs() -> list[tuple[str, int, int, int, int, bool]]:
    """(path, kernel, in, out, stride, has_prelu) for every layer."""
    defs = [
        ("root.conv1", 3, 1, CHANNELS_3X3, 1, True),
        ("root.conv2", 1, CHANNELS_3X3, ROOT_CHANNELS, 1, True),
    ]
    for m, scales in enumerate(STREAM_SCALES, start=1):
        prev = NATIVE
        for n, s in enumerate(scales, start=1):
            alpha = _ratio(s, prev)
            stride = alpha.num if alpha.is_integer else 1
            base = f"s{m}.b{n}"
            defs.append((f"{base}.conv1", 3, ROOT_CHANNELS, CHANNELS_3X3, stride, True))
            defs.append((f"{base}.conv_mid", 1, CHANNELS_3X3, CHANNELS_1X1, 1, True))
            defs.append((f"{base}.conv2", 3, CHANNELS_1X1, CHANNELS_3X3, 1, True))
            defs.append((f"{base}.conv_out", 1, CHANNELS_3X3, ROOT_CHANNELS, 1, True))
            prev = s
        for n in range(1, len(scales) + 1):
            defs.append((f"s{m}.f{n}", 3, ROOT_CHANNELS, 1, 1, False))
    return defs


def _init_tensors(kernel: int, cin: int, cout: int, has_prelu: bool, path: str,
                  init: str, rng: np.random.Generator | None):
    shape = (cout, cin, kernel, kernel)
    if init == "zeros":
        w = np.zeros(shape, dtype=np.float32)
    elif init == "random":
        fan_in = cin * kernel * kernel
        fan_out = cout * kernel * kernel
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-limit, limit, size=shape).astype(np.float32)
    else:
        raise ValueError(f"unknown init {init!r}")
    b = np.zeros(cout, dtype=np.float32)
    if not has_prelu:
        return w, b, None
    slope = PRE_SKIP_PRELU_SLOPE if path.endswith(".conv2") and ".b" in path else DEFAULT_PRELU_SLOPE
    return w, b, np.full(cout, slope, dtype=np.float32)


def build_network(init: str = "zeros", seed: int = 0,
                  metadata: dict | None = None) -> NetworkWeights:
    """Construct the canonical three-stream topology."""
    rng = np.random.default_rng(seed) if init == "random" else None
    tensors = {}
    for path, kernel, cin, cout, stride, has_prelu in _layer_defs():
        w, b, p = _init_tensors(kernel, cin, cout, has_prelu, path, init, rng)
        tensors[path] = ConvSpec(path, kernel, cin, cout, stride, w, b, p)
    return _assemble(tensors, metadata or {"version": DVPW_VERSION, "run_id": None})


def _assemble(tensors: dict[str, ConvSpec], metadata: dict) -> NetworkWeights:
    streams = []
    for m, scales in enumerate(STREAM_SCALES, start=1):
        blocks, projections = [], []
        prev = NATIVE
        for n, s in enumerate(scales, start=1):
            base = f"s{m}.b{n}"
            blocks.append(
                PrecodingBlockSpec(
                    alpha=_ratio(s, prev),
                    conv1=tensors[f"{base}.conv1"],
                    conv_mid=tensors[f"{base}.conv_mid"],
                    conv2=tensors[f"{base}.conv2"],
                    conv_out=tensors[f"{base}.conv_out"],
                )
            )
            projections.append(tensors[f"s{m}.f{n}"])
            prev = s
        streams.append(PrecodingStreamSpec(tuple(scales), blocks, projections))
    w = NetworkWeights((tensors["root.conv1"], tensors["root.conv2"]), streams, metadata)
    w.validate()
    return w


# ---------------------------------------------------------------------------
# DVPW weight files

def _pack_record(name: str, arr: np.ndarray) -> bytes:
    payload = np.ascontiguousarray(arr, dtype="<f4").tobytes()
    nb = name.encode("utf-8")
    head = struct.pack("<H", len(nb)) + nb + struct.pack("<B", arr.ndim)
    head += b"".join(struct.pack("<I", d) for d in arr.shape)
    return head + payload


def save_weights(w: NetworkWeights, dst: Union[str, Path, BinaryIO]) -> None:
    records = []
    for layer in w.all_layers():
        records.append(_pack_record(layer.name, layer.weights))
        records.append(_pack_record(f"{layer.name}.bias", layer.bias))
        if layer.prelu is not None:
            records.append(_pack_record(f"{layer.name}.prelu", layer.prelu))
    body = DVPW_MAGIC + struct.pack("<II", DVPW_VERSION, len(records)) + b"".join(records)
    blob = body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)
    if isinstance(dst, (str, Path)):
        Path(dst).write_bytes(blob)
    else:
        dst.write(blob)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise WeightsError(f"truncated weight file while reading {what}")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out


def load_weights(src: Union[str, Path, bytes, BinaryIO]) -> NetworkWeights:
    """Read and validate a DVPW file against the canonical topology."""
    if isinstance(src, (str, Path)):
        data = Path(src).read_bytes()
        origin = str(src)
    elif isinstance(src, bytes):
        data, origin = src, "<bytes>"
    else:
        data, origin = src.read(), "<stream>"
    if len(data) < 16:
        raise WeightsError("weight file too short")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise WeightsError("checksum mismatch")
    r = _Reader(body)
    if r.take(4, "magic") != DVPW_MAGIC:
        raise WeightsError("bad magic, not a DVPW file")
    version, count = struct.unpack("<II", r.take(8, "header"))
    if version != DVPW_VERSION:
        raise WeightsError(f"unsupported DVPW version {version}")
    records: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", r.take(2, "record name length"))
        name = r.take(nlen, "record name").decode("utf-8")
        (rank,) = struct.unpack("<B", r.take(1, "record rank"))
        dims = struct.unpack(f"<{rank}I", r.take(4 * rank, "record dims"))
        size = int(np.prod(dims, dtype=np.int64)) if rank else 1
        payload = r.take(4 * size, f"tensor {name}")
        arr = np.frombuffer(payload, dtype="<f4").reshape(dims).astype(np.float32)
        if name in records:
            raise WeightsError(f"duplicate record {name}")
        records[name] = arr
    if r.pos != len(body):
        raise WeightsError("trailing bytes after last record")

    tensors = {}
    for path, kernel, cin, cout, stride, has_prelu in _layer_defs():
        expected = {path: (cout, cin, kernel, kernel), f"{path}.bias": (cout,)}
        if has_prelu:
            expected[f"{path}.prelu"] = (cout,)
        got = {}
        for name, shape in expected.items():
            if name not in records:
                raise WeightsError(f"missing record {name}")
            arr = records.pop(name)
            if arr.shape != shape:
                raise WeightsError(f"{name}: shape {arr.shape}, expected {shape}")
            if not np.isfinite(arr).all():
                raise WeightsError(f"{name}: non-finite values")
            got[name] = arr
        tensors[path] = ConvSpec(
            path, kernel, cin, cout, stride,
            got[path], got[f"{path}.bias"],
            got.get(f"{path}.prelu"),
        )
    if records:
        raise WeightsError(f"unknown records: {sorted(records)[:4]}")
    return _assemble(tensors, {"version": version, "source": origin})


# ---------------------------------------------------------------------------
# Forward pass

@dataclass
class OpCounter:
    """Instrumentation for the shared-computation guarantees."""

    root_evals: int = 0
    block_evals: dict = field(default_factory=dict)  # (stream, block) -> evals
    proj_evals: dict = field(default_factory=dict)  # (stream, block) -> evals

    def bump_block(self, m: int, n: int) -> None:
        self.block_evals[(m, n)] = self.block_evals.get((m, n), 0) + 1

    def bump_proj(self, m: int, n: int) -> None:
        self.proj_evals[(m, n)] = self.proj_evals.get((m, n), 0) + 1


def prelu(x: np.ndarray, slopes: np.ndarray) -> np.ndarray:
    return np.where(x >= 0.0, x, x * slopes.astype(np.float32))


def conv_forward(x: np.ndarray, spec: ConvSpec,
                 target_hw: tuple[int, int] | None = None) -> np.ndarray:
    """2-D convolution of an (H, W, Cin) map, zero padded.

    For strided layers the output grid is pinned to target_hw: output (i, j)
    reads the window centered on input (i*stride, j*stride), so the result
    always lands exactly on the rounded target geometry, whatever the input
    parity.
    """
    h, w, cin = x.shape
    if cin != spec.in_channels:
        raise WeightsError(f"{spec.name}: input has {cin} channels, expected {spec.in_channels}")
    k, s = spec.kernel, spec.stride
    if k == 1 and s == 1:
        wmat = spec.weights.reshape(spec.out_channels, cin)
        out = x.reshape(-1, cin) @ wmat.T
        return out.reshape(h, w, spec.out_channels) + spec.bias
    th, tw = target_hw if target_hw is not None else (-(-h // s), -(-w // s))
    pad = k // 2
    pad_b = max(pad, (th - 1) * s + k - pad - h)
    pad_r = max(pad, (tw - 1) * s + k - pad - w)
    padded = np.pad(x, ((pad, pad_b), (pad, pad_r), (0, 0)))
    # One small GEMM per kernel tap in a fixed order: faster than gathering an
    # im2col matrix and reproducible regardless of thread counts.
    out = np.zeros((th * tw, spec.out_channels), dtype=np.float32)
    for dy in range(k):
        for dx in range(k):
            sub = padded[dy : dy + (th - 1) * s + 1 : s, dx : dx + (tw - 1) * s + 1 : s, :]
            flat = np.ascontiguousarray(sub).reshape(-1, cin)
            out += flat @ spec.weights[:, :, dy, dx].T
    return out.reshape(th, tw, spec.out_channels) + spec.bias


def _root_forward_full(y_norm: np.ndarray, w: NetworkWeights) -> tuple[np.ndarray, np.ndarray]:
    """Returns (post-activation, pre-activation) root feature maps."""
    conv1, conv2 = w.root
    x = y_norm.astype(np.float32)[:, :, None]
    a = prelu(conv_forward(x, conv1), conv1.prelu)
    pre = conv_forward(a, conv2)
    return prelu(pre, conv2.prelu), pre


def root_forward(y_norm: np.ndarray, w: NetworkWeights) -> np.ndarray:
    """Shared feature extraction; input is luma normalized to [0, 1]."""
    return _root_forward_full(y_norm, w)[0]


def block_forward(x: np.ndarray, block: PrecodingBlockSpec, r_ds: np.ndarray,
                  down_filter: FilterKind = BILINEAR) -> np.ndarray:
    """One downscaling block; r_ds are root features at the target size."""
    th, tw = r_ds.shape[:2]
    if block.alpha.is_integer:
        c1 = conv_forward(x, block.conv1, (th, tw))
    else:
        ds = resize_plane_float(x, tw, th, down_filter)
        c1 = conv_forward(ds, block.conv1)
    a = prelu(c1, block.conv1.prelu)
    a = prelu(conv_forward(a, block.conv_mid), block.conv_mid.prelu)
    a = prelu(conv_forward(a, block.conv2), block.conv2.prelu)
    merged = a + c1  # linear-path skip, taken before conv1's activation
    out = conv_forward(merged, block.conv_out)
    return prelu(out + r_ds, block.conv_out.prelu)


def _check_scales(scales: Iterable[ScaleFactor]) -> set[ScaleFactor]:
    wanted = set(scales)
    unknown = wanted - set(CANONICAL_SCALES)
    if unknown:
        raise ValueError(f"scales outside the supported set: {sorted(str(s) for s in unknown)}")
    return wanted


def forward_scales(y_norm: np.ndarray, w: NetworkWeights, scales: Iterable[ScaleFactor],
                   down_filter: FilterKind = BILINEAR,
                   counter: OpCounter | None = None) -> dict[ScaleFactor, np.ndarray]:
    """Float (pre-quantization) downscaled luma for each requested scale.

    Streams are walked once; scales sharing a stream reuse every block up to
    their divergence point.
    """
    wanted = _check_scales(scales)
    h, wd = y_norm.shape
    out: dict[ScaleFactor, np.ndarray] = {}
    net_scales = wanted - {NATIVE}
    if not net_scales:
        return out
    r_act, r_pre = _root_forward_full(y_norm, w)
    if counter is not None:
        counter.root_evals += 1
    for m, stream in enumerate(w.streams, start=1):
        positions = [i for i, s in enumerate(stream.scales) if s in net_scales]
        if not positions:
            continue
        x = r_act
        for n in range(max(positions) + 1):
            s = stream.scales[n]
            th, tw = s.target(h), s.target(wd)
            r_ds = resize_plane_float(r_pre, tw, th, down_filter)
            x = block_forward(x, stream.blocks[n], r_ds, down_filter)
            if counter is not None:
                counter.bump_block(m, n + 1)
            if n in positions:
                proj = conv_forward(x, stream.projections[n])
                if counter is not None:
                    counter.bump_proj(m, n + 1)
                out[s] = proj[:, :, 0]
    return out


def quantize_luma(y_float_norm: np.ndarray, pixel_range: str) -> np.ndarray:
    """Denormalize to 8-bit, clamp to the legal luma range, round half away."""
    (lo, hi), _ = legal_range(pixel_range)
    v = np.clip(y_float_norm.astype(np.float32) * 255.0, lo, hi)
    return np.floor(v + 0.5).astype(np.uint8)


def precode_frame(frame: PlanarFrame, w: NetworkWeights, scales: Iterable[ScaleFactor],
                  chroma_filter: FilterKind = BICUBIC,
                  down_filter: FilterKind = BILINEAR,
                  counter: OpCounter | None = None) -> dict[ScaleFactor, PlanarFrame]:
    """Downscale one frame to every requested scale.

    Luma goes through the network (normalized by /255, denormalized and
    clamped to the legal range on the way out); chroma is downscaled
    independently with a classical filter.  s = 1 passes the frame through
    untouched.
    """
    wanted = _check_scales(scales)
    out: dict[ScaleFactor, PlanarFrame] = {}
    if NATIVE in wanted:
        out[NATIVE] = frame
    y_norm = frame.y.astype(np.float32) / 255.0
    luma_maps = forward_scales(y_norm, w, wanted - {NATIVE}, down_filter, counter)
    _, (clo, chi) = legal_range(frame.pixel_range)
    for s, y_map in luma_maps.items():
        tw, th = s.target(frame.width), s.target(frame.height)
        cw, ch = ceil_half(tw), ceil_half(th)
        cb = np.clip(resize_plane(frame.cb, cw, ch, chroma_filter), clo, chi).astype(np.uint8)
        cr = np.clip(resize_plane(frame.cr, cw, ch, chroma_filter), clo, chi).astype(np.uint8)
        out[s] = PlanarFrame(tw, th, quantize_luma(y_map, frame.pixel_range), cb, cr,
                             frame.pixel_range)
    return out


# ---------------------------------------------------------------------------
# Loss

def _fwd_diff(a: np.ndarray, axis: int) -> np.ndarray:
    # Forward difference with clamp-to-edge: the last row/column is zero.
    last = [slice(None)] * a.ndim
    last[axis] = slice(-1, None)
    return np.diff(a, axis=axis, append=a[tuple(last)])


def eval_loss(upscaled: Mapping[ScaleFactor, np.ndarray], ground_truth: np.ndarray,
              lam: float) -> float:
    """Reconstruction loss: per-scale L1 plus weighted L1 of forward-difference
    gradients, averaged over samples.

    Arrays may be (H, W) or (N, H, W); every upscaled map must match the
    ground truth shape.
    """
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    gt = np.asarray(ground_truth, dtype=np.float64)
    total = 0.0
    for s, arr in upscaled.items():
        x = np.asarray(arr, dtype=np.float64)
        if x.shape != gt.shape:
            raise ValueError(f"scale {s}: shape {x.shape} != ground truth {gt.shape}")
        total += float(np.mean(np.abs(x - gt)))
        if lam > 0:
            gterm = float(np.mean(np.abs(_fwd_diff(x, -1) - _fwd_diff(gt, -1))))
            gterm_v = float(np.mean(np.abs(_fwd_diff(x, -2) - _fwd_diff(gt, -2))))
            total += lam * (gterm + gterm_v)
    return total


# ---------------------------------------------------------------------------
# Analytic parameter / MAC accounting

@dataclass
class LayerCost:
    path: str
    params: int
    weight_params: int
    macs: int


@dataclass
class NetworkBudget:
    params_total: int
    params_weights_only: int
    block_params: int
    block_weight_params: int
    macs_total: int
    macs_per_scale: dict[ScaleFactor, int]
    layers: list[LayerCost]


def _conv_macs(spec: ConvSpec, out_h: int, out_w: int) -> int:
    return spec.out_channels * spec.in_channels * spec.kernel * spec.kernel * out_h * out_w


def block_macs(w: NetworkWeights, width: int, height: int) -> int:
    """MACs of one block applied to a width x height map with no downscaling."""
    block = w.streams[0].blocks[0]
    return sum(_conv_macs(l, height, width) for l in block.layers())


def count_params_and_macs(w: NetworkWeights, input_w: int, input_h: int) -> NetworkBudget:
    """Analytic budget: convolution multiply-accumulates and learnable counts."""
    layers: list[LayerCost] = []
    for conv in w.root:
        layers.append(LayerCost(conv.name, conv.param_count(), conv.weight_param_count(),
                                _conv_macs(conv, input_h, input_w)))
    root_macs = sum(l.macs for l in layers)
    macs_per_scale: dict[ScaleFactor, int] = {}
    total = root_macs
    for m, stream in enumerate(w.streams, start=1):
        running = root_macs
        for n, s in enumerate(stream.scales):
            th, tw = s.target(input_h), s.target(input_w)
            block_cost = 0
            for conv in stream.blocks[n].layers():
                macs = _conv_macs(conv, th, tw)
                layers.append(LayerCost(conv.name, conv.param_count(),
                                        conv.weight_param_count(), macs))
                block_cost += macs
            proj = stream.projections[n]
            proj_macs = _conv_macs(proj, th, tw)
            layers.append(LayerCost(proj.name, proj.param_count(),
                                    proj.weight_param_count(), proj_macs))
            running += block_cost
            macs_per_scale[s] = running + proj_macs
            total += block_cost + proj_macs
    first_block = w.streams[0].blocks[0]
    return NetworkBudget(
        params_total=w.param_count(),
        params_weights_only=w.weight_param_count(),
        block_params=sum(l.param_count() for l in first_block.layers()),
        block_weight_params=sum(l.weight_param_count() for l in first_block.layers()),
        macs_total=total,
        macs_per_scale=macs_per_scale,
        layers=layers,
    )
