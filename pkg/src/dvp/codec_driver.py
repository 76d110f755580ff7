"""External encoder orchestration plus a deterministic mock codec.

Real codecs are driven through user-editable command templates (Y4M on the
child's stdin, bitstream file path as an argument), so any encoder can be
plugged in without code changes.  The mock codec needs no binaries at all:
it realizes an exponential rate-distortion model with content-hash seeding,
which keeps the whole mode-selection pipeline testable hermetically.
"""

from __future__ import annotations

import hashlib
import os
import re
import shlex
import struct
import subprocess
import tempfile
import threading
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable, Sequence, Union

import numpy as np

from .frame_io import FULL, LIMITED, PlanarFrame, ceil_half, read_y4m, y4m_bytes
from .resampler import ScaleFactor

MOCK_MAGIC = b"DVPM"
MOCK_VERSION = 1
_MOCK_HEADER = struct.Struct("<4sHHIIIIIdQ")

TIMEOUT_ENV = "DVP_CODEC_TIMEOUT_SECS"
DEFAULT_TIMEOUT = 600.0

PLACEHOLDERS = {
    "W", "H", "FPS", "CRF", "MAXRATE", "BUFSIZE", "BITRATE", "IN", "OUT",
    # profile conveniences beyond the core set
    "MINRATE", "SPEED", "GOP",
}


class CodecError(RuntimeError):
    pass


class _Counter:
    """Thread-safe encoder invocation counter (used by resumability tests)."""

    def __init__(self):
        self._n = 0
        self._lock = threading.Lock()

    def bump(self) -> None:
        with self._lock:
            self._n += 1

    def reset(self) -> None:
        with self._lock:
            self._n = 0

    @property
    def value(self) -> int:
        with self._lock:
            return self._n


encoder_invocations = _Counter()


# ---------------------------------------------------------------------------
# Rate control

@dataclass(frozen=True)
class VBV:
    """Constant-quality encoding capped by maxrate/bufsize."""

    crf: int
    maxrate: int
    bufsize: int

    def __post_init__(self):
        if self.maxrate <= 0 or self.bufsize <= 0:
            raise ValueError("VBV rates must be positive")


@dataclass(frozen=True)
class CBR:
    bitrate: int

    def __post_init__(self):
        if self.bitrate <= 0:
            raise ValueError("CBR bitrate must be positive")


RateControl = Union[VBV, CBR]


@dataclass(frozen=True)
class MockKnee:
    """Per-sequence parameters of the mock codec's exponential RD model.

    Decoded output is input plus zero-mean noise with per-pixel variance
    var0 * 2^(-2 * rate / (bpp_scale * pixels * fps)); under VBV the
    effective rate is capped by the quality-driven rate
    crf_full_bpp * 2^(-crf/6) * pixels * fps.
    """

    var0: float = 400.0
    bpp_scale: float = 0.10
    crf_full_bpp: float = 4.0

    def __post_init__(self):
        if self.var0 <= 0 or self.bpp_scale <= 0 or self.crf_full_bpp <= 0:
            raise ValueError("mock knee parameters must be positive")


# ---------------------------------------------------------------------------
# Profiles

_TABLE_CRF = {
    ScaleFactor(1): 23,
    ScaleFactor(5, 4): 23,
    ScaleFactor(4, 3): 23,
    ScaleFactor(3, 2): 23,
    ScaleFactor(2): 18,
    ScaleFactor(5, 2): 18,
    ScaleFactor(3): 18,
    ScaleFactor(4): 18,
    ScaleFactor(6): 18,
}

_TABLE_VP9_SPEED = {s: (2 if s == ScaleFactor(1) else 1) for s in _TABLE_CRF}


@dataclass
class CodecProfile:
    name: str
    preset: str
    crf_by_scale: dict[ScaleFactor, int] = field(default_factory=lambda: dict(_TABLE_CRF))
    speed_by_scale: dict[ScaleFactor, int] | None = None
    encode_vbv_template: str = ""
    encode_cbr_template: str = ""
    decode_template: str = ""
    bitstream_suffix: str = ".bin"
    knee: MockKnee = field(default_factory=MockKnee)

    def crf_for(self, scale: ScaleFactor) -> int:
        try:
            return self.crf_by_scale[scale]
        except KeyError:
            raise CodecError(f"profile {self.name} has no CRF for scale {scale}") from None

    def speed_for(self, scale: ScaleFactor) -> int:
        table = self.speed_by_scale or _TABLE_VP9_SPEED
        return table.get(scale, 1)


def default_profile(name: str, preset: str | None = None,
                    knee: MockKnee | None = None) -> CodecProfile:
    """Built-in profiles; templates are documented best-effort defaults."""
    name = name.lower()
    if name == "mock":
        return CodecProfile("mock", preset or "default", bitstream_suffix=".dvpm",
                            knee=knee or MockKnee())
    if name == "h264":
        pre = preset or "slower"
        return CodecProfile(
            "h264", pre,
            encode_vbv_template=(
                "ffmpeg -y -hide_banner -loglevel error -f yuv4mpegpipe -i {IN} -an "
                f"-c:v libx264 -preset {pre} "
                "-crf {CRF} -maxrate {MAXRATE} -bufsize {BUFSIZE} -g {GOP} -f h264 {OUT}"
            ),
            encode_cbr_template=(
                "ffmpeg -y -hide_banner -loglevel error -f yuv4mpegpipe -i {IN} -an "
                f"-c:v libx264 -preset {pre} "
                "-b:v {BITRATE} -minrate {BITRATE} -maxrate {BITRATE} -bufsize {BUFSIZE} "
                "-g {GOP} -f h264 {OUT}"
            ),
            decode_template=(
                "ffmpeg -y -hide_banner -loglevel error -i {IN} -f yuv4mpegpipe {OUT}"
            ),
            bitstream_suffix=".h264",
        )
    if name == "hevc":
        pre = preset or "slower"
        return CodecProfile(
            "hevc", pre,
            encode_vbv_template=(
                "ffmpeg -y -hide_banner -loglevel error -f yuv4mpegpipe -i {IN} -an "
                f"-c:v libx265 -preset {pre} "
                "-crf {CRF} -maxrate {MAXRATE} -bufsize {BUFSIZE} -g {GOP} -f hevc {OUT}"
            ),
            encode_cbr_template=(
                "ffmpeg -y -hide_banner -loglevel error -f yuv4mpegpipe -i {IN} -an "
                f"-c:v libx265 -preset {pre} "
                "-b:v {BITRATE} -minrate {BITRATE} -maxrate {BITRATE} -bufsize {BUFSIZE} "
                "-g {GOP} -f hevc {OUT}"
            ),
            decode_template=(
                "ffmpeg -y -hide_banner -loglevel error -i {IN} -f yuv4mpegpipe {OUT}"
            ),
            bitstream_suffix=".hevc",
        )
    if name == "vp9":
        return CodecProfile(
            "vp9", preset or "good",
            speed_by_scale=dict(_TABLE_VP9_SPEED),
            encode_vbv_template=(
                "ffmpeg -y -hide_banner -loglevel error -f yuv4mpegpipe -i {IN} -an "
                "-c:v libvpx-vp9 -b:v {MAXRATE} -maxrate {MAXRATE} -minrate {MINRATE} "
                "-speed {SPEED} -g {GOP} -f ivf {OUT}"
            ),
            encode_cbr_template=(
                "ffmpeg -y -hide_banner -loglevel error -f yuv4mpegpipe -i {IN} -an "
                "-c:v libvpx-vp9 -b:v {BITRATE} -maxrate {BITRATE} -minrate {BITRATE} "
                "-speed {SPEED} -g {GOP} -f ivf {OUT}"
            ),
            decode_template=(
                "ffmpeg -y -hide_banner -loglevel error -i {IN} -f yuv4mpegpipe {OUT}"
            ),
            bitstream_suffix=".ivf",
        )
    raise CodecError(f"unknown codec {name!r} (choose h264, hevc, vp9 or mock)")


def vbv_for_scale(profile: CodecProfile, scale: ScaleFactor, target_rate: int) -> VBV:
    """VBV settings for one ladder rung: per-scale CRF, maxrate=bufsize=rung."""
    return VBV(crf=profile.crf_for(scale), maxrate=int(target_rate), bufsize=int(target_rate))


# ---------------------------------------------------------------------------
# Templates

def render_template(template: str, values: dict) -> str:
    """Substitute {NAME} placeholders; any known one left unresolved is an error."""
    out = template
    for key, val in values.items():
        out = out.replace("{" + key + "}", str(val))
    leftover = sorted(set(re.findall(r"\{([A-Z]+)\}", out)) & PLACEHOLDERS)
    if leftover:
        raise CodecError(f"template left placeholders unresolved: {leftover}")
    return out


def _timeout() -> float:
    raw = os.environ.get(TIMEOUT_ENV, "")
    try:
        return float(raw) if raw else DEFAULT_TIMEOUT
    except ValueError:
        return DEFAULT_TIMEOUT


def _run(cmd: str, stdin_payload: bytes | None) -> None:
    try:
        proc = subprocess.run(
            shlex.split(cmd),
            input=stdin_payload,
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
            timeout=_timeout(),
        )
    except FileNotFoundError as e:
        raise CodecError(f"codec binary not found: {e}") from e
    except subprocess.TimeoutExpired as e:
        raise CodecError(f"codec timed out after {_timeout()}s: {cmd}") from e
    if proc.returncode != 0:
        tail = proc.stderr.decode("utf-8", "replace")[-400:]
        raise CodecError(f"codec exited {proc.returncode}: {cmd}\n{tail}")


# ---------------------------------------------------------------------------
# Results

@dataclass
class EncodeResult:
    bitstream: Path
    measured_rate: float  # bits/s, always 8 * bytes * fps / frame_count
    frame_count: int
    width: int
    height: int
    fps: Fraction
    diagnostics: dict = field(default_factory=dict)


def measured_rate(nbytes: int, fps: Fraction, frame_count: int) -> float:
    return 8.0 * nbytes * float(fps) / frame_count


# ---------------------------------------------------------------------------
# Mock codec

def _content_digest(frames: Sequence[PlanarFrame]) -> bytes:
    h = hashlib.sha256()
    h.update(f"{frames[0].width}x{frames[0].height}x{len(frames)}".encode())
    for f in frames:
        h.update(f.tobytes())
    return h.digest()


def mock_effective_rate(rc: RateControl, pixels: int, fps: float, knee: MockKnee) -> float:
    if isinstance(rc, CBR):
        return float(rc.bitrate)
    quality_rate = knee.crf_full_bpp * 2.0 ** (-rc.crf / 6.0) * pixels * fps
    return min(float(rc.maxrate), quality_rate)


def mock_sigma2(rate: float, pixels: int, fps: float, knee: MockKnee) -> float:
    return knee.var0 * 2.0 ** (-2.0 * rate / (knee.bpp_scale * pixels * fps))


def _mock_encode(frames: Sequence[PlanarFrame], profile: CodecProfile, rc: RateControl,
                 fps: Fraction, out_path: Path) -> EncodeResult:
    f0 = frames[0]
    pixels = f0.width * f0.height
    rate = mock_effective_rate(rc, pixels, float(fps), profile.knee)
    sigma2 = mock_sigma2(rate, pixels, float(fps), profile.knee)
    digest = _content_digest(frames)
    seed_src = hashlib.sha256(digest + struct.pack("<dd", rate, sigma2)).digest()
    seed = int.from_bytes(seed_src[:8], "little")

    header = _MOCK_HEADER.pack(
        MOCK_MAGIC, MOCK_VERSION, 1 if f0.pixel_range == FULL else 0,
        f0.width, f0.height, fps.numerator, fps.denominator, len(frames),
        sigma2, seed,
    )
    # The bitstream is sized to realize the effective rate exactly, bounded
    # below by the header and above by a raw dump (the lossless ceiling).
    raw_bytes = sum(len(f.tobytes()) for f in frames)
    nbytes = round(rate * len(frames) / (8.0 * float(fps)))
    nbytes = min(max(len(header), nbytes), len(header) + raw_bytes)
    out_path.write_bytes(header + b"\0" * (nbytes - len(header)))
    ref = zlib.compress(b"".join(f.tobytes() for f in frames), level=6)
    Path(str(out_path) + ".ref").write_bytes(ref)
    return EncodeResult(
        bitstream=out_path,
        measured_rate=measured_rate(nbytes, fps, len(frames)),
        frame_count=len(frames),
        width=f0.width,
        height=f0.height,
        fps=fps,
        diagnostics={"codec": "mock", "effective_rate": rate, "sigma2": sigma2,
                     "rc": rc, "seed": seed},
    )


def _mock_decode(result: EncodeResult) -> list[PlanarFrame]:
    data = result.bitstream.read_bytes()
    if len(data) < _MOCK_HEADER.size or data[:4] != MOCK_MAGIC:
        raise CodecError(f"{result.bitstream}: not a mock bitstream")
    magic, version, range_flag, w, h, fn, fd, count, sigma2, seed = _MOCK_HEADER.unpack(
        data[: _MOCK_HEADER.size]
    )
    if version != MOCK_VERSION:
        raise CodecError(f"mock bitstream version {version} unsupported")
    ref_path = Path(str(result.bitstream) + ".ref")
    if not ref_path.exists():
        raise CodecError(f"mock reference sidecar missing: {ref_path}")
    raw = zlib.decompress(ref_path.read_bytes())
    cw, ch = ceil_half(w), ceil_half(h)
    ysz, csz = w * h, cw * ch
    if len(raw) != count * (ysz + 2 * csz):
        raise CodecError("mock sidecar length mismatch")
    pixel_range = FULL if range_flag else LIMITED
    rng = np.random.default_rng(seed)
    sigma = float(np.sqrt(sigma2))
    frames = []
    for i in range(count):
        off = i * (ysz + 2 * csz)
        buf = np.frombuffer(raw[off : off + ysz + 2 * csz], dtype=np.uint8)
        planes = [
            buf[:ysz].reshape(h, w),
            buf[ysz : ysz + csz].reshape(ch, cw),
            buf[ysz + csz :].reshape(ch, cw),
        ]
        noisy = []
        for plane in planes:
            if sigma2 <= 1e-12:
                noisy.append(plane.copy())
            else:
                v = plane.astype(np.float64) + rng.normal(0.0, sigma, plane.shape)
                noisy.append(np.floor(np.clip(v, 0.0, 255.0) + 0.5).astype(np.uint8))
        frames.append(PlanarFrame(w, h, noisy[0], noisy[1], noisy[2], pixel_range))
    return frames


# ---------------------------------------------------------------------------
# Public encode/decode

def encode(frames: Sequence[PlanarFrame], profile: CodecProfile, rc: RateControl,
           fps: Fraction, out_path: Union[str, Path],
           scale: ScaleFactor | None = None) -> EncodeResult:
    """Encode frames to a bitstream file; Y4M is fed on the child's stdin."""
    if not frames:
        raise CodecError("nothing to encode")
    f0 = frames[0]
    for f in frames:
        if (f.width, f.height) != (f0.width, f0.height):
            raise CodecError("frames disagree on geometry")
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    encoder_invocations.bump()

    if profile.name == "mock":
        return _mock_encode(frames, profile, rc, fps, out_path)

    values = {
        "W": f0.width,
        "H": f0.height,
        "FPS": f"{fps.numerator}/{fps.denominator}",
        "GOP": len(frames),
        "IN": "pipe:0",
        "OUT": str(out_path),
        "SPEED": profile.speed_for(scale) if scale is not None else profile.speed_for(ScaleFactor(1)),
    }
    if isinstance(rc, VBV):
        template = profile.encode_vbv_template
        values.update(CRF=rc.crf, MAXRATE=rc.maxrate, BUFSIZE=rc.bufsize,
                      MINRATE=round(rc.maxrate / 1.45))
    else:
        template = profile.encode_cbr_template
        values.update(BITRATE=rc.bitrate, BUFSIZE=rc.bitrate, MINRATE=rc.bitrate)
    if not template:
        raise CodecError(f"profile {profile.name} has no encode template for {type(rc).__name__}")
    cmd = render_template(template, values)
    _run(cmd, y4m_bytes(frames, fps))
    if not out_path.exists():
        raise CodecError(f"encoder produced no output: {cmd}")
    nbytes = out_path.stat().st_size
    return EncodeResult(
        bitstream=out_path,
        measured_rate=measured_rate(nbytes, fps, len(frames)),
        frame_count=len(frames),
        width=f0.width,
        height=f0.height,
        fps=fps,
        diagnostics={"codec": profile.name, "rc": rc, "cmd": cmd},
    )


def decode(result: EncodeResult, profile: CodecProfile) -> list[PlanarFrame]:
    """Decode a bitstream back to frames at the encoded geometry."""
    if profile.name == "mock":
        frames = _mock_decode(result)
    else:
        if not profile.decode_template:
            raise CodecError(f"profile {profile.name} has no decode template")
        with tempfile.TemporaryDirectory(prefix="dvp-dec-") as tmp:
            out = Path(tmp) / "decoded.y4m"
            cmd = render_template(
                profile.decode_template,
                {"IN": str(result.bitstream), "OUT": str(out),
                 "W": result.width, "H": result.height,
                 "FPS": f"{result.fps.numerator}/{result.fps.denominator}"},
            )
            _run(cmd, None)
            if not out.exists():
                raise CodecError(f"decoder produced no output: {cmd}")
            frames = read_y4m(out).frames
    if len(frames) != result.frame_count:
        raise CodecError(
            f"decoded {len(frames)} frames, expected {result.frame_count}"
        )
    return frames


def run_parallel(tasks: Sequence[Callable], jobs: int) -> list:
    """Run independent jobs on a bounded pool, preserving order."""
    if jobs <= 1 or len(tasks) <= 1:
        return [t() for t in tasks]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(t) for t in tasks]
        return [f.result() for f in futures]
