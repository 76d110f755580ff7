"""Planar 8-bit 4:2:0 video I/O, GOP segmentation and footprint subsampling.

Only 8-bit 4:2:0 content is handled.  Everything else is rejected up front;
no colorspace conversion ever happens here, reads and writes are bit-exact
pass-throughs of the plane payloads.
"""

from __future__ import annotations

import hashlib
import io
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import BinaryIO, Iterator, Sequence, Union

import numpy as np

LIMITED = "limited"
FULL = "full"

# 4:2:0 colorspace tags we pass through untouched (they differ only in chroma
# siting, the plane layout is identical).
_C420_TAGS = {"420", "420jpeg", "420mpeg2", "420paldv"}


class FrameIOError(ValueError):
    """Malformed, truncated or unsupported video payload."""


def ceil_half(n: int) -> int:
    """Chroma plane extent for a luma extent of n (ceiling division by 2)."""
    return (n + 1) // 2


@dataclass(eq=False)
class PlanarFrame:
    """One frame as separate Y, Cb, Cr planes (8-bit, 4:2:0)."""

    width: int
    height: int
    y: np.ndarray
    cb: np.ndarray
    cr: np.ndarray
    pixel_range: str = LIMITED

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise FrameIOError(f"bad frame geometry {self.width}x{self.height}")
        cw, ch = ceil_half(self.width), ceil_half(self.height)
        for name, plane, shape in (
            ("y", self.y, (self.height, self.width)),
            ("cb", self.cb, (ch, cw)),
            ("cr", self.cr, (ch, cw)),
        ):
            if plane.dtype != np.uint8:
                raise FrameIOError(f"{name} plane must be uint8, got {plane.dtype}")
            if plane.shape != shape:
                raise FrameIOError(f"{name} plane shape {plane.shape}, expected {shape}")
        if self.pixel_range not in (LIMITED, FULL):
            raise FrameIOError(f"unknown pixel range {self.pixel_range!r}")

    @property
    def chroma_width(self) -> int:
        return ceil_half(self.width)

    @property
    def chroma_height(self) -> int:
        return ceil_half(self.height)

    def planes(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.y, self.cb, self.cr

    def tobytes(self) -> bytes:
        return self.y.tobytes() + self.cb.tobytes() + self.cr.tobytes()

    def same_pixels(self, other: "PlanarFrame") -> bool:
        return (
            self.width == other.width
            and self.height == other.height
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.cb, other.cb)
            and np.array_equal(self.cr, other.cr)
        )

    def copy(self) -> "PlanarFrame":
        return PlanarFrame(
            self.width,
            self.height,
            self.y.copy(),
            self.cb.copy(),
            self.cr.copy(),
            self.pixel_range,
        )


@dataclass
class VideoSequence:
    """An ordered list of frames plus the stream-level metadata."""

    frames: list[PlanarFrame]
    fps: Fraction = Fraction(30, 1)
    colorspace: str = "420jpeg"
    interlace: str | None = None
    aspect: str | None = None

    def __len__(self) -> int:
        return len(self.frames)

    def __getitem__(self, i):
        return self.frames[i]

    def __iter__(self) -> Iterator[PlanarFrame]:
        return iter(self.frames)


@dataclass
class GopSegment:
    """A consecutive run of frames, the unit of mode selection."""

    index: int
    start_frame: int
    frames: tuple[PlanarFrame, ...]
    fps: Fraction

    def __post_init__(self):
        if not self.frames:
            raise FrameIOError("empty GOP")
        w, h = self.frames[0].width, self.frames[0].height
        for f in self.frames:
            if f.width != w or f.height != h:
                raise FrameIOError("GOP frames disagree on geometry")

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def width(self) -> int:
        return self.frames[0].width

    @property
    def height(self) -> int:
        return self.frames[0].height

    @property
    def pixel_range(self) -> str:
        return self.frames[0].pixel_range

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(f"{self.width}x{self.height}@{self.fps}".encode())
        for f in self.frames:
            h.update(f.tobytes())
        return h.hexdigest()


@dataclass
class FootprintView:
    """Every n-th frame of a parent GOP, used to cheapen mode selection."""

    parent: GopSegment
    stride: int
    frames: tuple[PlanarFrame, ...]

    def __len__(self) -> int:
        return len(self.frames)


# ---------------------------------------------------------------------------
# Y4M (YUV4MPEG2)

_Source = Union[str, Path, bytes, BinaryIO]


def _as_stream(src: _Source) -> BinaryIO:
    if isinstance(src, (str, Path)):
        return open(src, "rb")
    if isinstance(src, bytes):
        return io.BytesIO(src)
    return src


def _read_line(stream: BinaryIO, what: str) -> bytes:
    buf = bytearray()
    while True:
        c = stream.read(1)
        if not c:
            if buf:
                raise FrameIOError(f"unterminated {what} line")
            return b""
        if c == b"\n":
            return bytes(buf)
        buf += c
        if len(buf) > 512:
            raise FrameIOError(f"{what} line too long")


def _parse_header(line: bytes) -> dict:
    if not line.startswith(b"YUV4MPEG2"):
        raise FrameIOError("missing YUV4MPEG2 signature")
    params: dict = {
        "width": None,
        "height": None,
        "fps": None,
        "colorspace": "420jpeg",
        "interlace": None,
        "aspect": None,
        "pixel_range": LIMITED,
    }
    for tok in line.decode("ascii", "replace").split()[1:]:
        tag, val = tok[0], tok[1:]
        if tag == "W":
            params["width"] = int(val)
        elif tag == "H":
            params["height"] = int(val)
        elif tag == "F":
            num, den = val.split(":")
            params["fps"] = Fraction(int(num), int(den))
        elif tag == "C":
            if val not in _C420_TAGS:
                raise FrameIOError(f"unsupported colorspace C{val} (only 8-bit 4:2:0)")
            params["colorspace"] = val
        elif tag == "I":
            params["interlace"] = val
        elif tag == "A":
            params["aspect"] = val
        elif tag == "X":
            if val.upper() == "COLORRANGE=FULL":
                params["pixel_range"] = FULL
    if params["width"] is None or params["height"] is None or params["fps"] is None:
        raise FrameIOError("Y4M header must declare W, H and F")
    if params["width"] < 1 or params["height"] < 1:
        raise FrameIOError("non-positive Y4M dimensions")
    return params


def read_y4m(src: _Source) -> VideoSequence:
    """Parse a YUV4MPEG2 stream into frames.

    Accepts only 8-bit 4:2:0 colorspaces; anything else raises rather than
    silently converting.
    """
    stream = _as_stream(src)
    own = isinstance(src, (str, Path))
    try:
        header = _read_line(stream, "header")
        if not header:
            raise FrameIOError("empty stream")
        p = _parse_header(header)
        w, h = p["width"], p["height"]
        cw, ch = ceil_half(w), ceil_half(h)
        ysz, csz = w * h, cw * ch
        frames: list[PlanarFrame] = []
        while True:
            marker = _read_line(stream, "frame marker")
            if not marker:
                break
            if not marker.startswith(b"FRAME"):
                raise FrameIOError(f"expected FRAME marker, got {marker[:16]!r}")
            payload = stream.read(ysz + 2 * csz)
            if len(payload) != ysz + 2 * csz:
                raise FrameIOError(
                    f"truncated frame payload: {len(payload)} of {ysz + 2 * csz} bytes"
                )
            buf = np.frombuffer(payload, dtype=np.uint8)
            frames.append(
                PlanarFrame(
                    w,
                    h,
                    buf[:ysz].reshape(h, w).copy(),
                    buf[ysz : ysz + csz].reshape(ch, cw).copy(),
                    buf[ysz + csz :].reshape(ch, cw).copy(),
                    p["pixel_range"],
                )
            )
        return VideoSequence(frames, p["fps"], p["colorspace"], p["interlace"], p["aspect"])
    finally:
        if own:
            stream.close()


def write_y4m(video: VideoSequence | Sequence[PlanarFrame], dst: Union[str, Path, BinaryIO],
              fps: Fraction | None = None, colorspace: str | None = None) -> None:
    """Serialize frames as YUV4MPEG2; byte-exact inverse of read_y4m."""
    if isinstance(video, VideoSequence):
        frames = video.frames
        fps = fps or video.fps
        colorspace = colorspace or video.colorspace
        interlace, aspect = video.interlace, video.aspect
        pixel_range = frames[0].pixel_range if frames else LIMITED
    else:
        frames = list(video)
        fps = fps or Fraction(30, 1)
        colorspace = colorspace or "420jpeg"
        interlace = aspect = None
        pixel_range = frames[0].pixel_range if frames else LIMITED
    if not frames:
        raise FrameIOError("nothing to write")
    f0 = frames[0]
    parts = [f"YUV4MPEG2 W{f0.width} H{f0.height} F{fps.numerator}:{fps.denominator}"]
    if interlace:
        parts.append(f"I{interlace}")
    if aspect:
        parts.append(f"A{aspect}")
    parts.append(f"C{colorspace}")
    if pixel_range == FULL:
        parts.append("XCOLORRANGE=FULL")
    header = (" ".join(parts) + "\n").encode("ascii")

    stream = open(dst, "wb") if isinstance(dst, (str, Path)) else dst
    own = isinstance(dst, (str, Path))
    try:
        stream.write(header)
        for f in frames:
            if f.width != f0.width or f.height != f0.height:
                raise FrameIOError("frames disagree on geometry")
            stream.write(b"FRAME\n")
            stream.write(f.tobytes())
    finally:
        if own:
            stream.close()


def y4m_bytes(frames: Sequence[PlanarFrame], fps: Fraction) -> bytes:
    """In-memory Y4M serialization (for feeding encoder subprocesses)."""
    buf = io.BytesIO()
    write_y4m(list(frames), buf, fps=fps)
    return buf.getvalue()


# ---------------------------------------------------------------------------
# Raw planar yuv420p

def read_yuv420(src: _Source, width: int, height: int,
                fps: Fraction = Fraction(25, 1)) -> VideoSequence:
    """Read headerless yuv420p; dimensions must come from the caller."""
    if width < 1 or height < 1:
        raise FrameIOError("raw reader needs positive dimensions")
    stream = _as_stream(src)
    own = isinstance(src, (str, Path))
    try:
        data = stream.read()
    finally:
        if own:
            stream.close()
    cw, ch = ceil_half(width), ceil_half(height)
    ysz, csz = width * height, cw * ch
    fsz = ysz + 2 * csz
    if not data:
        raise FrameIOError("empty raw stream")
    if len(data) % fsz:
        raise FrameIOError(f"raw payload is not a whole number of {fsz}-byte frames")
    frames = []
    for off in range(0, len(data), fsz):
        buf = np.frombuffer(data[off : off + fsz], dtype=np.uint8)
        frames.append(
            PlanarFrame(
                width,
                height,
                buf[:ysz].reshape(height, width).copy(),
                buf[ysz : ysz + csz].reshape(ch, cw).copy(),
                buf[ysz + csz :].reshape(ch, cw).copy(),
            )
        )
    return VideoSequence(frames, fps)


def write_yuv420(frames: Sequence[PlanarFrame], dst: Union[str, Path, BinaryIO]) -> None:
    stream = open(dst, "wb") if isinstance(dst, (str, Path)) else dst
    own = isinstance(dst, (str, Path))
    try:
        for f in frames:
            stream.write(f.tobytes())
    finally:
        if own:
            stream.close()


# ---------------------------------------------------------------------------
# Segmentation

def segment_gops(frames: VideoSequence | Sequence[PlanarFrame], gop_len: int,
                 fps: Fraction | None = None) -> list[GopSegment]:
    """Cut a frame sequence into consecutive fixed-length GOPs.

    The last segment may be shorter; it is processed like any other GOP
    downstream.
    """
    if gop_len < 1:
        raise ValueError(f"gop_len must be >= 1, got {gop_len}")
    if isinstance(frames, VideoSequence):
        fps = fps or frames.fps
        frame_list = frames.frames
    else:
        fps = fps or Fraction(30, 1)
        frame_list = list(frames)
    if not frame_list:
        raise FrameIOError("no frames to segment")
    gops = []
    for idx, start in enumerate(range(0, len(frame_list), gop_len)):
        gops.append(
            GopSegment(idx, start, tuple(frame_list[start : start + gop_len]), fps)
        )
    return gops


def footprint(gop: GopSegment, n: int) -> FootprintView:
    """Keep only every n-th frame of a GOP (frames 0, n, 2n, ...)."""
    if n < 1:
        raise ValueError(f"footprint stride must be >= 1, got {n}")
    return FootprintView(parent=gop, stride=n, frames=gop.frames[::n])
