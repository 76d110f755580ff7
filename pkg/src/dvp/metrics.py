"""Quality and rate metrics: YUV PSNR, rate-quality curve deltas, external VMAF.

Per-frame PSNR is the arithmetic mean of the three channel PSNRs, with equal
channel weight regardless of the 4:2:0 sample-count asymmetry; sequence PSNR
averages the per-frame values.  Curve deltas use the classical cubic fit of
log10(rate) against quality.
"""

from __future__ import annotations

import csv
import json
import shlex
import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from .frame_io import PlanarFrame

# Finite stand-in for infinite PSNR; keeps sequence averages usable and the
# per-channel mapping monotone.
PSNR_CAP_DB = 100.0


class MetricsError(ValueError):
    pass


@dataclass
class FrameQuality:
    mse_y: float
    mse_cb: float
    mse_cr: float
    psnr_avg: float


@dataclass
class QualityReport:
    per_frame: list[FrameQuality]
    sequence_psnr: float
    sequence_vmaf: float | None = None


def _plane_mse(a: np.ndarray, b: np.ndarray) -> float:
    d = a.astype(np.float64) - b.astype(np.float64)
    return float(np.mean(d * d))


def _psnr(mse: float, cap: float = PSNR_CAP_DB) -> float:
    if mse <= 0.0:
        return cap
    return min(10.0 * np.log10(255.0**2 / mse), cap)


def frame_psnr(a: PlanarFrame, b: PlanarFrame, cap: float = PSNR_CAP_DB) -> FrameQuality:
    """Per-channel MSE and the equally-weighted average channel PSNR."""
    if (a.width, a.height) != (b.width, b.height):
        raise MetricsError(
            f"geometry mismatch {a.width}x{a.height} vs {b.width}x{b.height}"
        )
    mse_y = _plane_mse(a.y, b.y)
    mse_cb = _plane_mse(a.cb, b.cb)
    mse_cr = _plane_mse(a.cr, b.cr)
    avg = (_psnr(mse_y, cap) + _psnr(mse_cb, cap) + _psnr(mse_cr, cap)) / 3.0
    return FrameQuality(mse_y, mse_cb, mse_cr, avg)


def frame_mse(a: PlanarFrame, b: PlanarFrame) -> float:
    """Distortion used on the RD plane: mean of the three channel MSEs."""
    q = frame_psnr(a, b)
    return (q.mse_y + q.mse_cb + q.mse_cr) / 3.0


def sequence_quality(reference: Sequence[PlanarFrame], distorted: Sequence[PlanarFrame],
                     cap: float = PSNR_CAP_DB) -> QualityReport:
    if len(reference) != len(distorted):
        raise MetricsError(f"frame count mismatch {len(reference)} vs {len(distorted)}")
    if not reference:
        raise MetricsError("empty sequences")
    per_frame = [frame_psnr(r, d, cap) for r, d in zip(reference, distorted)]
    return QualityReport(per_frame, float(np.mean([f.psnr_avg for f in per_frame])))


def sequence_mse(reference: Sequence[PlanarFrame], distorted: Sequence[PlanarFrame]) -> float:
    if len(reference) != len(distorted) or not reference:
        raise MetricsError("sequences must be non-empty and equally long")
    return float(np.mean([frame_mse(r, d) for r, d in zip(reference, distorted)]))


# ---------------------------------------------------------------------------
# Rate-quality curve deltas

@dataclass
class RDCurve:
    """Operating points of one encoder configuration, rates strictly rising."""

    points: list[tuple[float, float]]  # (rate bits/s, quality)
    metric: str = "psnr"

    def __post_init__(self):
        if len(self.points) < 4:
            raise MetricsError(f"need >= 4 points for curve deltas, got {len(self.points)}")
        rates = [p[0] for p in self.points]
        if any(r <= 0 for r in rates):
            raise MetricsError("rates must be positive")
        if any(b <= a for a, b in zip(rates, rates[1:])):
            raise MetricsError("rates must be strictly increasing")

    @property
    def rates(self) -> np.ndarray:
        return np.array([p[0] for p in self.points], dtype=np.float64)

    @property
    def qualities(self) -> np.ndarray:
        return np.array([p[1] for p in self.points], dtype=np.float64)


@dataclass
class BDResult:
    bd_rate: float  # percent; positive means the second curve spends more rate
    bd_quality: float  # metric units; positive means the second curve is better


def _poly_mean(x: np.ndarray, y: np.ndarray, lo: float, hi: float) -> float:
    p = np.polyfit(x, y, 3)
    integral = np.polyval(np.polyint(p), hi) - np.polyval(np.polyint(p), lo)
    return integral / (hi - lo)


def _pchip_mean(x: np.ndarray, y: np.ndarray, lo: float, hi: float) -> float:
    from scipy.interpolate import PchipInterpolator

    order = np.argsort(x)
    f = PchipInterpolator(x[order], y[order]).antiderivative()
    return (f(hi) - f(lo)) / (hi - lo)


def bd_metrics(curve_a: RDCurve, curve_b: RDCurve, method: str = "cubic") -> BDResult:
    """Average rate/quality deltas of curve_b relative to curve_a.

    method "cubic" is the classical 4-point polynomial fit; "pchip" is a
    piecewise-cubic-hermite variant for longer curves.
    """
    if method not in ("cubic", "pchip"):
        raise MetricsError(f"unknown method {method!r}")
    mean = _poly_mean if method == "cubic" else _pchip_mean

    log_ra, qa = np.log10(curve_a.rates), curve_a.qualities
    log_rb, qb = np.log10(curve_b.rates), curve_b.qualities
    for q, name in ((qa, "first"), (qb, "second")):
        if np.any(np.diff(q) <= 0):
            raise MetricsError(f"{name} curve quality must rise strictly with rate")

    q_lo, q_hi = max(qa.min(), qb.min()), min(qa.max(), qb.max())
    if q_hi <= q_lo:
        raise MetricsError("curves have no overlapping quality range")
    avg_log_diff = mean(qb, log_rb, q_lo, q_hi) - mean(qa, log_ra, q_lo, q_hi)
    bd_rate = (10.0**avg_log_diff - 1.0) * 100.0

    r_lo, r_hi = max(log_ra.min(), log_rb.min()), min(log_ra.max(), log_rb.max())
    if r_hi <= r_lo:
        raise MetricsError("curves have no overlapping rate range")
    bd_quality = mean(log_rb, qb, r_lo, r_hi) - mean(log_ra, qa, r_lo, r_hi)
    return BDResult(bd_rate=float(bd_rate), bd_quality=float(bd_quality))


def read_rd_csv(path: Union[str, Path], metric: str = "psnr") -> RDCurve:
    points = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip().startswith("#"):
                continue
            try:
                points.append((float(row[0]), float(row[1])))
            except (ValueError, IndexError):
                continue  # header line
    return RDCurve(points, metric)


def write_rd_csv(curve: RDCurve, path: Union[str, Path]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["rate", curve.metric])
        w.writerows(curve.points)


# ---------------------------------------------------------------------------
# External VMAF

@dataclass
class VmafStatus:
    available: bool
    score: float | None = None
    reason: str | None = None


def _pluck_vmaf(doc: dict) -> float | None:
    pooled = doc.get("pooled_metrics", {})
    if isinstance(pooled, dict):
        vm = pooled.get("vmaf", {})
        if isinstance(vm, dict) and "mean" in vm:
            return float(vm["mean"])
    if "VMAF score" in doc:
        return float(doc["VMAF score"])
    agg = doc.get("aggregate", {})
    if isinstance(agg, dict) and "VMAF_score" in agg:
        return float(agg["VMAF_score"])
    return None


def vmaf_external(reference: Union[str, Path], distorted: Union[str, Path],
                  tool_template: str, width: int, height: int,
                  timeout: float = 600.0) -> VmafStatus:
    """Run an external VMAF tool and parse its pooled mean score.

    A missing tool is reported as unavailable, never fabricated.
    """
    with tempfile.TemporaryDirectory(prefix="dvp-vmaf-") as tmp:
        out = Path(tmp) / "vmaf.json"
        cmd = tool_template
        for key, val in (("REF", reference), ("DIS", distorted), ("W", width),
                         ("H", height), ("OUT", out)):
            cmd = cmd.replace("{" + key + "}", str(val))
        try:
            proc = subprocess.run(shlex.split(cmd), capture_output=True, timeout=timeout)
        except FileNotFoundError:
            return VmafStatus(False, reason="vmaf tool not installed")
        if proc.returncode != 0:
            return VmafStatus(False, reason=f"vmaf tool exited {proc.returncode}")
        try:
            doc = json.loads(out.read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise MetricsError(f"could not parse vmaf output: {e}") from e
    score = _pluck_vmaf(doc)
    if score is None:
        raise MetricsError("vmaf output carried no pooled mean score")
    if not 0.0 <= score <= 100.0:
        raise MetricsError(f"vmaf score {score} outside [0, 100]")
    return VmafStatus(True, score=score)
