"""Golden forward-pass vectors for cross-implementation parity checks.

A pack is a directory of raw little-endian tensors plus index.json: per crop
the normalized luma input, the post-activation root features, and for every
scale the float output, its 8-bit quantization, the linearly upscaled
reconstruction, and the resulting loss value.  Everything is keyed by seed,
so re-exporting reproduces the pack byte for byte.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

from .loss import upscale_all
from .network import PrecodingNetwork
from .topology import ALL_SCALES, scale_tag, target_extent
from .weights_io import save_dvpw


def synthetic_crop(size: int, seed: int) -> np.ndarray:
    """Structured test pattern in the legal normalized luma range."""
    rng = np.random.default_rng(seed)
    xx, yy = np.meshgrid(np.arange(size), np.arange(size))
    base = (
        125.0
        + 55.0 * np.sin(xx / rng.uniform(4, 18) + rng.uniform(0, 6.28))
        + 45.0 * np.cos(yy / rng.uniform(4, 18))
        + rng.normal(0.0, 9.0, (size, size))
    )
    return (np.clip(base, 16.0, 235.0) / 255.0).astype(np.float32)


def quantize_luma(y_norm: np.ndarray) -> np.ndarray:
    v = np.clip(y_norm.astype(np.float32) * 255.0, 16.0, 235.0)
    return np.floor(v + 0.5).astype(np.uint8)


def _dump(path: Path, arr: np.ndarray) -> None:
    if arr.dtype == np.uint8:
        path.write_bytes(arr.tobytes())
    else:
        path.write_bytes(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def export_golden_pack(out_dir: str | Path, n_crops: int = 4, crop: int = 120,
                       seed: int = 0, net: PrecodingNetwork | None = None,
                       lam: float = 0.5, upscaler: str = "bilinear") -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if net is None:
        net = PrecodingNetwork(seed=seed)
    net.eval()
    save_dvpw(net, out_dir / "weights.dvpw")

    vectors = []
    with torch.no_grad():
        for i in range(n_crops):
            name = f"crop{i:03d}"
            y = synthetic_crop(crop, seed * 10_000 + i)
            x = torch.from_numpy(y)[None, None]
            r_act, _ = net.root(x)
            outputs = net(x)
            upscaled = upscale_all(outputs, crop, crop, upscaler)
            loss = 0.0
            for s in ALL_SCALES:
                up = upscaled[s].to(torch.float64)
                gt = x.to(torch.float64)
                loss += float((up - gt).abs().mean())
                from .loss import gradient_term

                loss += lam * float(gradient_term(up, gt))

            _dump(out_dir / f"{name}_input.f32", y)
            root_hwc = r_act[0].permute(1, 2, 0).numpy()
            _dump(out_dir / f"{name}_root.f32", root_hwc)
            scales_doc = {}
            for s in ALL_SCALES:
                tag = scale_tag(s)
                safe = tag.replace("/", "_")
                y_map = outputs[s][0, 0].numpy()
                th, tw = target_extent(crop, s), target_extent(crop, s)
                _dump(out_dir / f"{name}_s{safe}.f32", y_map)
                _dump(out_dir / f"{name}_s{safe}.u8", quantize_luma(y_map))
                _dump(out_dir / f"{name}_s{safe}_up.f32", upscaled[s][0, 0].numpy())
                scales_doc[tag] = {
                    "shape": [th, tw],
                    "float": f"{name}_s{safe}.f32",
                    "quantized": f"{name}_s{safe}.u8",
                    "upscaled": f"{name}_s{safe}_up.f32",
                }
            vectors.append({
                "name": name,
                "input": f"{name}_input.f32",
                "shape": [crop, crop],
                "root": f"{name}_root.f32",
                "loss": loss,
                "scales": scales_doc,
            })

    index = {
        "seed": seed,
        "crop": crop,
        "lambda": lam,
        "upscaler": upscaler,
        "weights": "weights.dvpw",
        "vectors": vectors,
    }
    (out_dir / "index.json").write_text(json.dumps(index, indent=1, sort_keys=True) + "\n")
    return out_dir
