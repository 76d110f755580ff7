"""Weight-file serialization (DVPW wire format).

Layout: magic "DVPW", u32 LE version (1), u32 LE record count, then per
record u16 name length + UTF-8 canonical layer path, u8 rank, rank x u32
dims ((out, in, kh, kw) for kernels), float32 LE row-major payload; biases
and PReLU slopes are separate ".bias" / ".prelu" records.  A u32 CRC32 of
everything preceding closes the file.
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path
from typing import Union

import numpy as np
import torch

from .network import PrecodingNetwork

MAGIC = b"DVPW"
VERSION = 1


class WeightsIOError(ValueError):
    pass


def _layer_paths(net: PrecodingNetwork) -> list[tuple[str, torch.nn.Conv2d, torch.nn.PReLU | None]]:
    out = [
        ("root.conv1", net.root_conv1, net.root_act1),
        ("root.conv2", net.root_conv2, net.root_act2),
    ]
    for m, stream in enumerate(net.streams, start=1):
        for n, block in enumerate(stream.blocks, start=1):
            base = f"s{m}.b{n}"
            out.extend([
                (f"{base}.conv1", block.conv1, block.act1),
                (f"{base}.conv_mid", block.conv_mid, block.act_mid),
                (f"{base}.conv2", block.conv2, block.act2),
                (f"{base}.conv_out", block.conv_out, block.act_out),
            ])
        for n, proj in enumerate(stream.projections, start=1):
            out.append((f"s{m}.f{n}", proj, None))
    return out


def _pack(name: str, tensor: np.ndarray) -> bytes:
    payload = np.ascontiguousarray(tensor, dtype="<f4").tobytes()
    nb = name.encode("utf-8")
    head = struct.pack("<H", len(nb)) + nb + struct.pack("<B", tensor.ndim)
    head += b"".join(struct.pack("<I", d) for d in tensor.shape)
    return head + payload


def save_dvpw(net: PrecodingNetwork, dst: Union[str, Path]) -> Path:
    records = []
    for path, conv, act in _layer_paths(net):
        records.append(_pack(path, conv.weight.detach().cpu().numpy()))
        records.append(_pack(f"{path}.bias", conv.bias.detach().cpu().numpy()))
        if act is not None:
            records.append(_pack(f"{path}.prelu", act.weight.detach().cpu().numpy()))
    body = MAGIC + struct.pack("<II", VERSION, len(records)) + b"".join(records)
    blob = body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)
    dst = Path(dst)
    dst.parent.mkdir(parents=True, exist_ok=True)
    dst.write_bytes(blob)
    return dst


def load_dvpw(src: Union[str, Path]) -> PrecodingNetwork:
    data = Path(src).read_bytes()
    if len(data) < 16:
        raise WeightsIOError("weight file too short")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise WeightsIOError("checksum mismatch")
    if body[:4] != MAGIC:
        raise WeightsIOError("bad magic")
    version, count = struct.unpack("<II", body[4:12])
    if version != VERSION:
        raise WeightsIOError(f"unsupported version {version}")
    pos = 12
    records: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", body[pos : pos + 2])
        pos += 2
        name = body[pos : pos + nlen].decode("utf-8")
        pos += nlen
        rank = body[pos]
        pos += 1
        dims = struct.unpack(f"<{rank}I", body[pos : pos + 4 * rank])
        pos += 4 * rank
        size = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(body[pos : pos + 4 * size], dtype="<f4").reshape(dims)
        pos += 4 * size
        records[name] = arr
    if pos != len(body):
        raise WeightsIOError("trailing bytes")

    net = PrecodingNetwork()
    with torch.no_grad():
        for path, conv, act in _layer_paths(net):
            wanted = {path: conv.weight, f"{path}.bias": conv.bias}
            if act is not None:
                wanted[f"{path}.prelu"] = act.weight
            for name, param in wanted.items():
                if name not in records:
                    raise WeightsIOError(f"missing record {name}")
                arr = records.pop(name)
                if tuple(arr.shape) != tuple(param.shape):
                    raise WeightsIOError(
                        f"{name}: shape {arr.shape}, expected {tuple(param.shape)}"
                    )
                param.copy_(torch.from_numpy(arr.copy()))
    if records:
        raise WeightsIOError(f"unknown records {sorted(records)[:4]}")
    return net
