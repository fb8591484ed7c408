"""Self-describing parameter files: JSON header followed by named f32 blobs.

Layout: magic ``b"MCKPT1"``, u32 header length, UTF-8 JSON header with
``meta`` (free-form configs) and ``tensors`` (ordered name/shape list), then
each tensor as little-endian f32 in header order.
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path
from typing import Dict, Tuple

import numpy as np
import torch

MAGIC = b"MCKPT1"


class CheckpointError(ValueError):
    pass


def encode(tensors: Dict[str, torch.Tensor], meta: dict) -> bytes:
    names = list(tensors)
    header = {
        "meta": meta,
        "tensors": [{"name": n, "shape": list(tensors[n].shape)} for n in names],
    }
    hbytes = json.dumps(header, sort_keys=True).encode()
    blobs = [tensors[n].detach().cpu().numpy().astype("<f4").tobytes() for n in names]
    return b"".join([MAGIC, struct.pack("<I", len(hbytes)), hbytes] + blobs)


def decode(buf: bytes) -> Tuple[Dict[str, torch.Tensor], dict]:
    if buf[: len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    (hlen,) = struct.unpack_from("<I", buf, len(MAGIC))
    start = len(MAGIC) + 4
    header = json.loads(buf[start : start + hlen].decode())
    off = start + hlen
    tensors = {}
    for entry in header["tensors"]:
        n = int(np.prod(entry["shape"], dtype=np.int64))
        if off + 4 * n > len(buf):
            raise CheckpointError(f"truncated blob for {entry['name']}")
        arr = np.frombuffer(buf, "<f4", n, off).reshape(entry["shape"]).copy()
        tensors[entry["name"]] = torch.from_numpy(arr)
        off += 4 * n
    if off != len(buf):
        raise CheckpointError("trailing bytes after last tensor")
    return tensors, header["meta"]


def save(path, tensors: Dict[str, torch.Tensor], meta: dict) -> None:
    Path(path).write_bytes(encode(tensors, meta))


def load(path) -> Tuple[Dict[str, torch.Tensor], dict]:
    return decode(Path(path).read_bytes())


def file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def module_tensors(module: torch.nn.Module, prefix: str) -> Dict[str, torch.Tensor]:
    return {f"{prefix}.{k}": v for k, v in module.state_dict().items()}


def load_module(module: torch.nn.Module, tensors: Dict[str, torch.Tensor], prefix: str) -> None:
    """Copies ``prefix.*`` tensors into ``module``; rejects missing names and shape mismatches by name."""
    state = module.state_dict()
    for name, current in state.items():
        key = f"{prefix}.{name}"
        if key not in tensors:
            raise CheckpointError(f"checkpoint lacks {key}")
        if tuple(tensors[key].shape) != tuple(current.shape):
            raise CheckpointError(
                f"shape mismatch for {key}: file {tuple(tensors[key].shape)} vs model {tuple(current.shape)}"
            )
        state[name] = tensors[key].to(current.dtype)
    module.load_state_dict(state)


def optimizer_tensors(opt: torch.optim.Optimizer, module: torch.nn.Module, prefix: str) -> Dict[str, torch.Tensor]:
    out = {}
    for name, p in module.named_parameters():
        st = opt.state.get(p)
        if not st:
            continue
        for k in ("exp_avg", "exp_avg_sq"):
            out[f"{prefix}.{name}.{k}"] = st[k]
        out[f"{prefix}.{name}.step"] = torch.as_tensor(st["step"], dtype=torch.float32).reshape(1)
    return out


def load_optimizer(opt: torch.optim.Optimizer, module: torch.nn.Module, tensors, prefix: str) -> None:
    for name, p in module.named_parameters():
        key = f"{prefix}.{name}"
        if f"{key}.exp_avg" not in tensors:
            continue
        opt.state[p] = {
            "step": torch.tensor(float(tensors[f"{key}.step"][0])),
            "exp_avg": tensors[f"{key}.exp_avg"].to(p.dtype).clone(),
            "exp_avg_sq": tensors[f"{key}.exp_avg_sq"].to(p.dtype).clone(),
        }
