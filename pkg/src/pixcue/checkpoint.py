"""``.pxc`` checkpoint files.

Layout (little-endian): ``PXCU``, u32 version, u32 header length, UTF-8
JSON header, then every tensor listed in ``header["tensors"]`` as float32,
in header order.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

from .formats import FormatError, atomic_write
from .recon_net import Architecture, PixCueNet
from .training import Checkpoint, TrainingConfig

MAGIC = b"PXCU"
VERSION = 1


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    state = ckpt.net.state_dict()
    tensors = []
    blobs = []
    for name, t in state.items():
        arr = t.detach().cpu().numpy().astype("<f4")
        tensors.append({"name": name, "shape": list(arr.shape), "dtype": "float32"})
        blobs.append(arr.tobytes())
    header = {
        "tensors": tensors,
        "architecture": ckpt.net.arch.to_dict(),
        "config": ckpt.config.to_dict(),
        "best_val_loss": ckpt.best_val_loss,
        "best_epoch": ckpt.best_epoch,
        "train_history": list(ckpt.train_history),
        "val_history": list(ckpt.val_history),
        "mask_spec": ckpt.mask_spec,
    }
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    return MAGIC + struct.pack("<II", VERSION, len(raw)) + raw + b"".join(blobs)


def decode_checkpoint(buf: bytes) -> Checkpoint:
    if buf[:4] != MAGIC:
        raise FormatError("not a .pxc checkpoint (bad magic bytes)")
    if len(buf) < 12:
        raise FormatError("truncated checkpoint header")
    version, hlen = struct.unpack("<II", buf[4:12])
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    if len(buf) < 12 + hlen:
        raise FormatError("truncated checkpoint header")
    try:
        header = json.loads(buf[12 : 12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"corrupt checkpoint header: {exc}") from None

    arch = Architecture(**header["architecture"])
    net = PixCueNet(arch)
    state = {}
    offset = 12 + hlen
    for spec in header["tensors"]:
        size = int(np.prod(spec["shape"], dtype=np.int64)) * 4
        if offset + size > len(buf):
            raise FormatError(f"truncated checkpoint: tensor {spec['name']!r} is incomplete")
        arr = np.frombuffer(buf[offset : offset + size], dtype="<f4").reshape(spec["shape"])
        state[spec["name"]] = torch.from_numpy(arr.astype(np.float32))
        offset += size
    missing = set(net.state_dict()) - set(state)
    if missing:
        raise FormatError(f"checkpoint lacks tensors: {sorted(missing)}")
    net.load_state_dict(state)
    return Checkpoint(
        net=net,
        config=TrainingConfig.from_dict(header["config"]),
        best_val_loss=float(header["best_val_loss"]),
        train_history=[float(v) for v in header["train_history"]],
        val_history=[float(v) for v in header["val_history"]],
        best_epoch=int(header.get("best_epoch", 0)),
        mask_spec=header.get("mask_spec", {}),
    )


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    return atomic_write(path, encode_checkpoint(ckpt))


def load_checkpoint(path) -> Checkpoint:
    return decode_checkpoint(Path(path).read_bytes())
