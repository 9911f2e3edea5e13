"""Versioned checkpoint container: named tensors in the dataset tensor
format plus a config fingerprint and a small metadata record."""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np
import torch

from .swedio import (
    BadMagicError,
    BadVersionError,
    TruncatedTensorError,
    tensor_blob_size,
    tensor_from_bytes,
    tensor_to_bytes,
)

CKPT_MAGIC = b"SWEC"
CKPT_VERSION = 1


class FingerprintMismatchError(ValueError):
    pass


def config_fingerprint(config_dict: dict) -> str:
    blob = json.dumps(config_dict, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _pack_str(s: str) -> bytes:
    b = s.encode()
    return struct.pack("<I", len(b)) + b


def _unpack_str(buf: bytes, off: int) -> tuple[str, int]:
    (n,) = struct.unpack("<I", buf[off : off + 4])
    off += 4
    return buf[off : off + n].decode(), off + n


def save_checkpoint(
    path: Path | str,
    state_dict: dict[str, torch.Tensor],
    config_dict: dict,
    meta: dict | None = None,
) -> None:
    out = bytearray()
    out += CKPT_MAGIC
    out += struct.pack("<I", CKPT_VERSION)
    out += _pack_str(config_fingerprint(config_dict))
    out += _pack_str(json.dumps(meta or {}, sort_keys=True))
    names = list(state_dict.keys())
    out += struct.pack("<I", len(names))
    for name in names:
        # integer buffers (e.g. batch-norm step counters) ride along as f32;
        # values stay exact well past any realistic step count
        arr = state_dict[name].detach().cpu().numpy().astype(np.float32)
        out += _pack_str(name)
        out += tensor_to_bytes(arr)
    Path(path).write_bytes(bytes(out))


def load_checkpoint(
    path: Path | str, config_dict: dict | None = None
) -> tuple[dict[str, np.ndarray], str, dict]:
    buf = Path(path).read_bytes()
    if buf[:4] != CKPT_MAGIC:
        raise BadMagicError(f"bad checkpoint magic {buf[:4]!r}")
    (version,) = struct.unpack("<I", buf[4:8])
    if version != CKPT_VERSION:
        raise BadVersionError(f"unsupported checkpoint version {version}")
    fingerprint, off = _unpack_str(buf, 8)
    meta_json, off = _unpack_str(buf, off)
    if config_dict is not None:
        expected = config_fingerprint(config_dict)
        if fingerprint != expected:
            raise FingerprintMismatchError(
                f"checkpoint fingerprint {fingerprint} != config {expected}"
            )
    (count,) = struct.unpack("<I", buf[off : off + 4])
    off += 4
    tensors = {}
    for _ in range(count):
        name, off = _unpack_str(buf, off)
        size = tensor_blob_size(buf, off)
        if len(buf) < off + size:
            raise TruncatedTensorError(f"checkpoint ends inside tensor {name!r}")
        tensors[name] = tensor_from_bytes(buf[off : off + size])
        off += size
    return tensors, fingerprint, json.loads(meta_json)


def load_into_model(
    path: Path | str, model: torch.nn.Module, config_dict: dict
) -> dict:
    """Restore a model's parameters, casting back to each target dtype."""
    tensors, _, meta = load_checkpoint(path, config_dict)
    state = model.state_dict()
    missing = set(state) - set(tensors)
    extra = set(tensors) - set(state)
    if missing or extra:
        raise KeyError(f"state mismatch: missing {sorted(missing)[:3]}, extra {sorted(extra)[:3]}")
    new_state = {
        name: torch.from_numpy(arr).to(state[name].dtype).reshape(state[name].shape)
        for name, arr in tensors.items()
    }
    model.load_state_dict(new_state)
    return meta
