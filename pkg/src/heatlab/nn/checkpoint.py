"""Binary checkpoint: magic, header length, JSON manifest, then little-endian float64 values."""

from __future__ import annotations

import json
import struct
from collections import OrderedDict
from pathlib import Path
from typing import Mapping, Optional

import numpy as np

MAGIC = b"HEATLAB-CKPT\n"
CHECKPOINT_VERSION = "1"


class CheckpointError(ValueError):
    pass


def encode_checkpoint(tensors: Mapping[str, np.ndarray], meta: Optional[dict] = None) -> bytes:
    manifest = [{"name": n, "shape": list(np.shape(a))} for n, a in tensors.items()]
    header = json.dumps(
        {"version": CHECKPOINT_VERSION, "tensors": manifest, "meta": meta or {}}, sort_keys=True
    ).encode("utf-8")
    body = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in tensors.values())
    return MAGIC + struct.pack("<Q", len(header)) + header + body


def decode_checkpoint(raw: bytes) -> tuple["OrderedDict[str, np.ndarray]", dict]:
    if not raw.startswith(MAGIC):
        raise CheckpointError("not a checkpoint file")
    pos = len(MAGIC)
    if len(raw) < pos + 8:
        raise CheckpointError("truncated checkpoint header")
    (n_header,) = struct.unpack_from("<Q", raw, pos)
    pos += 8
    if len(raw) < pos + n_header:
        raise CheckpointError("truncated checkpoint header")
    try:
        header = json.loads(raw[pos:pos + n_header].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable checkpoint header: {exc}") from None
    pos += n_header
    version = header.get("version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"checkpoint version {version!r} unsupported, expected {CHECKPOINT_VERSION!r}")
    sizes = [int(np.prod(t["shape"], dtype=np.int64)) for t in header["tensors"]]
    expected = pos + 8 * sum(sizes)
    if len(raw) != expected:
        kind = "truncated" if len(raw) < expected else "oversized"
        raise CheckpointError(f"{kind} checkpoint: {len(raw)} bytes, manifest needs {expected}")
    out: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for t, n in zip(header["tensors"], sizes):
        arr = np.frombuffer(raw, dtype="<f8", count=n, offset=pos).astype(np.float64)
        out[t["name"]] = arr.reshape(t["shape"])
        pos += 8 * n
    return out, header.get("meta", {})


def save_checkpoint(path, tensors: Mapping[str, np.ndarray], meta: Optional[dict] = None) -> None:
    Path(path).write_bytes(encode_checkpoint(tensors, meta))


def load_checkpoint(path) -> tuple["OrderedDict[str, np.ndarray]", dict]:
    return decode_checkpoint(Path(path).read_bytes())
