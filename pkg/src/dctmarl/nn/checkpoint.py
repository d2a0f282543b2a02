"""Parameter checkpoints.

Binary layout, all little-endian::

    magic    4 bytes  b"DCTM"
    version  uint32   1
    count    uint32   number of arrays
    then per array:
      name_len uint16, name (utf-8)
      ndim     uint8,  dims uint32 * ndim
      data     float64 * prod(dims), C order

A JSON manifest ``<file>.json`` lists every array's name, shape and byte
offset plus free-form metadata.
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path
from typing import Any, Mapping

import numpy as np

MAGIC = b"DCTM"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, arrays: Mapping[str, np.ndarray], meta: Mapping[str, Any] | None = None) -> str:
    """Write ``arrays`` and the manifest; return the SHA-256 of the binary file."""
    path = Path(path)
    buf = bytearray(MAGIC)
    buf += struct.pack("<II", VERSION, len(arrays))
    entries = []
    for name, arr in arrays.items():
        arr = np.array(arr, dtype="<f8", order="C")  # keeps 0-d shape
        raw_name = name.encode("utf-8")
        buf += struct.pack("<H", len(raw_name)) + raw_name
        buf += struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
        entries.append({"name": name, "shape": list(arr.shape), "offset": len(buf)})
        buf += arr.tobytes()
    path.write_bytes(bytes(buf))
    digest = hashlib.sha256(bytes(buf)).hexdigest()
    manifest = {"format": "DCTM", "version": VERSION, "sha256": digest,
                "arrays": entries, "meta": dict(meta or {})}
    Path(str(path) + ".json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                         encoding="utf-8")
    return digest


def load_checkpoint(path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version, count = struct.unpack_from("<II", raw, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    off = 12
    out: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", raw, off)
            off += 2
            name = raw[off:off + nlen].decode("utf-8")
            off += nlen
            (ndim,) = struct.unpack_from("<B", raw, off)
            off += 1
            shape = struct.unpack_from(f"<{ndim}I", raw, off)
            off += 4 * ndim
            size = int(np.prod(shape)) if ndim else 1
            out[name] = np.frombuffer(raw, dtype="<f8", count=size, offset=off).reshape(shape).astype(np.float64)
            off += 8 * size
    except (struct.error, ValueError) as exc:
        raise CheckpointError(f"{path}: truncated or corrupt checkpoint") from exc
    return out


def load_manifest(path) -> dict:
    return json.loads(Path(str(path) + ".json").read_text(encoding="utf-8"))
