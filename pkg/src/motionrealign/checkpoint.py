"""Single-file pipeline checkpoint.

Layout: 8-byte magic, uint64 little-endian manifest length, UTF-8 JSON
manifest, then the payload of named float32 little-endian blocks. The
manifest indexes every block by name, shape, offset and sha256, and carries
the stage flags, config snapshot and training logs.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"MRCKPT\x00\x01"
FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


def _canon(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False).encode()


def encode_checkpoint(blocks: dict[str, np.ndarray], meta: dict) -> bytes:
    index = []
    chunks = []
    offset = 0
    for name in sorted(blocks):
        raw = np.ascontiguousarray(np.asarray(blocks[name], dtype="<f4")).tobytes()
        index.append({"name": name, "shape": list(np.shape(blocks[name])), "offset": offset,
                      "nbytes": len(raw), "sha256": hashlib.sha256(raw).hexdigest()})
        chunks.append(raw)
        offset += len(raw)
    manifest = _canon({"version": FORMAT_VERSION, "meta": meta, "blocks": index})
    return MAGIC + struct.pack("<Q", len(manifest)) + manifest + b"".join(chunks)


def decode_checkpoint(data: bytes) -> tuple[dict[str, np.ndarray], dict]:
    if data[:8] != MAGIC:
        raise CheckpointError("not a pipeline checkpoint (bad magic)")
    (n,) = struct.unpack("<Q", data[8:16])
    manifest = json.loads(data[16:16 + n])
    if manifest.get("version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {manifest.get('version')}")
    base = 16 + n
    blocks = {}
    for entry in manifest["blocks"]:
        raw = data[base + entry["offset"]: base + entry["offset"] + entry["nbytes"]]
        if len(raw) != entry["nbytes"] or hashlib.sha256(raw).hexdigest() != entry["sha256"]:
            raise CheckpointError(f"block {entry['name']!r} failed its hash check")
        arr = np.frombuffer(raw, dtype="<f4").astype(np.float64)
        blocks[entry["name"]] = arr.reshape(entry["shape"])
    return blocks, manifest["meta"]


def write_checkpoint(path, blocks: dict[str, np.ndarray], meta: dict) -> str:
    """Write atomically; returns the sha256 of the file."""
    data = encode_checkpoint(blocks, meta)
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(data)
    tmp.replace(path)
    return hashlib.sha256(data).hexdigest()


def read_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    return decode_checkpoint(Path(path).read_bytes())


def to_float32(x: np.ndarray) -> np.ndarray:
    """Round to the payload precision so in-memory and reloaded models agree."""
    return np.asarray(x, dtype=np.float64).astype("<f4").astype(np.float64)
