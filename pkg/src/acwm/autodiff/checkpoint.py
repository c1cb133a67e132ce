"""Binary checkpoint container.

Layout: magic ``ACWM1`` (5 bytes), format version (u16 LE), manifest length
(u32 LE), UTF-8 JSON manifest, then the parameter payload as little-endian
float32 values concatenated in manifest order. Manifest offsets are byte
offsets into the payload.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"ACWM1"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<HI")


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    arrays: dict[str, np.ndarray]
    config: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    def subset(self, prefix: str) -> dict[str, np.ndarray]:
        """Arrays under ``prefix.``, with the prefix stripped."""
        p = prefix + "."
        return {k[len(p):]: v for k, v in self.arrays.items() if k.startswith(p)}


def to_bytes(arrays: Mapping[str, np.ndarray], config: dict | None = None,
             provenance: dict | None = None) -> bytes:
    entries = []
    chunks = []
    offset = 0
    for name, arr in arrays.items():
        a = np.ascontiguousarray(arr, dtype="<f4")
        entries.append({"name": name, "shape": list(a.shape), "offset": offset})
        chunks.append(a.tobytes())
        offset += a.nbytes
    manifest = {"params": entries, "config": config or {}, "provenance": provenance or {},
                "payload_bytes": offset}
    mbytes = json.dumps(manifest, sort_keys=True).encode("utf-8")
    return MAGIC + _HEADER.pack(FORMAT_VERSION, len(mbytes)) + mbytes + b"".join(chunks)


def from_bytes(buf: bytes) -> Checkpoint:
    if buf[:len(MAGIC)] != MAGIC:
        raise CheckpointError("bad magic; not an ACWM1 checkpoint")
    pos = len(MAGIC)
    if len(buf) < pos + _HEADER.size:
        raise CheckpointError("truncated header")
    version, mlen = _HEADER.unpack_from(buf, pos)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos += _HEADER.size
    try:
        manifest = json.loads(buf[pos:pos + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt manifest: {exc}") from exc
    payload = memoryview(buf)[pos + mlen:]
    if len(payload) != manifest["payload_bytes"]:
        raise CheckpointError(f"payload is {len(payload)} bytes, manifest says {manifest['payload_bytes']}")
    arrays = {}
    for e in manifest["params"]:
        n = int(np.prod(e["shape"], dtype=np.int64))
        a = np.frombuffer(payload, dtype="<f4", count=n, offset=e["offset"])
        arrays[e["name"]] = a.reshape(e["shape"]).astype(np.float32)
    return Checkpoint(arrays, manifest.get("config", {}), manifest.get("provenance", {}))


def save(path, arrays: Mapping[str, np.ndarray], config: dict | None = None,
         provenance: dict | None = None) -> str:
    """Write a checkpoint; returns the SHA-256 of the file contents."""
    data = to_bytes(arrays, config, provenance)
    Path(path).write_bytes(data)
    return hashlib.sha256(data).hexdigest()


def load(path) -> Checkpoint:
    return from_bytes(Path(path).read_bytes())


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
