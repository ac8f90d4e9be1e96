"""Binary checkpoint container and atomic file helpers.

Layout (all integers little-endian)::

    b"FHDKCKPT"  magic
    uint32       format version
    uint64       manifest length in bytes
    manifest     UTF-8 JSON: {"version", "config_hash", "meta", "config",
                 "arrays": [{"name", "shape", "offset", "nbytes"}, ...]}
    payload      concatenated '<f8' arrays, offsets relative to payload start
"""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

from ..io import atomic_write_bytes

MAGIC = b"FHDKCKPT"
VERSION = 1
_HEADER = struct.Struct("<8sIQ")


class CheckpointError(ValueError):
    """Malformed or incompatible checkpoint file."""


def config_hash(config) -> str:
    """SHA-256 of the canonical JSON form of a config mapping."""
    if config is None:
        return ""
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def save_checkpoint(path, arrays: dict, meta=None, config=None):
    entries = []
    chunks = []
    offset = 0
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name], dtype="<f8")
        raw = arr.tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    manifest = {
        "version": VERSION,
        "config_hash": config_hash(config),
        "meta": meta or {},
        "config": config,
        "arrays": entries,
    }
    text = json.dumps(manifest, sort_keys=True).encode("utf-8")
    atomic_write_bytes(path, _HEADER.pack(MAGIC, VERSION, len(text)) + text + b"".join(chunks))


def load_checkpoint(path):
    """``(arrays, manifest)``; arrays are float64 numpy arrays keyed by name."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _HEADER.size:
        raise CheckpointError("file too short for a checkpoint header")
    magic, version, mlen = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    start = _HEADER.size + mlen
    if len(data) < start:
        raise CheckpointError("truncated manifest")
    manifest = json.loads(data[_HEADER.size:start].decode("utf-8"))
    payload = memoryview(data)[start:]
    arrays = {}
    for e in manifest["arrays"]:
        lo, n = e["offset"], e["nbytes"]
        if lo + n > len(payload) or n != 8 * int(np.prod(e["shape"], dtype=np.int64)):
            raise CheckpointError(f"array {e['name']} is truncated or inconsistent")
        arrays[e["name"]] = np.frombuffer(payload[lo : lo + n], dtype="<f8").reshape(e["shape"]).astype(np.float64)
    if manifest.get("config") is not None and config_hash(manifest["config"]) != manifest["config_hash"]:
        raise CheckpointError("config hash does not match stored config")
    return arrays, manifest
