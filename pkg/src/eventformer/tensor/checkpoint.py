"""Binary checkpoint container for named f64 tensors.

Layout::

    b"EVFCKPT\\n"
    <8-byte little-endian header length>
    <UTF-8 JSON header: {"version", "meta", "tensors": [{"name", "shape", "offset"}]}>
    <raw little-endian f64 payloads, concatenated in header order>

Tensors are written in sorted-name order and the header is serialised with
sorted keys, so identical parameters always give identical bytes.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any

import numpy as np

MAGIC = b"EVFCKPT\n"
VERSION = 1


class CheckpointError(ValueError):
    pass


def dumps(tensors: dict[str, np.ndarray], meta: dict[str, Any] | None = None) -> bytes:
    entries = []
    payload = bytearray()
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape), "offset": len(payload)})
        payload += arr.tobytes()
    header = json.dumps({"version": VERSION, "meta": meta or {}, "tensors": entries}, sort_keys=True).encode()
    return MAGIC + struct.pack("<Q", len(header)) + header + bytes(payload)


def loads(blob: bytes) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    if not blob.startswith(MAGIC):
        raise CheckpointError("not a checkpoint file (bad magic)")
    start = len(MAGIC) + 8
    if len(blob) < start:
        raise CheckpointError("truncated checkpoint header")
    (hlen,) = struct.unpack_from("<Q", blob, len(MAGIC))
    try:
        header = json.loads(blob[start : start + hlen])
    except ValueError:
        raise CheckpointError("corrupt checkpoint header") from None
    if header.get("version") != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {header.get('version')}")
    body = memoryview(blob)[start + hlen :]
    tensors = {}
    expected = 0
    for e in header["tensors"]:
        n = int(np.prod(e["shape"], dtype=np.int64))
        expected += 8 * n
        if e["offset"] + 8 * n > len(body):
            raise CheckpointError(f"truncated payload for tensor {e['name']!r}")
        arr = np.frombuffer(body, dtype="<f8", count=n, offset=e["offset"])
        tensors[e["name"]] = arr.reshape(e["shape"]).astype(np.float64)
    if expected != len(body):
        raise CheckpointError(f"payload size {len(body)} does not match header ({expected} bytes)")
    return tensors, header["meta"]


def save(path, tensors: dict[str, np.ndarray], meta: dict[str, Any] | None = None) -> None:
    Path(path).write_bytes(dumps(tensors, meta))


def load(path) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    p = Path(path)
    if not p.exists():
        raise CheckpointError(f"checkpoint not found: {p}")
    return loads(p.read_bytes())
