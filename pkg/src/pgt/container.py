"""PGTT tensor container files and the checkpoint archive built on them.

PGTT v1 layout (all little-endian)::

    b"PGTT" | u32 version=1 | u32 rank | rank x u64 dims | f64 payload (row-major)

A checkpoint archive is::

    b"PGTC" | u32 version=1 | u64 manifest_len | manifest (UTF-8 JSON) | blobs

where ``blobs`` is the concatenation of one PGTT container per parameter and
the manifest maps every parameter name to its byte offset within ``blobs``.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import LoadError

MAGIC = b"PGTT"
VERSION = 1
ARCHIVE_MAGIC = b"PGTC"


def encode(array) -> bytes:
    arr = np.asarray(array, dtype="<f8", order="C")
    head = MAGIC + struct.pack("<II", VERSION, arr.ndim)
    head += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return head + arr.tobytes(order="C")


def decode(buf: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    """Parse one container starting at ``offset``; return (array, end offset)."""
    if buf[offset:offset + 4] != MAGIC:
        raise LoadError(f"bad PGTT magic at offset {offset}")
    version, rank = struct.unpack_from("<II", buf, offset + 4)
    if version != VERSION:
        raise LoadError(f"unsupported PGTT version {version}")
    pos = offset + 12
    dims = struct.unpack_from(f"<{rank}Q", buf, pos)
    pos += 8 * rank
    n = int(np.prod(dims, dtype=np.int64)) if rank else 1
    end = pos + 8 * n
    if end > len(buf):
        raise LoadError("truncated PGTT payload")
    arr = np.frombuffer(buf, dtype="<f8", count=n, offset=pos).astype(np.float64)
    return arr.reshape(dims), end


def write_tensor(path, array) -> None:
    Path(path).write_bytes(encode(array))


def read_tensor(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    arr, end = decode(buf)
    if end != len(buf):
        raise LoadError(f"{path}: trailing bytes after PGTT payload")
    return arr


def write_archive(path, arrays: dict, meta: dict) -> None:
    blobs = []
    entries = []
    offset = 0
    for name, arr in arrays.items():
        blob = encode(arr)
        entries.append({"name": name, "offset": offset, "shape": list(np.shape(arr))})
        blobs.append(blob)
        offset += len(blob)
    manifest = json.dumps({"meta": meta, "params": entries}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(ARCHIVE_MAGIC + struct.pack("<IQ", VERSION, len(manifest)))
        fh.write(manifest)
        for blob in blobs:
            fh.write(blob)


def read_archive(path) -> tuple[dict, dict]:
    """Return ``(arrays, meta)``; arrays keep the manifest order."""
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise LoadError(f"cannot read checkpoint {path}: {exc}") from exc
    if buf[:4] != ARCHIVE_MAGIC:
        raise LoadError(f"{path}: not a PGTC checkpoint archive")
    version, mlen = struct.unpack_from("<IQ", buf, 4)
    if version != VERSION:
        raise LoadError(f"{path}: unsupported archive version {version}")
    start = 16
    manifest = json.loads(buf[start:start + mlen].decode())
    base = start + mlen
    arrays = {}
    for entry in manifest["params"]:
        arr, _ = decode(buf, base + entry["offset"])
        if list(arr.shape) != entry["shape"]:
            raise LoadError(f"{path}: shape of {entry['name']} disagrees with manifest")
        arrays[entry["name"]] = arr
    return arrays, manifest["meta"]
