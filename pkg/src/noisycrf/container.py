"""Versioned binary container: a JSON header followed by raw array blocks.

Layout::

    b"NCRF" | uint16 version | uint32 header length | header JSON | payload

The header lists every array with its dtype, logical shape and byte range in
the payload, plus a SHA-256 checksum of the payload. Numeric arrays are
stored little-endian; boolean arrays are bit-packed (``numpy.packbits``).
Headers are serialized with sorted keys so identical content produces
identical bytes.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct

import numpy as np

MAGIC = b"NCRF"
VERSION = 1
_PREFIX = struct.Struct("<4sHI")


class ContainerError(ValueError):
    """Raised for malformed, corrupted or mismatched container files."""


def _encode(arr):
    arr = np.asarray(arr)
    if arr.dtype == np.bool_:
        return np.packbits(arr.reshape(-1)).tobytes(), "bits"
    dtype = arr.dtype.newbyteorder("<") if arr.dtype.byteorder not in ("|", "<") else arr.dtype
    return np.ascontiguousarray(arr, dtype=dtype).tobytes(), dtype.str


def _decode(raw, dtype, shape):
    if dtype == "bits":
        count = int(np.prod(shape, dtype=np.int64))
        return np.unpackbits(np.frombuffer(raw, dtype=np.uint8), count=count).astype(bool).reshape(shape)
    return np.frombuffer(raw, dtype=np.dtype(dtype)).reshape(shape).copy()


def dumps(kind, arrays, meta=None):
    """Serialize named arrays and a JSON-compatible ``meta`` dict to bytes."""
    entries, blocks, offset = [], [], 0
    for name in sorted(arrays):
        raw, dtype = _encode(arrays[name])
        entries.append(
            {"name": name, "dtype": dtype, "shape": list(np.shape(arrays[name])), "offset": offset, "nbytes": len(raw)}
        )
        blocks.append(raw)
        offset += len(raw)
    payload = b"".join(blocks)
    header = {
        "format": "noisycrf",
        "kind": kind,
        "version": VERSION,
        "arrays": entries,
        "meta": meta or {},
        "checksum": hashlib.sha256(payload).hexdigest(),
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return _PREFIX.pack(MAGIC, VERSION, len(head)) + head + payload


def loads(data, kind=None):
    """Inverse of :func:`dumps`; returns ``(meta, arrays)``."""
    if len(data) < _PREFIX.size:
        raise ContainerError("file too short for container prefix")
    magic, version, head_len = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise ContainerError("bad magic bytes")
    if version != VERSION:
        raise ContainerError(f"unsupported container version {version}")
    start = _PREFIX.size
    try:
        header = json.loads(data[start : start + head_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerError(f"malformed header: {exc}") from None
    if kind is not None and header.get("kind") != kind:
        raise ContainerError(f"expected a {kind!r} container, found {header.get('kind')!r}")
    payload = data[start + head_len :]
    if hashlib.sha256(payload).hexdigest() != header.get("checksum"):
        raise ContainerError("checksum mismatch")
    arrays = {}
    for entry in header["arrays"]:
        lo, hi = entry["offset"], entry["offset"] + entry["nbytes"]
        if hi > len(payload):
            raise ContainerError(f"array {entry['name']!r} extends past end of file")
        arrays[entry["name"]] = _decode(payload[lo:hi], entry["dtype"], tuple(entry["shape"]))
    return header["meta"], arrays


def save(path, kind, arrays, meta=None):
    """Write atomically (temp file + rename) so readers never see partial files."""
    data = dumps(kind, arrays, meta)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def load(path, kind=None):
    with open(path, "rb") as fh:
        return loads(fh.read(), kind)
