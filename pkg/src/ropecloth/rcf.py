"""RCF1 container: a JSON header followed by raw little-endian arrays.

Layout (all integers little-endian)::

    bytes 0..3    magic b"RCF1"
    bytes 4..7    u32 header length H
    bytes 8..8+H  UTF-8 JSON header, keys sorted, no whitespace
    rest          array payloads, concatenated in header order

The header object has ``"meta"`` (free-form JSON) and ``"arrays"``, a list of
``{"name", "dtype", "shape", "offset", "nbytes"}`` with ``dtype`` one of
``"<f8"`` / ``"<i8"`` and ``offset`` counted from the start of the payload.
Arrays are stored C-contiguous.  Writing what was read reproduces the file
byte for byte.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"RCF1"
DTYPES = ("<f8", "<i8")


class FormatError(ValueError):
    pass


def _encode(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False).encode("utf-8")


def dumps(meta: dict, arrays: dict) -> bytes:
    entries, chunks, offset = [], [], 0
    for name, arr in arrays.items():
        a = np.asarray(arr)
        dtype = "<i8" if np.issubdtype(a.dtype, np.integer) or a.dtype == bool else "<f8"
        data = np.ascontiguousarray(a, dtype=dtype).tobytes()
        entries.append({"name": name, "dtype": dtype, "shape": list(a.shape), "offset": offset, "nbytes": len(data)})
        chunks.append(data)
        offset += len(data)
    header = _encode({"arrays": entries, "meta": meta})
    return MAGIC + struct.pack("<I", len(header)) + header + b"".join(chunks)


def loads(blob: bytes):
    """Inverse of :func:`dumps`: ``(meta, {name: array})`` in stored order."""
    if len(blob) < 8 or blob[:4] != MAGIC:
        raise FormatError("not an RCF1 file")
    (h_len,) = struct.unpack("<I", blob[4:8])
    try:
        header = json.loads(blob[8:8 + h_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"corrupt header: {exc}") from exc
    payload = memoryview(blob)[8 + h_len:]
    arrays = {}
    for e in header["arrays"]:
        if e["dtype"] not in DTYPES:
            raise FormatError(f"unsupported dtype {e['dtype']}")
        end = e["offset"] + e["nbytes"]
        if end > len(payload):
            raise FormatError(f"array {e['name']} truncated")
        arr = np.frombuffer(payload[e["offset"]:end], dtype=e["dtype"]).reshape(e["shape"])
        arrays[e["name"]] = arr.astype(arr.dtype.newbyteorder("="))
    return header["meta"], arrays


def write(path, meta: dict, arrays: dict) -> None:
    Path(path).write_bytes(dumps(meta, arrays))


def read(path):
    return loads(Path(path).read_bytes())
