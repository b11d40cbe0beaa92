"""Independent reader/writer for the `.vtft` container format.

Deliberately implemented from the format description alone (no shared
code with the engine): magic "VTFT", u32 LE version 1, u64 LE header
length, a UTF-8 JSON header with sorted keys / compact separators /
ASCII escapes, then raw little-endian tensor payload packed in
sorted-name order with no gaps. Following those rules makes the bytes
canonical, so files written here must be bit-identical to files the
engine writes for the same content; the tests assert exactly that.
"""

from __future__ import annotations

import json
import math
import struct

import numpy as np

MAGIC = b"VTFT"
VERSION = 1
_DTYPES = {"f32": "<f4", "u32": "<u4"}


def container_bytes(tensors: dict, metadata: dict) -> bytes:
    table = {}
    chunks = []
    offset = 0
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name])
        if arr.dtype == np.float32:
            tag = "f32"
        elif arr.dtype == np.uint32:
            tag = "u32"
        else:
            raise TypeError(f"tensor {name!r} must be float32 or uint32, got {arr.dtype}")
        raw = arr.astype(_DTYPES[tag], copy=False).tobytes()
        table[name] = {
            "byte_len": len(raw),
            "byte_offset": offset,
            "dtype": tag,
            "shape": [int(s) for s in arr.shape],
        }
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps(
        {"metadata": metadata, "tensors": table},
        sort_keys=True, separators=(",", ":"), ensure_ascii=True,
    ).encode("utf-8")
    return b"".join(
        [MAGIC, struct.pack("<I", VERSION), struct.pack("<Q", len(header)), header]
        + chunks
    )


def write_container(path, tensors: dict, metadata: dict) -> None:
    with open(path, "wb") as f:
        f.write(container_bytes(tensors, metadata))


def read_container(path):
    """Parse a container file into (tensors, metadata)."""
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != MAGIC:
        raise ValueError(f"bad magic {data[:4]!r}")
    (version,) = struct.unpack("<I", data[4:8])
    if version != VERSION:
        raise ValueError(f"unsupported version {version}")
    (header_len,) = struct.unpack("<Q", data[8:16])
    header = json.loads(data[16:16 + header_len].decode("utf-8"))
    payload = data[16 + header_len:]
    tensors = {}
    for name, entry in header["tensors"].items():
        count = math.prod(entry["shape"])
        arr = np.frombuffer(payload, dtype=_DTYPES[entry["dtype"]], count=count,
                            offset=entry["byte_offset"])
        tensors[name] = arr.reshape(entry["shape"]).astype(
            _DTYPES[entry["dtype"]][1:], copy=True)
    return tensors, header["metadata"]
