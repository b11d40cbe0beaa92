"""Bit-exact container files for checkpoints, datasets, and golden
predictions.

Layout of a `.vtft` file:

    bytes 0..3    magic "VTFT"
    bytes 4..7    format version, uint32 little-endian (currently 1)
    bytes 8..15   header length H, uint64 little-endian
    bytes 16..16+H-1   header: UTF-8 JSON, sorted keys, compact
                       separators, ASCII-escaped:
                       {"metadata": {...},
                        "tensors": {name: {"byte_len": int,
                                           "byte_offset": int,
                                           "dtype": "f32"|"u32",
                                           "shape": [ints]}}}
    remaining     payload: raw little-endian tensor data

Tensor offsets are relative to the payload start, 4-byte aligned, and
non-overlapping; byte_len equals 4 * prod(shape). The writer packs
tensors in sorted-name order with no gaps, which together with the JSON
discipline above makes the byte output deterministic, so independent
writers can reproduce files bit for bit.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .vit import Batch, ViTConfig, ViTModel, argmax_labels, forward

MAGIC = b"VTFT"
VERSION = 1
_DTYPES = {"f32": "<f4", "u32": "<u4"}
_INVALID_U32 = 0xFFFFFFFF  # serialized form of the invalid-prediction label


class ModelIOError(Exception):
    """Base for container and model file errors."""


class MagicError(ModelIOError):
    pass


class VersionError(ModelIOError):
    pass


class HeaderError(ModelIOError):
    """Undecodable or inconsistent header (JSON, layout, offsets)."""


class TruncatedError(ModelIOError):
    pass


class ShapeError(ModelIOError):
    """Checkpoint tensors inconsistent with the declared configuration."""


class DatasetError(ModelIOError):
    pass


def _dtype_tag(arr: np.ndarray) -> str:
    if arr.dtype == np.float32:
        return "f32"
    if arr.dtype == np.uint32:
        return "u32"
    raise TypeError(f"container tensors must be float32 or uint32, got {arr.dtype}")


def container_bytes(tensors: dict, metadata: dict) -> bytes:
    """Serialize tensors + metadata to the canonical byte layout."""
    table = {}
    chunks = []
    offset = 0
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name])
        tag = _dtype_tag(arr)
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


def parse_container(data: bytes):
    """Parse container bytes into (tensors, metadata), validating layout."""
    if len(data) < 16:
        raise TruncatedError(f"file too short for container preamble: {len(data)} bytes")
    if data[:4] != MAGIC:
        raise MagicError(f"bad magic {data[:4]!r}, expected {MAGIC!r}")
    (version,) = struct.unpack("<I", data[4:8])
    if version != VERSION:
        raise VersionError(f"unsupported container version {version}")
    (header_len,) = struct.unpack("<Q", data[8:16])
    if 16 + header_len > len(data):
        raise TruncatedError("header extends past end of file")
    try:
        header = json.loads(data[16:16 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise HeaderError(f"header is not valid JSON: {e}") from None
    if not isinstance(header, dict) or set(header) != {"metadata", "tensors"}:
        raise HeaderError("header must be an object with 'metadata' and 'tensors'")
    metadata, table = header["metadata"], header["tensors"]
    if not isinstance(metadata, dict) or not isinstance(table, dict):
        raise HeaderError("'metadata' and 'tensors' must be objects")

    payload = data[16 + header_len:]
    spans = []
    tensors = {}
    for name, entry in table.items():
        if not isinstance(entry, dict) or set(entry) != {"byte_len", "byte_offset", "dtype", "shape"}:
            raise HeaderError(f"tensor entry {name!r} has wrong fields")
        dtype, shape = entry["dtype"], entry["shape"]
        off, ln = entry["byte_offset"], entry["byte_len"]
        if dtype not in _DTYPES:
            raise HeaderError(f"tensor {name!r} has unknown dtype {dtype!r}")
        if (not isinstance(shape, list) or not shape
                or any(not isinstance(s, int) or s < 1 for s in shape)):
            raise HeaderError(f"tensor {name!r} has invalid shape {shape!r}")
        if not isinstance(off, int) or not isinstance(ln, int) or off < 0:
            raise HeaderError(f"tensor {name!r} has invalid offsets")
        if off % 4 != 0:
            raise HeaderError(f"tensor {name!r} offset {off} is not 4-byte aligned")
        if ln != 4 * math.prod(shape):
            raise HeaderError(
                f"tensor {name!r} byte_len {ln} does not match shape {shape}"
            )
        if off + ln > len(payload):
            raise TruncatedError(f"tensor {name!r} extends past end of payload")
        spans.append((off, off + ln, name))
        tensors[name] = np.frombuffer(
            payload, dtype=_DTYPES[dtype], count=math.prod(shape), offset=off
        ).reshape(shape).astype(_DTYPES[dtype][1:], copy=True)
    spans.sort()
    for (_, end_a, name_a), (start_b, _, name_b) in zip(spans, spans[1:]):
        if start_b < end_a:
            raise HeaderError(f"tensors {name_a!r} and {name_b!r} overlap")
    return tensors, metadata


def read_container(path):
    with open(path, "rb") as f:
        return parse_container(f.read())


# -- checkpoints --------------------------------------------------------

_CONFIG_FIELDS = (
    "image_size", "patch_size", "channels", "embed_dim", "num_heads",
    "depth", "mlp_ratio", "num_classes", "layernorm_eps",
)


def config_to_dict(config: ViTConfig) -> dict:
    return {k: getattr(config, k) for k in _CONFIG_FIELDS}


def config_from_dict(d: dict) -> ViTConfig:
    unknown = sorted(set(d) - set(_CONFIG_FIELDS))
    if unknown:
        raise HeaderError(f"unknown config keys: {unknown}")
    missing = sorted(set(_CONFIG_FIELDS) - set(d))
    if missing:
        raise HeaderError(f"missing config keys: {missing}")
    try:
        return ViTConfig(**d)
    except ValueError as e:
        raise HeaderError(f"invalid config: {e}") from None


def checkpoint_bytes(model: ViTModel) -> bytes:
    meta = {"kind": "checkpoint", "config": config_to_dict(model.config)}
    return container_bytes(model.weights, meta)


def save_checkpoint(model: ViTModel, path) -> None:
    with open(path, "wb") as f:
        f.write(checkpoint_bytes(model))


def load_checkpoint(path) -> ViTModel:
    tensors, meta = read_container(path)
    if meta.get("kind") != "checkpoint":
        raise HeaderError(f"not a checkpoint container: kind={meta.get('kind')!r}")
    config = config_from_dict(meta.get("config", {}))
    try:
        return ViTModel(config, tensors)
    except ValueError as e:
        raise ShapeError(str(e)) from None


def model_digest(model: ViTModel) -> str:
    return hashlib.sha256(checkpoint_bytes(model)).hexdigest()


# -- datasets ------------------------------------------------------------

def save_dataset(batch: Batch, path, num_classes: Optional[int] = None) -> None:
    tensors = {"images": batch.images}
    if batch.labels is not None:
        tensors["labels"] = batch.labels.astype(np.uint32)
    meta = {"kind": "dataset"}
    if num_classes is not None:
        meta["num_classes"] = int(num_classes)
    write_container(path, tensors, meta)


def load_dataset(path) -> Batch:
    tensors, meta = read_container(path)
    if meta.get("kind") != "dataset":
        raise DatasetError(f"not a dataset container: kind={meta.get('kind')!r}")
    if "images" not in tensors:
        raise DatasetError("dataset is missing the 'images' tensor")
    images = tensors["images"]
    if images.dtype != np.float32 or images.ndim != 4:
        raise DatasetError(f"'images' must be a 4-d float32 tensor, got "
                           f"{images.dtype} {images.shape}")
    if not np.isfinite(images).all():
        raise DatasetError("dataset images contain non-finite pixels")
    labels = None
    if "labels" in tensors:
        raw = tensors["labels"]
        if raw.dtype != np.uint32 or raw.shape != (images.shape[0],):
            raise DatasetError("'labels' must be a u32 vector matching the batch")
        labels = raw.astype(np.int64)
        num_classes = meta.get("num_classes")
        if num_classes is not None and (labels >= num_classes).any():
            raise DatasetError(
                f"labels exceed num_classes={num_classes}: max={labels.max()}"
            )
    return Batch(images=images, labels=labels)


# -- golden predictions ---------------------------------------------------

@dataclass
class GoldenCache:
    """Fault-free predictions keyed to a checkpoint digest."""

    model_hash: str
    predictions: np.ndarray  # int64, INVALID_LABEL where logits were NaN
    logits: Optional[np.ndarray] = None

    def valid_for(self, model: ViTModel) -> bool:
        return self.model_hash == model_digest(model)


def compute_golden(model: ViTModel, batch: Batch, keep_logits: bool = True) -> GoldenCache:
    logits = forward(model, batch)
    return GoldenCache(
        model_hash=model_digest(model),
        predictions=argmax_labels(logits),
        logits=logits if keep_logits else None,
    )


def save_golden(cache: GoldenCache, path) -> None:
    preds = cache.predictions.astype(np.int64).copy()
    preds[preds < 0] = _INVALID_U32
    tensors = {"predictions": preds.astype(np.uint32)}
    if cache.logits is not None:
        tensors["logits"] = np.asarray(cache.logits, dtype=np.float32)
    write_container(path, tensors, {"kind": "golden", "model_hash": cache.model_hash})


def load_golden(path) -> GoldenCache:
    tensors, meta = read_container(path)
    if meta.get("kind") != "golden":
        raise HeaderError(f"not a golden container: kind={meta.get('kind')!r}")
    if "predictions" not in tensors:
        raise HeaderError("golden container is missing 'predictions'")
    preds = tensors["predictions"].astype(np.int64)
    preds[preds == _INVALID_U32] = -1
    return GoldenCache(
        model_hash=str(meta.get("model_hash", "")),
        predictions=preds,
        logits=tensors.get("logits"),
    )
