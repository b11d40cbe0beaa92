"""Plain pre-norm ViT encoder classifier, float32 end to end.

This is the workload placed under fault injection. Everything is a pure
function of the weights and the batch; repeated runs on one platform
produce byte-identical logits. Non-finite values coming out of faulted
weights are propagated, not sanitized, because the campaign needs to see
the corruption.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import erf

INVALID_LABEL = -1  # prediction for rows with NaN logits; matches no class


@dataclass(frozen=True)
class ViTConfig:
    image_size: int = 32
    patch_size: int = 8
    channels: int = 3
    embed_dim: int = 64
    num_heads: int = 4
    depth: int = 4
    mlp_ratio: float = 4.0
    num_classes: int = 10
    layernorm_eps: float = 1e-6

    def __post_init__(self):
        if self.image_size % self.patch_size != 0:
            raise ValueError(
                f"image_size {self.image_size} not divisible by patch_size {self.patch_size}"
            )
        if self.embed_dim % self.num_heads != 0:
            raise ValueError(
                f"embed_dim {self.embed_dim} not divisible by num_heads {self.num_heads}"
            )
        for name in ("image_size", "patch_size", "channels", "embed_dim",
                     "num_heads", "depth", "num_classes"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.mlp_ratio <= 0 or self.layernorm_eps <= 0:
            raise ValueError("mlp_ratio and layernorm_eps must be positive")

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.num_heads

    @property
    def patch_dim(self) -> int:
        return self.channels * self.patch_size * self.patch_size

    @property
    def num_patches(self) -> int:
        g = self.image_size // self.patch_size
        return g * g

    @property
    def num_tokens(self) -> int:
        return self.num_patches + 1  # class token first

    @property
    def hidden_dim(self) -> int:
        return int(self.embed_dim * self.mlp_ratio)

    def weight_shapes(self) -> dict:
        """Canonical tensor name -> shape map for this configuration."""
        d, hd = self.embed_dim, self.hidden_dim
        shapes = {
            "cls_token": (d,),
            "patch_embed.weight": (d, self.patch_dim),
            "patch_embed.bias": (d,),
            "pos_embed": (self.num_tokens, d),
            "norm.weight": (d,),
            "norm.bias": (d,),
            "head.weight": (self.num_classes, d),
            "head.bias": (self.num_classes,),
        }
        for i in range(self.depth):
            p = f"blocks.{i}."
            shapes[p + "ln1.weight"] = (d,)
            shapes[p + "ln1.bias"] = (d,)
            for proj in ("q", "k", "v", "o"):
                shapes[p + f"attn.{proj}.weight"] = (d, d)
                shapes[p + f"attn.{proj}.bias"] = (d,)
            shapes[p + "ln2.weight"] = (d,)
            shapes[p + "ln2.bias"] = (d,)
            shapes[p + "mlp.fc1.weight"] = (hd, d)
            shapes[p + "mlp.fc1.bias"] = (hd,)
            shapes[p + "mlp.fc2.weight"] = (d, hd)
            shapes[p + "mlp.fc2.bias"] = (d,)
        return shapes

    def param_count(self) -> int:
        return int(sum(math.prod(s) for s in self.weight_shapes().values()))


@dataclass
class ViTModel:
    config: ViTConfig
    weights: dict  # name -> float32 ndarray, shapes per config.weight_shapes()

    def __post_init__(self):
        expected = self.config.weight_shapes()
        missing = sorted(set(expected) - set(self.weights))
        extra = sorted(set(self.weights) - set(expected))
        if missing or extra:
            raise ValueError(f"weight set mismatch: missing={missing} extra={extra}")
        for name, shape in expected.items():
            arr = self.weights[name]
            if tuple(arr.shape) != shape:
                raise ValueError(
                    f"tensor {name!r} has shape {tuple(arr.shape)}, expected {shape}"
                )
            if arr.dtype != np.float32:
                raise ValueError(f"tensor {name!r} must be float32, got {arr.dtype}")

    @property
    def param_count(self) -> int:
        return int(sum(a.size for a in self.weights.values()))

    def tensor_names(self) -> list:
        """Sorted names; this order defines tensor indices for fault plans."""
        return sorted(self.weights)

    def layout(self) -> tuple:
        return tuple(self.weights[n].size for n in self.tensor_names())

    def copy(self) -> "ViTModel":
        return ViTModel(self.config, {n: a.copy() for n, a in self.weights.items()})


@dataclass
class Batch:
    images: np.ndarray  # [n, channels, size, size] float32
    labels: Optional[np.ndarray] = None  # [n] int64

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float32)
        if self.images.ndim != 4 or self.images.shape[0] < 1:
            raise ValueError(f"images must be [n, c, s, s] with n >= 1: {self.images.shape}")
        if not np.isfinite(self.images).all():
            raise ValueError("images contain non-finite pixels")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (self.images.shape[0],):
                raise ValueError("labels must be a vector matching the batch size")

    def __len__(self) -> int:
        return int(self.images.shape[0])


def softmax_rows(x: np.ndarray) -> np.ndarray:
    """Softmax over the last axis with per-row max subtraction."""
    x = np.asarray(x, dtype=np.float32)
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def attention(q: np.ndarray, k: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Scaled dot-product attention; works on [..., tokens, dim] stacks."""
    q = np.asarray(q, dtype=np.float32)
    k = np.asarray(k, dtype=np.float32)
    v = np.asarray(v, dtype=np.float32)
    dk = q.shape[-1]
    if dk == 0:
        raise ValueError("query/key dimension must be positive")
    scores = (q @ np.swapaxes(k, -1, -2)) * np.float32(1.0 / math.sqrt(dk))
    return softmax_rows(scores) @ v


def layernorm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray,
              eps: float = 1e-6) -> np.ndarray:
    """Per-token normalization over the last axis, then affine."""
    x = np.asarray(x, dtype=np.float32)
    mu = x.mean(axis=-1, keepdims=True)
    var = np.square(x - mu).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + np.float32(eps)) * gamma + beta


_INV_SQRT2 = np.float32(1.0 / math.sqrt(2.0))


def gelu(x: np.ndarray) -> np.ndarray:
    """Exact Gaussian-CDF gelu: x * Phi(x)."""
    x = np.asarray(x, dtype=np.float32)
    return x * np.float32(0.5) * (np.float32(1.0) + erf(x * _INV_SQRT2))


def patchify(images: np.ndarray, patch_size: int) -> np.ndarray:
    """[n, c, s, s] -> [n, patches, c*p*p] with (row, col) patch order and
    (channel, row, col) order inside each patch vector."""
    n, c, s, _ = images.shape
    g = s // patch_size
    x = images.reshape(n, c, g, patch_size, g, patch_size)
    x = x.transpose(0, 2, 4, 1, 3, 5)
    return np.ascontiguousarray(x).reshape(n, g * g, c * patch_size * patch_size)


def _dense(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    # flatten leading axes so the projection runs as one GEMM
    out = x.reshape(-1, x.shape[-1]) @ w.T + b
    return out.reshape(x.shape[:-1] + (w.shape[0],))


def _mha(x: np.ndarray, w: dict, prefix: str, num_heads: int) -> np.ndarray:
    n, t, d = x.shape
    dk = d // num_heads

    def proj(name):
        z = _dense(x, w[prefix + f"attn.{name}.weight"], w[prefix + f"attn.{name}.bias"])
        return z.reshape(n, t, num_heads, dk).transpose(0, 2, 1, 3)

    ctx = attention(proj("q"), proj("k"), proj("v"))
    ctx = np.ascontiguousarray(ctx.transpose(0, 2, 1, 3)).reshape(n, t, d)
    return _dense(ctx, w[prefix + "attn.o.weight"], w[prefix + "attn.o.bias"])


def forward(model: ViTModel, batch: Batch) -> np.ndarray:
    """Logits [n, num_classes] for a batch of images.

    Pipeline: patchify, linear projection, prepend class token, add
    positional embeddings, depth x (LN -> MHA -> residual, LN -> MLP ->
    residual), final LN, linear head on the class token.
    """
    cfg = model.config
    w = model.weights
    imgs = batch.images
    if imgs.shape[1:] != (cfg.channels, cfg.image_size, cfg.image_size):
        raise ValueError(
            f"batch images {imgs.shape} do not match config "
            f"[n, {cfg.channels}, {cfg.image_size}, {cfg.image_size}]"
        )
    n = imgs.shape[0]
    # overflow and NaN are expected under injected faults; they must flow
    # through to the logits for the campaign to observe them
    with np.errstate(over="ignore", invalid="ignore"):
        x = _dense(patchify(imgs, cfg.patch_size),
                   w["patch_embed.weight"], w["patch_embed.bias"])
        cls = np.broadcast_to(w["cls_token"], (n, 1, cfg.embed_dim))
        x = np.concatenate([cls, x], axis=1)
        x = x + w["pos_embed"]
        eps = cfg.layernorm_eps
        for i in range(cfg.depth):
            p = f"blocks.{i}."
            h = layernorm(x, w[p + "ln1.weight"], w[p + "ln1.bias"], eps)
            x = x + _mha(h, w, p, cfg.num_heads)
            h = layernorm(x, w[p + "ln2.weight"], w[p + "ln2.bias"], eps)
            h = gelu(_dense(h, w[p + "mlp.fc1.weight"], w[p + "mlp.fc1.bias"]))
            x = x + _dense(h, w[p + "mlp.fc2.weight"], w[p + "mlp.fc2.bias"])
        x = layernorm(x, w["norm.weight"], w["norm.bias"], eps)
        return _dense(x[:, 0, :], w["head.weight"], w["head.bias"])


def argmax_labels(logits: np.ndarray) -> np.ndarray:
    """Argmax per row, ties to the lowest class; NaN rows -> INVALID_LABEL."""
    logits = np.asarray(logits)
    labels = np.argmax(logits, axis=1).astype(np.int64)
    labels[np.isnan(logits).any(axis=1)] = INVALID_LABEL
    return labels


def predict(model: ViTModel, batch: Batch) -> np.ndarray:
    return argmax_labels(forward(model, batch))
