"""Torch implementation of the toy pre-norm ViT and its container export.

The architecture mirrors the engine exactly: patchify via a strided
convolution, class token first, learned positional embeddings, depth x
(LN -> MHA -> residual, LN -> MLP(gelu) -> residual), final LN, linear
head on the class token. Exact-erf gelu and the configured LayerNorm
epsilon keep the numerics comparable at float32.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from . import container

_CONFIG_FIELDS = (
    "image_size", "patch_size", "channels", "embed_dim", "num_heads",
    "depth", "mlp_ratio", "num_classes", "layernorm_eps",
)


@dataclass(frozen=True)
class ToyViTConfig:
    image_size: int = 32
    patch_size: int = 8
    channels: int = 3
    embed_dim: int = 64
    num_heads: int = 4
    depth: int = 4
    mlp_ratio: float = 4.0
    num_classes: int = 10
    layernorm_eps: float = 1e-6

    @property
    def num_patches(self) -> int:
        g = self.image_size // self.patch_size
        return g * g

    @property
    def num_tokens(self) -> int:
        return self.num_patches + 1

    @property
    def hidden_dim(self) -> int:
        return int(self.embed_dim * self.mlp_ratio)

    def param_count(self) -> int:
        d, hd, t = self.embed_dim, self.hidden_dim, self.num_tokens
        patch_dim = self.channels * self.patch_size * self.patch_size
        per_block = (2 * d + 4 * (d * d + d) + 2 * d
                     + hd * d + hd + d * hd + d)
        return (d * patch_dim + d          # patch projection
                + d                         # class token
                + t * d                     # positional embeddings
                + self.depth * per_block
                + 2 * d                     # final norm
                + self.num_classes * d + self.num_classes)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in _CONFIG_FIELDS}

    @classmethod
    def from_dict(cls, d: dict) -> "ToyViTConfig":
        return cls(**{k: d[k] for k in _CONFIG_FIELDS})


PRESETS = {
    "toy-tiny": ToyViTConfig(embed_dim=64, num_heads=4, depth=4),
    "toy-small": ToyViTConfig(embed_dim=96, num_heads=6, depth=6),
    "toy-base": ToyViTConfig(embed_dim=128, num_heads=8, depth=8),
}


@dataclass(frozen=True)
class ExportManifest:
    """How torch parameter names map onto container tensor names."""

    config: ToyViTConfig
    name_map: dict
    tolerance: float = 1e-4


class Attention(nn.Module):
    def __init__(self, dim, num_heads):
        super().__init__()
        self.num_heads = num_heads
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(dim, dim)
        self.v = nn.Linear(dim, dim)
        self.o = nn.Linear(dim, dim)

    def forward(self, x):
        n, t, d = x.shape
        dk = d // self.num_heads

        def split(z):
            return z.view(n, t, self.num_heads, dk).transpose(1, 2)

        q, k, v = split(self.q(x)), split(self.k(x)), split(self.v(x))
        scores = q @ k.transpose(-2, -1) / math.sqrt(dk)
        ctx = scores.softmax(dim=-1) @ v
        ctx = ctx.transpose(1, 2).reshape(n, t, d)
        return self.o(ctx)


class Block(nn.Module):
    def __init__(self, cfg: ToyViTConfig):
        super().__init__()
        d = cfg.embed_dim
        self.ln1 = nn.LayerNorm(d, eps=cfg.layernorm_eps)
        self.attn = Attention(d, cfg.num_heads)
        self.ln2 = nn.LayerNorm(d, eps=cfg.layernorm_eps)
        self.mlp = nn.Sequential()
        self.mlp.fc1 = nn.Linear(d, cfg.hidden_dim)
        self.mlp.act = nn.GELU(approximate="none")
        self.mlp.fc2 = nn.Linear(cfg.hidden_dim, d)

    def forward(self, x):
        x = x + self.attn(self.ln1(x))
        return x + self.mlp(self.ln2(x))


class ToyViT(nn.Module):
    def __init__(self, cfg: ToyViTConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.embed_dim
        self.patch_embed = nn.Conv2d(cfg.channels, d, kernel_size=cfg.patch_size,
                                     stride=cfg.patch_size)
        self.cls_token = nn.Parameter(torch.zeros(d))
        self.pos_embed = nn.Parameter(torch.zeros(cfg.num_tokens, d))
        self.blocks = nn.ModuleList(Block(cfg) for _ in range(cfg.depth))
        self.norm = nn.LayerNorm(d, eps=cfg.layernorm_eps)
        self.head = nn.Linear(d, cfg.num_classes)

    def forward(self, images):
        n = images.shape[0]
        x = self.patch_embed(images)            # [n, d, g, g]
        x = x.flatten(2).transpose(1, 2)        # [n, patches, d]
        cls = self.cls_token.expand(n, 1, -1)
        x = torch.cat([cls, x], dim=1) + self.pos_embed
        for block in self.blocks:
            x = block(x)
        return self.head(self.norm(x)[:, 0, :])


def init_toy_weights(model: ToyViT, seed: int, weight_scale: float = 0.02) -> None:
    """Seeded in-place init: N(0, scale^2) projections and embeddings,
    zero biases, unit norms. Parameters are filled in sorted-name order
    so the draw sequence is reproducible."""
    gen = torch.Generator().manual_seed(seed)
    params = dict(model.named_parameters())
    with torch.no_grad():
        for name in sorted(params):
            p = params[name]
            if name.endswith(".bias"):
                p.zero_()
            elif ".ln1." in name or ".ln2." in name or name.startswith("norm."):
                p.fill_(1.0)
            else:
                p.copy_(torch.normal(0.0, weight_scale, size=p.shape, generator=gen))


def build_toy_model(config: ToyViTConfig, seed: int = 0,
                    weight_scale: float = 0.02) -> ToyViT:
    model = ToyViT(config)
    init_toy_weights(model, seed, weight_scale)
    model.eval()
    return model


def export_manifest(config: ToyViTConfig) -> ExportManifest:
    # names already agree; only the patch projection changes shape
    # ([d, c, p, p] convolution kernel -> [d, c*p*p] matrix)
    name_map = {name: name for name, _ in ToyViT(config).named_parameters()}
    return ExportManifest(config=config, name_map=name_map)


def model_tensors(model: ToyViT) -> dict:
    """Container tensor dict for a model (float32, numpy)."""
    out = {}
    for torch_name, param in model.named_parameters():
        arr = param.detach().cpu().numpy().astype(np.float32, copy=True)
        if torch_name == "patch_embed.weight":
            arr = arr.reshape(arr.shape[0], -1)
        out[torch_name] = arr
    return out


def checkpoint_bytes(model: ToyViT) -> bytes:
    meta = {"kind": "checkpoint", "config": model.cfg.to_dict()}
    return container.container_bytes(model_tensors(model), meta)


def export_toy_model(config: ToyViTConfig, seed: int, out_path,
                     weight_scale: float = 0.02, train_steps: int = 0) -> ToyViT:
    """Deterministic toy checkpoint in container format."""
    model = build_toy_model(config, seed, weight_scale)
    if train_steps > 0:
        _train_on_separable_task(model, seed, train_steps)
    with open(out_path, "wb") as f:
        f.write(checkpoint_bytes(model))
    return model


def load_model_from_container(path) -> ToyViT:
    tensors, meta = container.read_container(path)
    if meta.get("kind") != "checkpoint":
        raise ValueError(f"not a checkpoint container: {meta.get('kind')!r}")
    config = ToyViTConfig.from_dict(meta["config"])
    model = ToyViT(config)
    state = {}
    for torch_name, param in model.named_parameters():
        arr = tensors[torch_name]
        if torch_name == "patch_embed.weight":
            arr = arr.reshape(param.shape)
        state[torch_name] = torch.from_numpy(np.ascontiguousarray(arr))
    model.load_state_dict(state)
    model.eval()
    return model


def make_synthetic_images(config: ToyViTConfig, n: int, seed: int):
    gen = torch.Generator().manual_seed(seed)
    shape = (n, config.channels, config.image_size, config.image_size)
    images = torch.rand(shape, generator=gen) * 2.0 - 1.0
    labels = torch.randint(0, config.num_classes, (n,), generator=gen)
    return images, labels


def export_dataset(config: ToyViTConfig, n: int, seed: int, out_path) -> None:
    images, labels = make_synthetic_images(config, n, seed)
    container.write_container(out_path, {
        "images": images.numpy().astype(np.float32),
        "labels": labels.numpy().astype(np.uint32),
    }, {"kind": "dataset", "num_classes": config.num_classes})


def _train_on_separable_task(model: ToyViT, seed: int, steps: int) -> None:
    """A few supervised steps on class prototypes plus noise, so labeled
    accuracy lands meaningfully above chance. Off by default."""
    cfg = model.cfg
    gen = torch.Generator().manual_seed(seed + 1)
    shape = (cfg.num_classes, cfg.channels, cfg.image_size, cfg.image_size)
    prototypes = torch.rand(shape, generator=gen) * 2.0 - 1.0
    opt = torch.optim.SGD(model.parameters(), lr=0.05)
    model.train()
    for _ in range(steps):
        labels = torch.randint(0, cfg.num_classes, (32,), generator=gen)
        noise = torch.randn((32,) + shape[1:], generator=gen) * 0.1
        logits = model(prototypes[labels] + noise)
        loss = nn.functional.cross_entropy(logits, labels)
        opt.zero_grad()
        loss.backward()
        opt.step()
    model.eval()


@torch.no_grad()
def reference_logits(model: ToyViT, images: np.ndarray) -> np.ndarray:
    model.eval()
    out = model(torch.from_numpy(np.ascontiguousarray(images, dtype=np.float32)))
    return out.numpy().astype(np.float32)
