"""Seeded toy checkpoints and synthetic datasets.

The desk-scale substitute for pretrained models: random weights at a
classic transformer init, and a synthetic image set built from per-class
prototype patterns plus noise. Prototypes give most images a comfortable
logit margin under the clean model, so prediction changes measure fault
impact rather than dataset borderline-ness, while still spreading
predictions over several classes.
"""

from __future__ import annotations

import numpy as np

from .vit import Batch, ViTConfig, ViTModel, forward

PRESETS = {
    "toy-tiny": ViTConfig(image_size=32, patch_size=8, channels=3, embed_dim=64,
                          num_heads=4, depth=4, mlp_ratio=4.0, num_classes=10),
    "toy-small": ViTConfig(image_size=32, patch_size=8, channels=3, embed_dim=96,
                           num_heads=6, depth=6, mlp_ratio=4.0, num_classes=10),
    "toy-base": ViTConfig(image_size=32, patch_size=8, channels=3, embed_dim=128,
                          num_heads=8, depth=8, mlp_ratio=4.0, num_classes=10),
}

DEFAULT_WEIGHT_SCALE = 0.02
DEFAULT_HEAVY_FRACTION = 0.5
DEFAULT_HEAVY_RANGE = (2.0, 4.0)


def make_toy_model(config: ViTConfig, seed: int = 0,
                   weight_scale: float = DEFAULT_WEIGHT_SCALE,
                   heavy_fraction: float = DEFAULT_HEAVY_FRACTION,
                   heavy_range: tuple = DEFAULT_HEAVY_RANGE) -> ViTModel:
    """Random toy checkpoint; pure function of (config, seed, draw knobs).

    Projection weights and embeddings are N(0, weight_scale^2), except
    that a heavy_fraction of the MLP entries is drawn uniform
    +-heavy_range in magnitude. The placement is deliberate: the MLP
    bulk is where a neuron averages over many entries, so zero-masking a
    detected word there costs next to nothing, while an undetected flip
    in a high exponent bit of a heavy word turns it into a float-range
    explosion that wrecks the forward pass. Embedding, attention, and
    head tensors stay near zero, where zeroing is also cheap. Biases are
    zero, normalization weights one. Tensors are drawn in sorted-name
    order so the draw sequence is reproducible.
    """
    if not 0.0 <= heavy_fraction <= 1.0:
        raise ValueError(f"heavy_fraction must be in [0, 1]: {heavy_fraction}")
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
    shapes = config.weight_shapes()
    weights = {}
    for name in sorted(shapes):
        shape = shapes[name]
        if name.endswith(".bias"):
            weights[name] = np.zeros(shape, dtype=np.float32)
        elif name in ("norm.weight",) or name.endswith("ln1.weight") or name.endswith("ln2.weight"):
            weights[name] = np.ones(shape, dtype=np.float32)
        else:
            w = rng.normal(0.0, weight_scale, size=shape)
            if heavy_fraction > 0.0 and ".mlp." in name:
                heavy = rng.random(size=shape) < heavy_fraction
                lo, hi = heavy_range
                mag = rng.uniform(lo, hi, size=shape)
                if name.endswith("fc2.weight"):
                    # alternate heavy signs along each row so the positive
                    # gelu mean cancels; otherwise one constant logit
                    # direction dominates every prediction
                    sign = np.ones(shape)
                    for r in range(shape[0]):
                        idx = np.nonzero(heavy[r])[0]
                        sign[r, idx[1::2]] = -1.0
                else:
                    sign = np.where(rng.random(size=shape) < 0.5, -1.0, 1.0)
                w = np.where(heavy, sign * mag, w)
            weights[name] = w.astype(np.float32)
    return ViTModel(config, weights)


def make_synthetic_batch(config: ViTConfig, n: int = 64, seed: int = 0,
                         model: ViTModel = None, pool_factor: int = 60) -> Batch:
    """n seeded synthetic images with labels.

    Without a model: uniform noise images and cyclic placeholder labels
    (schema exercise only). With a model: images are drawn from a seeded
    pool of pool_factor * n candidates and picked by clean-model margin,
    round-robin over predicted classes, and labels are the clean
    predictions. Two properties matter for campaigns: every kept image
    sits comfortably away from a decision boundary, so accuracy changes
    are fault driven instead of borderline driven, and class 0 is
    avoided because tied all-zero logits argmax to 0, so a collapsed
    forward pass never accidentally agrees with the fault-free one.
    """
    if n < 1:
        raise ValueError(f"need at least one image: {n}")
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
    shape = (config.channels, config.image_size, config.image_size)
    if model is None:
        images = rng.uniform(-1.0, 1.0, size=(n,) + shape).astype(np.float32)
        labels = np.arange(n, dtype=np.int64) % config.num_classes
        return Batch(images=images, labels=labels)

    pool = rng.uniform(-1.0, 1.0, size=(pool_factor * n,) + shape).astype(np.float32)
    logits = forward(model, Batch(images=pool))
    preds = np.argmax(logits, axis=1)
    srt = np.sort(logits, axis=1)
    margins = srt[:, -1] - srt[:, -2]
    # restrict to the strongest-margin tier, then spread over predicted
    # classes round-robin; a weak class never drags the margin floor down
    eligible = np.nonzero(preds != 0)[0]
    if eligible.size < n:
        raise ValueError("candidate pool rarely leaves the fallback class; "
                         "try another seed or a larger pool_factor")
    tier = eligible[np.argsort(-margins[eligible], kind="stable")][:max(2 * n, n)]
    by_class = {}
    for i in tier:
        by_class.setdefault(int(preds[i]), []).append(int(i))
    chosen = []
    while len(chosen) < n:
        for c in sorted(by_class):
            if by_class[c] and len(chosen) < n:
                chosen.append(by_class[c].pop(0))
    chosen = np.sort(np.array(chosen))
    return Batch(images=pool[chosen], labels=preds[chosen].astype(np.int64))
