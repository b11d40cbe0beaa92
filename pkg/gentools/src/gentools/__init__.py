"""Reference-side toolchain for the vitfault engine: builds the same toy
ViT in torch, exports checkpoints and datasets in the shared container
format with an independent writer, and cross-checks the engine's logits
against the torch forward pass."""

__version__ = "0.1.0"
