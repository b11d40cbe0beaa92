"""Zero-memory-overhead parity protection for ViT parameters plus the
bit-flip fault-injection campaign harness used to evaluate it."""

__version__ = "0.1.0"
