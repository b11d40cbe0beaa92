"""Bit-level parity codec for float32 parameter words.

Storage stays at 32 bits per parameter: the LSB of every word doubles as
an even-parity bit. Encoding flips bit 0 of any word whose popcount is
odd, so a later parity mismatch flags the word as corrupted, and
scrubbing masks flagged words to zero instead of repairing them (the
true LSB is gone; zero is the safe value because parameters concentrate
near zero).

All word functions accept a Python int or a numpy uint32 array and
return the matching kind.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

SIGN_BIT = 31
EXPONENT_BITS = range(23, 31)  # bit 30 is the exponent MSB
PARITY_BIT = 0


def _as_u32(w):
    a = np.asarray(w, dtype=np.uint32)
    return a


def popcount32(w):
    """Number of set bits in a 32-bit word, elementwise on arrays."""
    a = _as_u32(w)
    c = np.bitwise_count(a)
    return int(c) if a.ndim == 0 else c.astype(np.int64)


def check_word(w):
    """True where parity is intact (even popcount)."""
    a = _as_u32(w)
    ok = (np.bitwise_count(a) & 1) == 0
    return bool(ok) if a.ndim == 0 else ok


def encode_word(w):
    """Force even parity by flipping bit 0 of odd-popcount words."""
    a = _as_u32(w)
    out = a ^ (np.bitwise_count(a).astype(np.uint32) & np.uint32(1))
    return int(out) if a.ndim == 0 else out


def flip_bit(w, pos: int):
    """Toggle bit `pos`. Involution: flip_bit(flip_bit(w, p), p) == w."""
    pos = int(pos)
    if not 0 <= pos <= 31:
        raise ValueError(f"bit position out of range [0, 31]: {pos}")
    a = _as_u32(w)
    out = a ^ (np.uint32(1) << np.uint32(pos))
    return int(out) if a.ndim == 0 else out


def float_to_bits(x):
    """Bit pattern of float32 value(s); lossless reinterpretation."""
    if np.isscalar(x) or getattr(x, "ndim", 1) == 0:
        return int(np.float32(x).view(np.uint32))
    a = np.ascontiguousarray(x, dtype=np.float32)
    return a.view(np.uint32)


def bits_to_float(w):
    """Float32 value(s) of bit pattern(s); inverse of float_to_bits."""
    if np.isscalar(w) or getattr(w, "ndim", 1) == 0:
        return float(np.uint32(w).view(np.float32))
    a = np.ascontiguousarray(w, dtype=np.uint32)
    return a.view(np.float32)


def ulp32(x):
    """Unit in the last place of float32 value(s)."""
    return np.abs(np.spacing(np.asarray(x, dtype=np.float32)))


def words_view(arr: np.ndarray) -> np.ndarray:
    """Flat uint32 view over a contiguous float32/uint32 array."""
    if arr.dtype == np.uint32:
        flat = arr.reshape(-1)
    elif arr.dtype == np.float32:
        flat = arr.reshape(-1).view(np.uint32)
    else:
        raise TypeError(f"expected float32 or uint32 array, got {arr.dtype}")
    return flat


@dataclass
class ScrubReport:
    detected: int
    detected_indices: list  # (tensor index, flat element index) pairs
    total_words: int


@dataclass
class ProtectedParams:
    """Parameter tensors after parity encoding, stored as flat uint32 words."""

    names: list
    shapes: list
    words: list  # one flat uint32 array per tensor

    @property
    def total_words(self) -> int:
        return int(sum(w.size for w in self.words))

    def values(self) -> dict:
        """Float32 view of the encoded words, reshaped per tensor."""
        return {
            name: w.view(np.float32).reshape(shape)
            for name, shape, w in zip(self.names, self.shapes, self.words)
        }

    def copy(self) -> "ProtectedParams":
        return ProtectedParams(
            names=list(self.names),
            shapes=list(self.shapes),
            words=[w.copy() for w in self.words],
        )


def encode_params(params) -> ProtectedParams:
    """Parity-encode a set of named float32 tensors.

    `params` is a name->array mapping or an iterable of (name, array)
    pairs. Shapes and names are preserved; each word changes by at most
    its LSB, so every value moves by at most one ulp.
    """
    items: Iterable = params.items() if isinstance(params, Mapping) else params
    names, shapes, words = [], [], []
    for name, arr in items:
        arr = np.asarray(arr)
        if arr.dtype != np.float32:
            raise TypeError(f"tensor {name!r} must be float32, got {arr.dtype}")
        names.append(name)
        shapes.append(tuple(arr.shape))
        words.append(encode_word(arr.reshape(-1).view(np.uint32)))
    return ProtectedParams(names=names, shapes=shapes, words=words)


def scrub_words(words: list) -> ScrubReport:
    """Zero-mask every odd-parity word in place and report the hits.

    Even-parity words pass through untouched; in particular their LSB
    keeps holding parity rather than the original mantissa bit.
    """
    detected = []
    for ti, w in enumerate(words):
        bad = np.nonzero((np.bitwise_count(w) & 1) == 1)[0]
        if bad.size:
            w[bad] = np.uint32(0)
            detected.extend((ti, int(e)) for e in bad)
    total = int(sum(w.size for w in words))
    return ScrubReport(detected=len(detected), detected_indices=detected, total_words=total)


def scrub(p: ProtectedParams):
    """Non-mutating scrub: returns (name -> float32 tensor, report)."""
    out = p.copy()
    report = scrub_words(out.words)
    return out.values(), report
