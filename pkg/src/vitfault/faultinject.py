"""Seeded bit-flip fault plans: generate, apply, revert.

A plan is a list of distinct (tensor, element, bit) flips realizing a
target bit-error rate over a parameter layout. Flips are XOR masks, so
applying a plan twice restores the original bits exactly; that is how
campaigns clear injected faults between trials.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .bitcodec import words_view

# Bit 30 is the exponent MSB; flipping it on a typical sub-unity weight
# yields magnitudes around 1e36, which makes every random campaign
# collapse for a reason unrelated to the protection scheme under test.
DEFAULT_EXCLUDED_BITS = frozenset({30})

RANDOM_BIT = "random_bit"
FIXED_BIT = "fixed_bit"

RNG_NAME = "philox"  # counter-based, seedable; recorded in campaign outputs


def derive_seed(base_seed: int, *indices: int) -> int:
    """Stable 64-bit seed for a (base seed, index path) combination."""
    h = hashlib.blake2b(digest_size=8)
    for v in (base_seed, *indices):
        h.update(int(v).to_bytes(8, "little", signed=True))
    return int.from_bytes(h.digest(), "little")


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=np.uint64(seed)))


@dataclass(frozen=True, eq=False)
class FaultPlan:
    seed: int
    ber: float
    mode: str  # RANDOM_BIT or FIXED_BIT
    fixed_bit: Optional[int]
    excluded_bits: frozenset
    layout: tuple  # element count per tensor
    flips: np.ndarray  # [k, 3] int64 rows of (tensor, element, bit)

    @property
    def num_flips(self) -> int:
        return int(self.flips.shape[0])


def num_faults(total_param_bits: int, ber: float) -> int:
    """Fault count for a bit-error rate over a given number of bits.

    Plain rounding; a result of 0 is allowed and yields an empty plan.
    """
    if total_param_bits <= 0:
        raise ValueError(f"total_param_bits must be positive: {total_param_bits}")
    if not 0.0 < ber <= 1.0:
        raise ValueError(f"bit error rate must be in (0, 1]: {ber}")
    return int(round(total_param_bits * ber))


def _sample_distinct(rng: np.random.Generator, n_total: int, k: int) -> np.ndarray:
    """k distinct uniform draws from range(n_total), order as sampled."""
    if k > n_total:
        raise ValueError(f"requested {k} faults but only {n_total} distinct positions exist")
    if k == 0:
        return np.empty(0, dtype=np.int64)
    if 2 * k >= n_total:
        return rng.permutation(n_total)[:k].astype(np.int64)
    chosen = np.empty(0, dtype=np.int64)
    while chosen.size < k:
        need = k - chosen.size
        draw = rng.integers(0, n_total, size=need + need // 2 + 16, dtype=np.int64)
        # keep first occurrences in draw order, then drop already-chosen
        _, first = np.unique(draw, return_index=True)
        draw = draw[np.sort(first)]
        draw = draw[~np.isin(draw, chosen)]
        chosen = np.concatenate([chosen, draw[:need]])
    return chosen


def plan_faults(
    layout: Sequence[int],
    ber: float,
    seed: int,
    excluded_bits: frozenset = DEFAULT_EXCLUDED_BITS,
    mode: str = RANDOM_BIT,
    fixed_bit: Optional[int] = None,
    ber_denominator: str = "bits",
) -> FaultPlan:
    """Sample a fault plan over a parameter layout.

    layout: per-tensor element counts. The fault count is
    round(total_bits * ber) with total_bits = 32 * elements by default;
    ber_denominator="params" reproduces the per-parameter reading
    (round(elements * ber)) instead. Sampling is uniform without
    replacement over (element, allowed bit) positions and is a pure
    function of the arguments. fixed_bit mode pins every flip to one bit
    position (any of 0..31, exclusions do not apply) and samples
    distinct elements.
    """
    layout = tuple(int(c) for c in layout)
    if not layout or any(c <= 0 for c in layout):
        raise ValueError(f"layout must be non-empty positive counts: {layout}")
    if ber_denominator not in ("bits", "params"):
        raise ValueError(f"ber_denominator must be 'bits' or 'params': {ber_denominator}")
    total_elems = sum(layout)
    denom = 32 * total_elems if ber_denominator == "bits" else total_elems
    k = num_faults(denom, ber)

    if mode == FIXED_BIT:
        if fixed_bit is None or not 0 <= int(fixed_bit) <= 31:
            raise ValueError(f"fixed_bit mode needs a bit position in [0, 31]: {fixed_bit}")
        allowed = np.array([int(fixed_bit)], dtype=np.int64)
        excluded = frozenset()
    elif mode == RANDOM_BIT:
        excluded = frozenset(int(b) for b in excluded_bits)
        if not all(0 <= b <= 31 for b in excluded):
            raise ValueError(f"excluded_bits out of range: {sorted(excluded)}")
        allowed = np.array(sorted(set(range(32)) - excluded), dtype=np.int64)
        if allowed.size == 0:
            raise ValueError("every bit position is excluded")
        fixed_bit = None
    else:
        raise ValueError(f"mode must be {RANDOM_BIT!r} or {FIXED_BIT!r}: {mode}")

    n_allowed = int(allowed.size)
    flat = _sample_distinct(_rng(seed), total_elems * n_allowed, k)
    elem_global = flat // n_allowed
    bits = allowed[flat % n_allowed]
    starts = np.cumsum((0,) + layout[:-1])
    tensor = np.searchsorted(np.cumsum(layout), elem_global, side="right")
    elem = elem_global - starts[tensor]
    flips = np.column_stack([tensor, elem, bits]).astype(np.int64)
    return FaultPlan(
        seed=int(seed),
        ber=float(ber),
        mode=mode,
        fixed_bit=None if fixed_bit is None else int(fixed_bit),
        excluded_bits=excluded,
        layout=layout,
        flips=flips,
    )


def _check_bounds(params: list, plan: FaultPlan) -> None:
    if len(params) != len(plan.layout):
        raise ValueError(
            f"plan targets {len(plan.layout)} tensors but {len(params)} were given"
        )
    for i, (arr, count) in enumerate(zip(params, plan.layout)):
        if arr.size != count:
            raise ValueError(
                f"tensor {i} has {arr.size} elements, plan layout says {count}"
            )
    if plan.num_flips:
        t, e, b = plan.flips[:, 0], plan.flips[:, 1], plan.flips[:, 2]
        if (t < 0).any() or (t >= len(params)).any():
            raise IndexError("plan tensor index out of bounds")
        sizes = np.array([p.size for p in params], dtype=np.int64)
        if (e < 0).any() or (e >= sizes[t]).any():
            raise IndexError("plan element index out of bounds")
        if (b < 0).any() or (b > 31).any():
            raise IndexError("plan bit position out of bounds")


def apply_faults(params: list, plan: FaultPlan, inplace: bool = False) -> list:
    """XOR the planned bit flips into a list of float32/uint32 arrays.

    Returns fresh arrays unless inplace=True. Because flips are XOR
    masks over distinct positions, applying the same plan again reverts
    the injection bit-exactly.
    """
    _check_bounds(params, plan)
    out = params if inplace else [a.copy() for a in params]
    if plan.num_flips:
        t = plan.flips[:, 0]
        for ti in np.unique(t):
            m = t == ti
            w = words_view(out[ti])
            masks = np.uint32(1) << plan.flips[m, 2].astype(np.uint32)
            np.bitwise_xor.at(w, plan.flips[m, 1], masks)
    return out


def revert_faults(params: list, plan: FaultPlan, inplace: bool = False) -> list:
    """Clear a previously applied plan (XOR involution)."""
    return apply_faults(params, plan, inplace=inplace)


def plan_record(plan: FaultPlan) -> dict:
    """JSON-serializable record of a plan, for audit and replay."""
    return {
        "seed": plan.seed,
        "ber": plan.ber,
        "mode": plan.mode,
        "fixed_bit": plan.fixed_bit,
        "excluded_bits": sorted(plan.excluded_bits),
        "layout": list(plan.layout),
        "flips": plan.flips.tolist(),
    }


def plan_from_record(rec: dict) -> FaultPlan:
    flips = np.asarray(rec["flips"], dtype=np.int64).reshape(-1, 3)
    return FaultPlan(
        seed=int(rec["seed"]),
        ber=float(rec["ber"]),
        mode=str(rec["mode"]),
        fixed_bit=None if rec["fixed_bit"] is None else int(rec["fixed_bit"]),
        excluded_bits=frozenset(int(b) for b in rec["excluded_bits"]),
        layout=tuple(int(c) for c in rec["layout"]),
        flips=flips,
    )


def save_plans(path, plans) -> None:
    """Write plans as JSON lines (one plan per line)."""
    with open(path, "w", encoding="utf-8") as f:
        for plan in plans:
            f.write(json.dumps(plan_record(plan), sort_keys=True) + "\n")


def load_plans(path) -> list:
    with open(path, "r", encoding="utf-8") as f:
        return [plan_from_record(json.loads(line)) for line in f if line.strip()]
