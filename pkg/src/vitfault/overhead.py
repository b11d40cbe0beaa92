"""Analytical memory/computation overhead of parity protection versus
checksum-based ABFT.

The parity check of a 32-bit word is a 31-XOR reduction tree and needs
no extra storage. The ABFT baseline costs are published figures taken as
inputs; multiplies and adds are converted to XOR equivalents with the
conventional weights (one add = 2 XOR, one multiply = 10 to 50 XOR).
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class CostModel:
    xor_per_word_encode: int = 31
    xor_per_word_check: int = 31
    add_to_xor: float = 2.0
    mul_to_xor_range: tuple = (10.0, 50.0)

    def __post_init__(self):
        low, high = self.mul_to_xor_range
        if min(self.xor_per_word_encode, self.xor_per_word_check) <= 0:
            raise ValueError("per-word XOR counts must be positive")
        if self.add_to_xor <= 0 or low <= 0:
            raise ValueError("conversion weights must be positive")
        if low > high:
            raise ValueError(f"mul_to_xor_range must be ordered: {self.mul_to_xor_range}")


@dataclass(frozen=True)
class AbftCost:
    multiplies: float
    adds: float
    memory_overhead_fraction: float

    def __post_init__(self):
        if min(self.multiplies, self.adds, self.memory_overhead_fraction) < 0:
            raise ValueError("ABFT costs must be non-negative")


@dataclass(frozen=True)
class ParityCost:
    xor_count: float
    memory_overhead_fraction: float  # always exactly 0


@dataclass(frozen=True)
class CostComparison:
    factor_low: float
    factor_high: float
    memory_delta: float  # ABFT memory fraction minus parity's (zero)


# Published checksum-ABFT figures for the two base-size models, used as
# comparison inputs, not derived here. 85.8M parameters is the count
# consistent with the published XOR figure for DeiT-Base.
VIT_BASE_PARAMS = 86_000_000
DEIT_BASE_PARAMS = 85_800_000
VIT_BASE_ABFT = AbftCost(multiplies=124.85e9, adds=126.66e6,
                         memory_overhead_fraction=0.25)
DEIT_BASE_ABFT = AbftCost(multiplies=125.48e9, adds=127.10e6,
                          memory_overhead_fraction=0.25)


def parity_cost(num_params: int, model: CostModel = CostModel()) -> ParityCost:
    """XOR count for one parity-checking pass over all parameters."""
    if num_params <= 0:
        raise ValueError(f"num_params must be positive: {num_params}")
    return ParityCost(
        xor_count=float(model.xor_per_word_check) * float(num_params),
        memory_overhead_fraction=0.0,
    )


def compare(parity: ParityCost, abft: AbftCost,
            model: CostModel = CostModel()) -> CostComparison:
    """ABFT-to-parity computation factor at both multiply weights."""
    if parity.xor_count <= 0:
        raise ValueError("parity xor_count must be positive")

    def xor_equivalent(mul_weight: float) -> float:
        return abft.multiplies * mul_weight + abft.adds * model.add_to_xor

    low, high = model.mul_to_xor_range
    return CostComparison(
        factor_low=xor_equivalent(low) / parity.xor_count,
        factor_high=xor_equivalent(high) / parity.xor_count,
        memory_delta=abft.memory_overhead_fraction - parity.memory_overhead_fraction,
    )
