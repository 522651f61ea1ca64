"""Park-Miller minimal standard generator and derived distributions.

State is a bare integer in [1, 2^31 - 2]; every function returns the new
state alongside the variate, so streams can live inside snapshot-copyable
model state and roll back with it.  Python integers make the 16807 * seed
product exact without Schrage decomposition.
"""

from __future__ import annotations

import math

__all__ = [
    "MODULUS",
    "MULTIPLIER",
    "check_seed",
    "next_int",
    "next_uniform",
    "next_exponential",
    "seed_for_entity",
]

MODULUS = 2**31 - 1  # 2147483647, prime
MULTIPLIER = 16807  # 7^5, primitive root mod MODULUS


def check_seed(seed: int) -> int:
    """Validate a state value; 0 and MODULUS are fixed points and rejected."""
    if not isinstance(seed, int) or not 1 <= seed <= MODULUS - 1:
        raise ValueError(f"seed must be in [1, {MODULUS - 1}], got {seed!r}")
    return seed


def next_int(seed: int) -> int:
    """Advance one step; the new state is the variate."""
    return (MULTIPLIER * seed) % MODULUS


def next_uniform(seed: int) -> tuple[float, int]:
    """Uniform variate strictly inside (0, 1)."""
    seed = next_int(seed)
    return seed / MODULUS, seed


def next_exponential(seed: int, mean: float) -> tuple[float, int]:
    """Exponential variate by inverse transform; consumes one step."""
    if mean <= 0:
        raise ValueError(f"mean must be positive, got {mean!r}")
    u, seed = next_uniform(seed)
    return -mean * math.log(u), seed


def seed_for_entity(base_seed: int, entity: int) -> int:
    """Deterministic per-entity stream start: base advanced entity+1 steps.

    Multiplication by a primitive root is a bijection, so distinct entities
    get distinct states regardless of how entities are partitioned into LPs.
    """
    check_seed(base_seed)
    return (base_seed * pow(MULTIPLIER, entity + 1, MODULUS)) % MODULUS
