"""Deterministic seed derivation (splitmix64).

Every random decision in the pipeline draws from a splitmix64 stream whose
initial state is derived from the user seed plus a context label and index,
so independent work units (search runs, estimator pipelines, cohort
subjects) never share a stream, and results reproduce exactly across thread
budgets and kernel backends.

Derivation rule, with ``mix64`` the splitmix64 advance-and-finalize step::

    state_0 = mix64(base_seed)
    state_{i+1} = mix64(state_i ^ part_i)      # string parts hashed FNV-1a 64

The in-kernel generator (:func:`labelfuse.kernels.rng_next`) continues the
same sequence: its n-th output from a derived state ``s`` is ``mix64^n(s)``.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX_A = 0xBF58476D1CE4E5B9
_MIX_B = 0x94D049BB133111EB

SCHEME = "splitmix64-v1"


def mix64(x: int) -> int:
    """One splitmix64 step: advance the state and finalize the output."""
    x = (x + _GOLDEN) & MASK64
    x ^= x >> 30
    x = (x * _MIX_A) & MASK64
    x ^= x >> 27
    x = (x * _MIX_B) & MASK64
    return x ^ (x >> 31)


def fnv1a64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for b in data:
        h = ((h ^ b) * 0x100000001B3) & MASK64
    return h


def derive_seed(base: int, *parts: int | str) -> int:
    """Fold context parts into a 64-bit stream seed."""
    state = mix64(base & MASK64)
    for part in parts:
        if isinstance(part, str):
            part = fnv1a64(part.encode("utf-8"))
        state = mix64(state ^ (part & MASK64))
    return state


def stream_state(seed: int) -> np.ndarray:
    """Mutable one-element uint64 state array consumed by the kernels."""
    return np.array([seed & MASK64], dtype=np.uint64)
