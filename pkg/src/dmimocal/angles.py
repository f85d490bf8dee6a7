"""Angle arithmetic: wrapping, stepwise unwrapping, and pilot-slot indexing."""

from __future__ import annotations

import math

import numpy as np

TWO_PI = 2.0 * math.pi


def wrap(angle):
    """Map angles to [-pi, pi); output is congruent to the input mod 2*pi.

    Accepts scalars or arrays. The boundary +pi maps to -pi.
    """
    return np.mod(np.asarray(angle) + np.pi, TWO_PI) - np.pi if isinstance(angle, np.ndarray) \
        else ((angle + math.pi) % TWO_PI) - math.pi


def unwrap_step(prev: float, new: float) -> float:
    """Shift `new` by the multiple of 2*pi that lands closest to `prev`.

    Returns new + 2*pi*k with |result - prev| <= pi; on an exact tie the
    smaller k is chosen.
    """
    r = (prev - new) / TWO_PI
    k = math.floor(r)
    lo = new + TWO_PI * k
    hi = new + TWO_PI * (k + 1)
    return lo if abs(lo - prev) <= abs(hi - prev) else hi


def latest_pilot_index(i: int, k: int, tau_c: int) -> int:
    """Global sample index of UE k's most recent uplink pilot at time i.

    Implements [i]_k = i - 1 - ((i - 1 - k) mod tau_c) with the mathematical
    (non-negative) modulus. Before UE k's first pilot the raw value falls
    below 1 and is clamped to the first occurrence at sample k; the simulator
    warms up at least one full slot before using the index, so the clamp is
    unreachable in experiments.
    """
    if i < 1:
        raise ValueError(f"sample index must be >= 1, got {i}")
    base = i - 1 - ((i - 1 - k) % tau_c)
    return max(base, k)
