"""Residual-block scaling schemes and the square-sum stability test.

A scheme assigns a positive factor lambda_{l,L} to block l of a depth-L
network.  The built-ins:

    unscaled    lambda = 1                    (square sums diverge)
    uniform     lambda = 1/sqrt(L)            (square sum identically 1)
    decreasing  lambda_l = 1/(sqrt(l) ln(l+1))  (L-independent, square-summable)

"Stable" means the square sum stays bounded as the depth grows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

BUILTIN_KINDS = ("unscaled", "uniform", "decreasing", "custom")

LAMBDA_MAX = 1e6

# Relative growth of the square sum over the last depth doubling below which
# a custom scheme is declared bounded.  The built-in decreasing scheme sits
# at 0.4% for a 500 -> 1000 doubling; unscaled sits at 100%.
STABLE_GROWTH_TOL = 0.01


@dataclass(frozen=True)
class ScalingScheme:
    kind: str
    custom_values: tuple[float, ...] | None = field(default=None)

    def __post_init__(self):
        if self.kind not in BUILTIN_KINDS:
            raise ValueError(f"unknown scaling kind {self.kind!r}")
        if self.kind == "custom":
            if not self.custom_values:
                raise ValueError("custom scheme needs at least one value")
            vals = np.asarray(self.custom_values, dtype=np.float64)
            if np.any(vals <= 0.0) or np.any(vals > LAMBDA_MAX):
                raise ValueError(f"custom scaling factors must lie in (0, {LAMBDA_MAX}]")
        elif self.custom_values is not None:
            raise ValueError("custom_values only valid with kind='custom'")

    def label(self) -> str:
        return self.kind


def unscaled() -> ScalingScheme:
    return ScalingScheme("unscaled")


def uniform() -> ScalingScheme:
    return ScalingScheme("uniform")


def decreasing() -> ScalingScheme:
    return ScalingScheme("decreasing")


def custom(values) -> ScalingScheme:
    return ScalingScheme("custom", tuple(float(v) for v in values))


def load_custom(path) -> ScalingScheme:
    """Read a custom scheme from a plain-text file, one factor per line."""
    with open(path) as fh:
        vals = [float(line) for line in fh if line.strip()]
    return custom(vals)


def lambda_at(scheme: ScalingScheme, l: int, L: int) -> float:
    """Scaling factor for block l of a depth-L network, 1 <= l <= L."""
    if l < 1 or l > L:
        raise IndexError(f"block index {l} outside [1, {L}]")
    if scheme.kind == "unscaled":
        return 1.0
    if scheme.kind == "uniform":
        return 1.0 / math.sqrt(L)
    if scheme.kind == "decreasing":
        return 1.0 / (math.sqrt(l) * math.log(l + 1))
    if l > len(scheme.custom_values):
        raise IndexError(
            f"custom scheme has {len(scheme.custom_values)} factors, block {l} requested"
        )
    return scheme.custom_values[l - 1]


def lambda_sq_profile(scheme: ScalingScheme, L: int) -> np.ndarray:
    """Vector of squared factors for blocks 1..L (vectorized lambda_at)."""
    if L < 1:
        raise IndexError("depth must be >= 1")
    if scheme.kind == "unscaled":
        return np.ones(L)
    if scheme.kind == "uniform":
        return np.full(L, 1.0 / L)
    if scheme.kind == "decreasing":
        l = np.arange(1, L + 1, dtype=np.float64)
        return 1.0 / (l * np.log(l + 1) ** 2)
    if L > len(scheme.custom_values):
        raise IndexError(
            f"custom scheme has {len(scheme.custom_values)} factors, depth {L} requested"
        )
    return np.asarray(scheme.custom_values[:L], dtype=np.float64) ** 2


def sum_lambda_sq(scheme: ScalingScheme, L: int) -> float:
    return float(math.fsum(lambda_sq_profile(scheme, L)))


def is_stable(scheme: ScalingScheme, probe_depths) -> bool:
    """Whether the square sum stays bounded across the probe depths.

    Exact for the built-ins.  For custom schemes the answer is a heuristic:
    bounded iff the square sum grows by less than 1% over the last doubling
    of the largest probe depth (a limit statement cannot be decided from
    finitely many terms).
    """
    depths = list(probe_depths)
    if not depths or any(b <= a for a, b in zip(depths, depths[1:])):
        raise ValueError("probe_depths must be non-empty and increasing")
    if scheme.kind == "unscaled":
        return False
    if scheme.kind in ("uniform", "decreasing"):
        return True
    top = depths[-1]
    half = max(1, top // 2)
    s_half = sum_lambda_sq(scheme, half)
    s_top = sum_lambda_sq(scheme, top)
    return (s_top - s_half) / s_half < STABLE_GROWTH_TOL
