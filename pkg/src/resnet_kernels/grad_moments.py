"""Exact depth profiles of the loss-gradient second moment.

Backpropagation through one residual block multiplies the gradient second
moment by (1 + sw2 lambda^2 / 2), so with terminal value qbar_L the layer
values are

    qbar_l = qbar_L * prod_{k=l+1}^{L} (1 + sw2 lambda_k^2 / 2),

non-decreasing as l moves toward the input.  The terminal value is
normalized to 1 by default: it depends on the loss and the output scale,
while the ratios are determined by the scaling scheme alone.  Monte-Carlo
verification of these profiles lives in the mc module; everything here is
exact arithmetic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .kernels import KernelHyper
from .scaling import ScalingScheme, lambda_sq_profile, sum_lambda_sq


@dataclass(frozen=True)
class GradientProfile:
    values: np.ndarray          # qbar_l for l = 0..L
    scheme_kind: str
    q_terminal: float

    @property
    def depth(self) -> int:
        return len(self.values) - 1

    @property
    def amplification(self) -> float:
        """qbar_0 / qbar_L, the total backward amplification."""
        return float(self.values[0] / self.values[-1])


def grad_profile(scheme: ScalingScheme, hyper: KernelHyper, depth: int,
                 q_terminal: float = 1.0) -> GradientProfile:
    """Per-layer gradient second moments qbar_0..qbar_L."""
    if depth < 1:
        raise ValueError("depth must be >= 1")
    if not q_terminal > 0:
        raise ValueError("q_terminal must be positive")
    factors = 1.0 + 0.5 * hyper.sigma_w_sq * lambda_sq_profile(scheme, depth)
    values = np.empty(depth + 1)
    values[depth] = q_terminal
    for l in range(depth - 1, -1, -1):
        values[l] = values[l + 1] * factors[l]
    return GradientProfile(values=values, scheme_kind=scheme.kind, q_terminal=q_terminal)


def weight_grad_bound(scheme: ScalingScheme, hyper: KernelHyper, depth: int) -> tuple[float, float]:
    """Envelopes (upper, lower) for the weight-gradient second moment,
    normalized so the constants in front are 1.

    upper = exp((sw2/2) sum lambda^2); lower = (1 + lambda_min^2 sw2/2)^L.
    The lower envelope needs a depth-independent positive lambda_min, which
    the decreasing scheme does not have.
    """
    if depth < 1:
        raise ValueError("depth must be >= 1")
    if scheme.kind == "decreasing":
        raise ContractError(
            "lower bound undefined for the decreasing scheme (lambda_min -> 0)"
        )
    sw2 = hyper.sigma_w_sq
    upper = math.exp(0.5 * sw2 * sum_lambda_sq(scheme, depth))
    lam_min_sq = float(np.min(lambda_sq_profile(scheme, depth)))
    lower = (1.0 + 0.5 * sw2 * lam_min_sq) ** depth
    return upper, lower
