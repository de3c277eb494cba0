"""Infinite-depth limits of the kernel recursions.

Uniform scaling: rescaling the layer index to t = l/L turns the depth
recursion into the Cauchy problem

    dq/dt = sb2 + (sw2/2) fh(c_t) sqrt(q_aa q_bb),   q_0 given,

solved here with fixed-step classic Runge-Kutta (the right-hand side is
smooth and bounded on [0,1]; a fixed step keeps convergence tests
deterministic).  The diagonal has the closed form
q_t(x,x) = e^{sw2 t/2} q_0(x,x) + (2 sb2/sw2)(e^{sw2 t/2} - 1).

The tangent kernel obeys d(theta)/dt = dq/dt + (sw2/2) fh'(c_t) theta with
theta_0 = q_0, and also the explicit representation
theta_t = e^{G_t} (q_0 + int_0^t dq/ds e^{-G_s} ds) with
G_t = (sw2/2) int_0^t fh'(c_s) ds, which this module integrates alongside
the ODE as an independent cross-check.

Decreasing scaling: the kernel converges to a limit Q_inf at the rate of
the square-sum tail; q_infinity_decreasing truncates once the tail is
provably below tol for a conservative increment bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dual import relu_fhat, relu_fhat_prime
from .errors import ContractError
from .kernels import KernelHyper, forward_pairs, q0
from .scaling import decreasing


@dataclass(frozen=True)
class ContinuumState:
    t: float
    q_ab: float
    q_aa: float
    q_bb: float
    theta_ab: float | None = None

    @property
    def corr(self) -> float:
        return self.q_ab / math.sqrt(self.q_aa * self.q_bb)


def _rhs(state, sb2, sw2):
    """Vectorized RHS for stacked states [..., (q_ab, q_aa, q_bb)]."""
    q_ab, q_aa, q_bb = state[..., 0], state[..., 1], state[..., 2]
    root = np.sqrt(q_aa * q_bb)
    c = np.clip(q_ab / root, -1.0, 1.0)
    return np.stack(
        [
            sb2 + 0.5 * sw2 * relu_fhat(c) * root,
            sb2 + 0.5 * sw2 * q_aa,
            sb2 + 0.5 * sw2 * q_bb,
        ],
        axis=-1,
    )


def rk4_trajectory(state0: np.ndarray, hyper: KernelHyper, t_end: float, steps: int) -> np.ndarray:
    """Classic fixed-step RK4; returns states at the steps+1 grid times.

    ``state0`` has shape (..., 3) so any number of pairs integrate together.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if not 0.0 <= t_end <= 1.0:
        raise ValueError("t_end must lie in [0, 1]")
    sb2, sw2 = hyper.sigma_b_sq, hyper.sigma_w_sq
    h = t_end / steps
    s = np.array(state0, dtype=np.float64, copy=True)
    traj = np.empty((steps + 1,) + s.shape)
    traj[0] = s
    for i in range(steps):
        k1 = _rhs(s, sb2, sw2)
        k2 = _rhs(s + 0.5 * h * k1, sb2, sw2)
        k3 = _rhs(s + 0.5 * h * k2, sb2, sw2)
        k4 = _rhs(s + h * k3, sb2, sw2)
        s = s + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        traj[i + 1] = s
    return traj


def ode_uniform(x, xp, hyper: KernelHyper, t_end: float, steps: int) -> ContinuumState:
    """Uniform-scaling depth limit for one pair at rescaled time ``t_end``."""
    s0 = q0(x, xp, hyper)
    if t_end == 0.0:
        return ContinuumState(t=0.0, q_ab=s0.q_ab, q_aa=s0.q_aa, q_bb=s0.q_bb)
    traj = rk4_trajectory(np.array([s0.q_ab, s0.q_aa, s0.q_bb]), hyper, t_end, steps)
    q_ab, q_aa, q_bb = traj[-1]
    return ContinuumState(t=t_end, q_ab=float(q_ab), q_aa=float(q_aa), q_bb=float(q_bb))


def _rhs_aug(state, sb2, sw2):
    """RHS with tangent kernel and the two quadrature accumulators G, A."""
    q_ab, q_aa, q_bb, theta, G, _ = (state[..., i] for i in range(6))
    root = np.sqrt(q_aa * q_bb)
    c = np.clip(q_ab / root, -1.0, 1.0)
    qdot = sb2 + 0.5 * sw2 * relu_fhat(c) * root
    return np.stack(
        [
            qdot,
            sb2 + 0.5 * sw2 * q_aa,
            sb2 + 0.5 * sw2 * q_bb,
            qdot + 0.5 * sw2 * relu_fhat_prime(c) * theta,
            0.5 * sw2 * relu_fhat_prime(c),
            qdot * np.exp(-G),
        ],
        axis=-1,
    )


def ntk_ode(x, xp, hyper: KernelHyper, t_end: float, steps: int,
            return_quadrature: bool = False):
    """Tangent-kernel depth limit at time ``t_end``.

    With ``return_quadrature`` the explicit-solution value
    e^{G_t}(q_0 + A_t) is returned alongside for cross-checking; both are
    integrated by the same RK4 sweep but through independent formulas.
    """
    s0 = q0(x, xp, hyper)
    state = np.array([s0.q_ab, s0.q_aa, s0.q_bb, s0.q_ab, 0.0, 0.0])
    if t_end > 0.0:
        sb2, sw2 = hyper.sigma_b_sq, hyper.sigma_w_sq
        h = t_end / steps
        for _ in range(steps):
            k1 = _rhs_aug(state, sb2, sw2)
            k2 = _rhs_aug(state + 0.5 * h * k1, sb2, sw2)
            k3 = _rhs_aug(state + 0.5 * h * k2, sb2, sw2)
            k4 = _rhs_aug(state + h * k3, sb2, sw2)
            state = state + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    q_ab, q_aa, q_bb, theta, G, A = state
    out = ContinuumState(t=t_end, q_ab=float(q_ab), q_aa=float(q_aa),
                         q_bb=float(q_bb), theta_ab=float(theta))
    if return_quadrature:
        return out, float(np.exp(G) * (s0.q_ab + A))
    return out


def diag_closed_form_t(q0_diag: float, hyper: KernelHyper, t: float) -> float:
    """Closed-form diagonal of the uniform-scaling limit at time t."""
    sw2, sb2 = hyper.sigma_w_sq, hyper.sigma_b_sq
    growth = math.exp(0.5 * sw2 * t)
    return growth * q0_diag + 2.0 * sb2 / sw2 * (growth - 1.0)


def decreasing_tail(L: int, horizon: int = 200_000) -> float:
    """Upper bound on sum_{k > L} lambda_k^2 for the decreasing scheme.

    Exact partial sums to ``horizon`` plus the integral bound
    int_H^inf dt/(t ln^2 t) = 1/ln(H) for the remainder.
    """
    if L >= horizon:
        return 1.0 / math.log(L)
    k = np.arange(L + 1, horizon + 1, dtype=np.float64)
    return float(np.sum(1.0 / (k * np.log(k + 1) ** 2)) + 1.0 / math.log(horizon))


def q_infinity_decreasing(x, xp, hyper: KernelHyper, tol: float,
                          max_depth: int = 1 << 20) -> tuple[float, int]:
    """Truncated evaluation of the decreasing-scaling limit kernel.

    Iterates the block recursion until the remaining square-sum tail,
    multiplied by a conservative per-step increment bound kappa, drops
    below ``tol``.  Returns (value, depth used).

    The tail decays only like 1/ln(depth), so the depth certified for a
    tolerance grows exponentially as tol shrinks; tolerances that would
    need more than ``max_depth`` blocks raise instead of running forever.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    sb2, sw2 = hyper.sigma_b_sq, hyper.sigma_w_sq
    s0 = q0(x, xp, hyper)
    # |Q_{l+1} - Q_l| <= lam^2 (sb2 + (sw2/2) sup_l diag); diag is bounded by
    # the closed-form product against exp((sw2/2) sum lam^2).
    total = decreasing_tail(0)
    diag_cap = (max(s0.q_aa, s0.q_bb) + 2.0 * sb2 / sw2) * math.exp(0.5 * sw2 * total)
    kappa = sb2 + 0.5 * sw2 * diag_cap
    depth = 64
    while kappa * decreasing_tail(depth) >= tol:
        depth *= 2
        if depth > max_depth:
            raise ContractError(
                f"tolerance {tol} needs roughly e^{kappa / tol:.3g} blocks "
                f"(> max_depth {max_depth}); the square-sum tail of the "
                "decreasing scheme shrinks only logarithmically"
            )
    q_ab, _, _ = forward_pairs(
        np.array([s0.q_ab]), np.array([s0.q_aa]), np.array([s0.q_bb]),
        hyper, decreasing(), depth,
    )
    return float(q_ab[0]), depth


def uniform_trajectory_batch(state0: np.ndarray, hyper: KernelHyper, depth: int) -> np.ndarray:
    """q_ab at layers 0..depth under uniform scaling, for a batch of pairs.

    ``state0`` has shape (n, 3) with columns (q_ab, q_aa, q_bb); the return
    value has shape (depth+1, n).  Companion to ``rk4_trajectory`` for
    discrete-vs-continuum comparisons.
    """
    s = np.array(state0, dtype=np.float64, copy=True)
    out = np.empty((depth + 1, s.shape[0]))
    out[0] = s[:, 0]
    sb2, sw2 = hyper.sigma_b_sq, hyper.sigma_w_sq
    lam2 = 1.0 / depth
    for l in range(depth):
        root = np.sqrt(s[:, 1] * s[:, 2])
        c = np.clip(s[:, 0] / root, -1.0, 1.0)
        s[:, 0] += lam2 * (sb2 + 0.5 * sw2 * relu_fhat(c) * root)
        s[:, 1] += lam2 * (sb2 + 0.5 * sw2 * s[:, 1])
        s[:, 2] += lam2 * (sb2 + 0.5 * sw2 * s[:, 2])
        out[l + 1] = s[:, 0]
    return out


def discrete_uniform_trajectory(x, xp, hyper: KernelHyper, depth: int) -> np.ndarray:
    """Single-pair convenience wrapper around uniform_trajectory_batch."""
    s0 = q0(x, xp, hyper)
    return uniform_trajectory_batch(
        np.array([[s0.q_ab, s0.q_aa, s0.q_bb]]), hyper, depth
    )[:, 0]
