"""Finite-depth kernel recursions for scaled residual networks.

For a pair of inputs the module propagates the covariance triple
(q_ab, q_aa, q_bb) and, on request, the tangent kernel theta_ab through the
depth-L block recursion

    Q_{l+1} = Q_l + lambda_{l+1}^2 [ sb2 + (sw2/2) fh(C_l) sqrt(q_aa q_bb) ]
    Th_{l+1} = Th_l + lambda_{l+1}^2 [ sb2 + (sw2/2) fh(C_l) sqrt(q_aa q_bb)
                                       + (sw2/2) fh'(C_l) Th_l ]

where C_l is the correlation and fh, fh' the ReLU dual maps.  Writing the
update through fh removes the removable singularity of the textbook form
(1 + f(C)/C) Q at C = 0 exactly.

Diagonal entries obey the closed form

    Q_l(x,x) = -2 sb2/sw2 + prod_{k<=l} (1 + sw2 lambda_k^2 / 2) (Q_0(x,x) + 2 sb2/sw2)

which the tests check against the iteration at 1e-9 relative.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dual import relu_fhat, relu_fhat_prime
from .errors import ContractError, InvalidStateError, KernelOverflowError
from .scaling import ScalingScheme, lambda_sq_profile

CAUCHY_SCHWARZ_RTOL = 1e-9

def _diag_root(q_aa, q_bb):
    """sqrt(q_aa * q_bb), exact on the diagonal, never an intermediate inf.

    The plain product keeps c = q_ab/root exactly 1 for equal entries (the
    fh' square-root singularity at c = 1 amplifies any rounding there); the
    factored form only takes over where the product would overflow.
    """
    prod = q_aa * q_bb
    safe = np.sqrt(np.where(np.isfinite(prod), prod, 1.0))
    fallback = np.sqrt(q_aa) * np.sqrt(q_bb)
    out = np.where(np.isfinite(prod), safe, fallback)
    return float(out) if np.ndim(out) == 0 else out




@dataclass(frozen=True)
class KernelHyper:
    """Weight variance sw2 > 0, bias variance sb2 >= 0, input dimension d."""

    sigma_w_sq: float
    sigma_b_sq: float
    input_dim: int

    def __post_init__(self):
        if not self.sigma_w_sq > 0:
            raise ValueError("sigma_w_sq must be positive")
        if self.sigma_b_sq < 0:
            raise ValueError("sigma_b_sq must be non-negative")
        if self.input_dim < 1:
            raise ValueError("input_dim must be a positive integer")


@dataclass(frozen=True)
class PairState:
    """Kernel state of one input pair at one layer."""

    q_ab: float
    q_aa: float
    q_bb: float
    layer: int
    theta_ab: float | None = None

    @property
    def corr(self) -> float:
        r = self.q_aa * self.q_bb
        if r <= 0.0:
            raise InvalidStateError(
                f"correlation undefined at layer {self.layer}: q_aa*q_bb = {r}"
            )
        return self.q_ab / np.sqrt(r)


def q0(x, xp, hyper: KernelHyper) -> PairState:
    """Layer-0 state: sb2 + sw2 (x . x')/d entrywise; theta_0 = q_0."""
    x = np.asarray(x, dtype=np.float64)
    xp = np.asarray(xp, dtype=np.float64)
    if x.shape != (hyper.input_dim,) or xp.shape != (hyper.input_dim,):
        raise ValueError(
            f"inputs must have shape ({hyper.input_dim},), got {x.shape} and {xp.shape}"
        )
    sb2, sw2, d = hyper.sigma_b_sq, hyper.sigma_w_sq, hyper.input_dim
    q_ab = sb2 + sw2 * float(x @ xp) / d
    q_aa = sb2 + sw2 * float(x @ x) / d
    q_bb = sb2 + sw2 * float(xp @ xp) / d
    return PairState(q_ab=q_ab, q_aa=q_aa, q_bb=q_bb, layer=0, theta_ab=q_ab)


def nngp_step(state: PairState, lam: float, hyper: KernelHyper) -> PairState:
    """One covariance block update with scaling factor ``lam``."""
    if not lam > 0:
        raise ValueError("scaling factor must be positive")
    sb2, sw2 = hyper.sigma_b_sq, hyper.sigma_w_sq
    if state.q_aa <= 0.0 or state.q_bb <= 0.0:
        raise InvalidStateError(
            f"zero diagonal at layer {state.layer}; correlation undefined "
            "(sigma_b = 0 with a zero input)"
        )
    root = _diag_root(state.q_aa, state.q_bb)
    c = state.q_ab / root
    lam2 = lam * lam
    q_ab = state.q_ab + lam2 * (sb2 + 0.5 * sw2 * relu_fhat(c) * root)
    q_aa = state.q_aa + lam2 * (sb2 + 0.5 * sw2 * state.q_aa)
    q_bb = state.q_bb + lam2 * (sb2 + 0.5 * sw2 * state.q_bb)
    return PairState(q_ab=q_ab, q_aa=q_aa, q_bb=q_bb, layer=state.layer + 1)


def _check_finite(value: float, layer: int, what: str):
    if not np.isfinite(value):
        raise KernelOverflowError(
            f"{what} overflowed float64 at layer {layer}; for deep unscaled "
            "networks use the correlation or normalized-tangent recursions"
        )


def nngp_forward(x, xp, hyper: KernelHyper, scheme: ScalingScheme, depth: int) -> list[PairState]:
    """States for layers 0..depth (depth 0 returns just the initial state)."""
    state = q0(x, xp, hyper)
    states = [state]
    if depth == 0:
        return states
    lam2 = lambda_sq_profile(scheme, depth)
    for l in range(depth):
        state = nngp_step(state, float(np.sqrt(lam2[l])), hyper)
        _check_finite(abs(state.q_ab) + state.q_aa + state.q_bb, state.layer,
                      "covariance state")
        states.append(state)
    return states


def ntk_forward(x, xp, hyper: KernelHyper, scheme: ScalingScheme, depth: int) -> list[PairState]:
    """Covariance plus tangent-kernel trajectory; theta_0 = q_0 and
    theta_l >= q_l holds entrywise along the way."""
    sb2, sw2 = hyper.sigma_b_sq, hyper.sigma_w_sq
    state = q0(x, xp, hyper)
    states = [state]
    if depth == 0:
        return states
    lam2 = lambda_sq_profile(scheme, depth)
    theta = state.theta_ab
    for l in range(depth):
        if state.q_aa <= 0.0 or state.q_bb <= 0.0:
            raise InvalidStateError(f"zero diagonal at layer {state.layer}")
        root = _diag_root(state.q_aa, state.q_bb)
        c = state.q_ab / root
        psi = sb2 + 0.5 * sw2 * relu_fhat(c) * root
        theta = theta + lam2[l] * (psi + 0.5 * sw2 * relu_fhat_prime(c) * theta)
        q_ab = state.q_ab + lam2[l] * psi
        q_aa = state.q_aa + lam2[l] * (sb2 + 0.5 * sw2 * state.q_aa)
        q_bb = state.q_bb + lam2[l] * (sb2 + 0.5 * sw2 * state.q_bb)
        _check_finite(abs(theta) + abs(q_ab) + q_aa, l + 1, "tangent kernel")
        state = PairState(q_ab=q_ab, q_aa=q_aa, q_bb=q_bb, layer=l + 1, theta_ab=theta)
        states.append(state)
    return states


def corr_forward(c0, hyper: KernelHyper, scheme: ScalingScheme, depth: int) -> np.ndarray:
    """Zero-bias correlation trajectory C_0..C_depth.

    ``c0`` may be a scalar or an array; the recursion
    C_{l} = (C_{l-1} + a_l fh(C_{l-1})) / (1 + a_l) with a_l = lam_l^2 sw2/2
    is applied elementwise.  Requires sigma_b = 0 (with bias the correlation
    is not autonomous; use nngp_forward).
    """
    if hyper.sigma_b_sq != 0.0:
        raise ContractError("corr_forward requires sigma_b_sq == 0; use nngp_forward")
    c = np.asarray(c0, dtype=np.float64)
    if np.any(np.abs(c) > 1.0 + 1e-12):
        raise ValueError("initial correlation outside [-1, 1]")
    scalar = c.ndim == 0
    c = np.clip(np.atleast_1d(c).copy(), -1.0, 1.0)
    out = np.empty((depth + 1,) + c.shape)
    out[0] = c
    alphas = 0.5 * hyper.sigma_w_sq * lambda_sq_profile(scheme, depth) if depth else []
    for l in range(depth):
        a = alphas[l]
        c = (c + a * relu_fhat(c)) / (1.0 + a)
        out[l + 1] = c
    return out[:, 0] if scalar else out


def corr_as_modified_nngp(c0, hyper: KernelHyper, scheme: ScalingScheme, depth: int) -> np.ndarray:
    """Correlation trajectory computed as the covariance of a rescaled
    residual block that mixes the carry and the branch with weights
    sqrt(1 - ah) and sqrt(ah), ah = a/(1+a).

    The mixing keeps the diagonal constant, so the off-diagonal covariance
    IS the correlation; serves as an independent route for cross-checking
    corr_forward (agreement to 1e-12).
    """
    if hyper.sigma_b_sq != 0.0:
        raise ContractError("corr_as_modified_nngp requires sigma_b_sq == 0")
    c = np.asarray(c0, dtype=np.float64)
    scalar = c.ndim == 0
    q_ab = np.clip(np.atleast_1d(c).astype(np.float64), -1.0, 1.0).copy()
    out = np.empty((depth + 1,) + q_ab.shape)
    out[0] = q_ab
    alphas = 0.5 * hyper.sigma_w_sq * lambda_sq_profile(scheme, depth) if depth else []
    for l in range(depth):
        ah = alphas[l] / (1.0 + alphas[l])
        # unit diagonal: branch variance (sw2_mod/2)*q_aa with sw2_mod = 2
        q_ab = (1.0 - ah) * q_ab + ah * relu_fhat(q_ab)
        out[l + 1] = q_ab
    return out[:, 0] if scalar else out


def ntk_normalized_forward(c0: float, hyper: KernelHyper, depth: int) -> np.ndarray:
    """Normalized tangent kernel kappa_l = Theta_l / (1+a)^(l-1) for the
    unscaled architecture without bias, with unit layer-0 diagonal.

    kappa stays finite at any depth while raw Theta doubles per block.  The
    returned array holds kappa_l at index l for l >= 1; index 0 stores the
    seed value (1+a) * Theta_0 that makes the recursion uniform in l.
    """
    if hyper.sigma_b_sq != 0.0:
        raise ContractError("normalized tangent recursion requires sigma_b_sq == 0")
    a = 0.5 * hyper.sigma_w_sq
    c = float(np.clip(c0, -1.0, 1.0))
    kappa = (1.0 + a) * c  # theta_0 = q_0 = c0 on the unit diagonal
    out = np.empty(depth + 1)
    out[0] = kappa
    for l in range(1, depth + 1):
        kappa = (1.0 + a * relu_fhat_prime(c)) / (1.0 + a) * kappa + a * relu_fhat(c)
        c = (c + a * relu_fhat(c)) / (1.0 + a)
        out[l] = kappa
    return out


def diag_closed_form(q0_diag, hyper: KernelHyper, scheme: ScalingScheme, depth: int):
    """Closed-form diagonal Q_l(x,x) for l = 0..depth (telescoped product)."""
    sb2, sw2 = hyper.sigma_b_sq, hyper.sigma_w_sq
    shift = 2.0 * sb2 / sw2
    if depth == 0:
        factors = np.ones(1)
    else:
        factors = np.concatenate(
            [[1.0], np.cumprod(1.0 + 0.5 * sw2 * lambda_sq_profile(scheme, depth))]
        )
    return -shift + factors * (np.asarray(q0_diag, dtype=np.float64) + shift)


def zonal_profiles(t, hyper: KernelHyper, scheme: ScalingScheme, depth: int,
                   with_ntk: bool = False):
    """Depth-``depth`` kernel maps on the unit sphere, evaluated on a grid
    of inner products ``t``.

    On the sphere every diagonal equals the same scalar, so the pair
    recursion closes over (correlation, shared diagonal) and vectorizes
    over the grid.  Returns (corr, cov) or (corr, cov, ntk) arrays.
    """
    sb2, sw2 = hyper.sigma_b_sq, hyper.sigma_w_sq
    t = np.asarray(t, dtype=np.float64)
    diag = sb2 + sw2 / hyper.input_dim
    q = sb2 + (sw2 / hyper.input_dim) * np.clip(t, -1.0, 1.0)
    theta = q.copy() if with_ntk else None
    lam2 = lambda_sq_profile(scheme, depth) if depth else []
    # transient inf is detected and converted to a diagnostic below
    with np.errstate(over="ignore"):
        for l in range(depth):
            c = q / diag
            psi = sb2 + 0.5 * sw2 * relu_fhat(c) * diag
            if with_ntk:
                theta = theta + lam2[l] * (psi + 0.5 * sw2 * relu_fhat_prime(c) * theta)
                if not np.all(np.isfinite(theta)):
                    raise KernelOverflowError(f"tangent kernel overflowed at layer {l + 1}")
            q = q + lam2[l] * psi
            diag = diag + lam2[l] * (sb2 + 0.5 * sw2 * diag)
            if not np.isfinite(diag):
                raise KernelOverflowError(
                    f"diagonal covariance overflowed at layer {l + 1}; "
                    "use the correlation profile instead"
                )
    corr = q / diag
    if with_ntk:
        return corr, q, theta
    return corr, q


def zonal_ntk_correlation(t, hyper: KernelHyper, scheme: ScalingScheme, depth: int) -> np.ndarray:
    """Diagonal-normalized tangent kernel theta_L(t)/theta_L(1) on the unit
    sphere, evaluated on a grid of inner products ``t``.

    The recursion is carried in the bounded variables rho = theta/theta(1),
    u = q(1)/theta(1) and v = sb2/theta(1), so it stays finite at any depth
    for any scheme (raw theta doubles per block when unscaled).  Agreement
    with the raw route is at rounding level for sb2 = 0 (the only case the
    Gram correlation path accepts); with a bias the normalized value near
    theta's zero crossing is conditioned at ~1e-8 regardless of route.
    """
    sb2, sw2 = hyper.sigma_b_sq, hyper.sigma_w_sq
    alpha_base = 0.5 * sw2
    t = np.asarray(t, dtype=np.float64)
    diag0 = sb2 + sw2 / hyper.input_dim
    q = (sb2 + (sw2 / hyper.input_dim) * np.clip(t, -1.0, 1.0)) / diag0  # corr of q
    rho = q.copy()          # theta_0 = q_0, theta_0(1) = diag0
    u = 1.0                 # q_l(1)/theta_l(1)
    v = sb2 / diag0         # sb2/theta_l(1)
    lam2 = lambda_sq_profile(scheme, depth) if depth else []
    for l in range(depth):
        a = lam2[l]
        growth = 1.0 + a * (v + alpha_base * u + alpha_base)
        rho = (rho + a * (v + alpha_base * relu_fhat(q) * u
                          + alpha_base * relu_fhat_prime(q) * rho)) / growth
        q_new = (q * u + a * (v + alpha_base * relu_fhat(q) * u)) / (u * (1.0 + a * alpha_base) + a * v)
        u = (u * (1.0 + a * alpha_base) + a * v) / growth
        v = v / growth
        q = q_new
    return rho


def forward_pairs(q_ab, q_aa, q_bb, hyper: KernelHyper, scheme: ScalingScheme,
                  depth: int, with_ntk: bool = False):
    """Vectorized pair recursion over arrays of initial states.

    Returns the final (q_ab, q_aa, q_bb[, theta]) arrays; used by the
    direct (non-zonal) Gram path and by the property tests.
    """
    q_ab = np.array(q_ab, dtype=np.float64, copy=True)
    q_aa = np.array(q_aa, dtype=np.float64, copy=True)
    q_bb = np.array(q_bb, dtype=np.float64, copy=True)
    sb2, sw2 = hyper.sigma_b_sq, hyper.sigma_w_sq
    theta = q_ab.copy() if with_ntk else None
    lam2 = lambda_sq_profile(scheme, depth) if depth else []
    for l in range(depth):
        if np.any(q_aa <= 0.0) or np.any(q_bb <= 0.0):
            raise InvalidStateError(f"zero diagonal at layer {l}")
        root = _diag_root(q_aa, q_bb)
        c = q_ab / root
        psi = sb2 + 0.5 * sw2 * relu_fhat(c) * root
        if with_ntk:
            theta = theta + lam2[l] * (psi + 0.5 * sw2 * relu_fhat_prime(c) * theta)
        q_ab = q_ab + lam2[l] * psi
        q_aa = q_aa + lam2[l] * (sb2 + 0.5 * sw2 * q_aa)
        q_bb = q_bb + lam2[l] * (sb2 + 0.5 * sw2 * q_bb)
    if with_ntk:
        return q_ab, q_aa, q_bb, theta
    return q_ab, q_aa, q_bb
