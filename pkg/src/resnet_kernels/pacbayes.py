"""PAC-Bayes machinery: Bernoulli KL, its inverse, the generalization
bound, and the closed-form KL divergence between a GP regression posterior
and its prior.

All logarithms are natural; every reported quantity is in nats.

For a GP prior with train Gram Q and observation noise s2, the
posterior-to-prior divergence reduces to the marginal on the training
function values:

    KL = 1/2 log det(Q + s2 I) - (N/2) log s2
         - 1/2 Tr(Q (Q + s2 I)^{-1})
         + 1/2 y^T (Q + s2 I)^{-1} Q (Q + s2 I)^{-1} y

computed below from a single Cholesky factorization (log-det from the
factor diagonal, trace via a triangular solve, never a determinant
product or explicit inverse).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, solve_triangular

from .errors import NumericError
from .gram import GramMatrix

KL_INV_TOL = 1e-10


def bernoulli_kl(a: float, p: float) -> float:
    """kl(a || p) = a ln(a/p) + (1-a) ln((1-a)/(1-p)), with 0 ln 0 = 0.

    For p in {0, 1} the divergence is +inf unless a matches that endpoint.
    """
    if not 0.0 <= a <= 1.0:
        raise ValueError("a must lie in [0, 1]")
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must lie in [0, 1]")
    if p in (0.0, 1.0):
        return 0.0 if a == p else math.inf
    out = 0.0
    if a > 0.0:
        out += a * math.log(a / p)
    if a < 1.0:
        out += (1.0 - a) * math.log((1.0 - a) / (1.0 - p))
    # the divergence is non-negative; cancellation can leave a tiny
    # negative residue when a and p nearly coincide
    return max(out, 0.0)


def kl_inverse(a: float, eps: float) -> float:
    """sup{ p in [0,1] : kl(a||p) <= eps }, by bisection on [a, 1].

    kl(a||.) is increasing on [a, 1], so the supremum is the unique
    crossing (or 1 when even p -> 1 stays within eps).
    """
    if not 0.0 <= a <= 1.0:
        raise ValueError("a must lie in [0, 1]")
    if eps < 0.0:
        raise ValueError("eps must be non-negative")
    if eps == 0.0:
        return a
    if a == 1.0 or math.isinf(eps):
        return 1.0
    lo, hi = a, 1.0
    while hi - lo > KL_INV_TOL:
        mid = 0.5 * (lo + hi)
        if bernoulli_kl(a, mid) <= eps:
            lo = mid
        else:
            hi = mid
    return lo


def pac_bound(r_s: float, kl_div: float, n: int, delta: float) -> float:
    """Generalization bound kl^{-1}(r_S, (KL + ln(2 sqrt(N)/delta)) / N)."""
    if not 0.0 <= r_s <= 1.0:
        raise ValueError("empirical risk must lie in [0, 1]")
    if kl_div < 0.0:
        raise ValueError("KL divergence must be non-negative")
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0.0 < delta <= 1.0:
        raise ValueError("delta must lie in (0, 1]")
    eps = (kl_div + math.log(2.0 * math.sqrt(n) / delta)) / n
    return kl_inverse(r_s, eps)


@dataclass(frozen=True)
class PacBayesReport:
    kl_divergence: float
    logdet_term: float
    noise_term: float
    trace_term: float
    quad_term: float
    n: int
    sigma_sq: float

    def __post_init__(self):
        recombined = self.logdet_term + self.noise_term + self.trace_term + self.quad_term
        if abs(recombined - self.kl_divergence) > 1e-9 * max(1.0, abs(self.kl_divergence)):
            raise ValueError("report components do not recombine to the total")
        if self.kl_divergence < -1e-9:
            raise ValueError(f"negative KL divergence {self.kl_divergence}")


def gp_kl(q_nn, y: np.ndarray, sigma_sq: float) -> PacBayesReport:
    """Closed-form KL(posterior || prior) for GP regression, in nats."""
    Q = q_nn.values if isinstance(q_nn, GramMatrix) else np.asarray(q_nn, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    n = Q.shape[0]
    if Q.shape != (n, n) or y.shape != (n,):
        raise ValueError("shape mismatch between Gram matrix and targets")
    if not sigma_sq > 0:
        raise ValueError("sigma_sq must be positive")
    A = Q + sigma_sq * np.eye(n)
    try:
        lower, is_lower = cho_factor(A, lower=True)
    except LinAlgError as exc:
        smallest = float(np.linalg.eigvalsh(A)[0])
        raise NumericError(
            f"Gram + noise not positive definite; smallest eigenvalue {smallest:.3e}"
        ) from exc
    logdet = 2.0 * float(np.sum(np.log(np.diag(lower))))
    # Tr(Q A^{-1}) = N - s2 Tr(A^{-1});  Tr(A^{-1}) = ||L^{-1}||_F^2
    linv = solve_triangular(np.tril(lower), np.eye(n), lower=True)
    trace_qainv = n - sigma_sq * float(np.sum(linv * linv))
    u = cho_solve((lower, is_lower), y)
    quad = float(u @ y - sigma_sq * (u @ u))  # u^T Q u with Q = A - s2 I
    report = PacBayesReport(
        kl_divergence=0.5 * logdet - 0.5 * n * math.log(sigma_sq)
        - 0.5 * trace_qainv + 0.5 * quad,
        logdet_term=0.5 * logdet,
        noise_term=-0.5 * n * math.log(sigma_sq),
        trace_term=-0.5 * trace_qainv,
        quad_term=0.5 * quad,
        n=n,
        sigma_sq=sigma_sq,
    )
    return report
