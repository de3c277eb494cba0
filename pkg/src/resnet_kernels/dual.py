"""Dual functions of the ReLU nonlinearity.

These are the three maps that move correlations through an infinite-width
ReLU layer:

    f(g)  = (sqrt(1 - g^2) - g*arccos(g)) / pi
    fh(g) = g + f(g)                       (the "hat" map; fixed point at 1)
    f'(g) = -arccos(g) / pi

together with the power-series expansion of ``fh`` around 0.  Everything in
this module is pure, vectorized over numpy arrays, and safe to call
concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DualDomainError

# Arguments may drift past +-1 by a few ulp when they come from a
# correlation quotient; anything worse signals a bug upstream.
CLAMP_TOL = 1e-12

DEFAULT_TAYLOR_ORDER = 60


def _clamp(gamma):
    g = np.asarray(gamma, dtype=np.float64)
    if np.any(np.abs(g) > 1.0 + CLAMP_TOL):
        worst = float(np.max(np.abs(g)))
        raise DualDomainError(
            f"correlation argument {worst!r} outside [-1, 1] by more than {CLAMP_TOL}"
        )
    return np.clip(g, -1.0, 1.0)


def relu_f(gamma):
    """First ReLU dual map; relu_f(1) = 0, relu_f(-1) = 1, range [0, 1]."""
    g = _clamp(gamma)
    out = (np.sqrt(1.0 - g * g) - g * np.arccos(g)) / np.pi
    return out if isinstance(gamma, np.ndarray) else float(out)


def relu_fhat(gamma):
    """fh(g) = g + f(g); monotone non-decreasing with fh(g) >= g and fh(1) = 1."""
    g = _clamp(gamma)
    out = g + (np.sqrt(1.0 - g * g) - g * np.arccos(g)) / np.pi
    return out if isinstance(gamma, np.ndarray) else float(out)


def relu_fprime(gamma):
    """Derivative of relu_f; equals -arccos(g)/pi, range [-1, 0]."""
    g = _clamp(gamma)
    out = -np.arccos(g) / np.pi
    return out if isinstance(gamma, np.ndarray) else float(out)


def relu_fhat_prime(gamma):
    """Derivative of relu_fhat: arcsin(g)/pi + 1/2.  Identical to
    1 + relu_fprime(g); both forms appear in tangent-kernel recursions."""
    g = _clamp(gamma)
    out = np.arcsin(g) / np.pi + 0.5
    return out if isinstance(gamma, np.ndarray) else float(out)


@dataclass(frozen=True)
class TaylorSeries:
    """Power-series coefficients a_0..a_n of relu_fhat around 0.

    Invariants: a_0 = 1/pi, a_1 = 1/2, odd coefficients vanish from a_3 on,
    even coefficients are strictly positive, and the partial sums at g = 1
    increase monotonically to fh(1) = 1.
    """

    coefficients: np.ndarray
    order: int

    def __call__(self, gamma):
        g = np.asarray(gamma, dtype=np.float64)
        return np.polynomial.polynomial.polyval(g, self.coefficients)

    def partial_sums_at_one(self) -> np.ndarray:
        return np.cumsum(self.coefficients)


def fhat_taylor(n_max: int = DEFAULT_TAYLOR_ORDER) -> TaylorSeries:
    """Expand relu_fhat to order ``n_max``.

    The even coefficients come from the two-index recursion for the even
    derivatives of fh written as sums of terms b[k, m] * g^(2m) *
    (1-g^2)^(1/2-k-m); the factorial normalization is interleaved into each
    step (the scaled quantity carried is b[k, m]/(2k)!) so no intermediate
    ever reaches the overflow range of float64.
    """
    if n_max < 0:
        raise ValueError("n_max must be non-negative")
    a = np.zeros(n_max + 1)
    a[0] = 1.0 / np.pi
    if n_max >= 1:
        a[1] = 0.5
    if n_max >= 2:
        # k = 1 seed: second derivative of fh is (1/pi)(1-g^2)^(-1/2),
        # i.e. b[1, 0] = 1; scaled by 2! it is 1/2.
        scaled = np.array([0.5])
        a[2] = scaled[0] / np.pi
        k = 1
        while 2 * (k + 1) <= n_max:
            nxt = np.zeros(k + 1)
            for m in range(k + 1):
                v = 0.0
                if m + 1 <= k - 1:
                    v += 2.0 * (m + 1) * (2 * m + 1) * scaled[m + 1]
                if m <= k - 1:
                    v += (4 * m + 1) * (2 * k + 2 * m - 1) * scaled[m]
                if 1 <= m <= k:
                    v += (2 * k + 2 * m - 3) * (2 * k + 2 * m - 1) * scaled[m - 1]
                nxt[m] = v
            nxt /= (2 * k + 1) * (2 * k + 2)
            scaled = nxt
            k += 1
            a[2 * k] = scaled[0] / np.pi
    if not np.all(np.isfinite(a)):
        raise ValueError(f"non-finite Taylor coefficient at order {n_max}")
    return TaylorSeries(coefficients=a, order=n_max)
