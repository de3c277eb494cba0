"""Gaussian-process posterior-mean classification (kernel ridge regression).

Class labels become one-hot regression targets (not centered); predictions
are the posterior mean Q_xN (Q_NN + s2 I)^{-1} Y computed through a
symmetric positive-definite factorization, never an explicit inverse.
The observation noise s2 is tuned on a validation split over the grid
s2 = m * trace(Q_NN)/N, m in {0.001, 0.01, 0.1}, ties resolved toward the
largest (most regularized) candidate.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .errors import NumericError
from .gram import GramMatrix

log = logging.getLogger(__name__)

DEFAULT_NOISE_MULTIPLIERS = (0.001, 0.01, 0.1)

# ladder of diagonal boosts (relative to trace/N) tried when the plain
# factorization fails; deep unscaled correlation Grams are near rank one
JITTER_LADDER = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6)


@dataclass(frozen=True)
class RegressionConfig:
    noise_multipliers: tuple[float, ...] = DEFAULT_NOISE_MULTIPLIERS
    n_classes: int = 10

    def __post_init__(self):
        m = self.noise_multipliers
        if not m or any(v <= 0 for v in m) or list(m) != sorted(m):
            raise ValueError("noise multipliers must be positive and sorted")


def _values(q) -> np.ndarray:
    return q.values if isinstance(q, GramMatrix) else np.asarray(q, dtype=np.float64)


def solve_regularized(q_nn, rhs: np.ndarray, sigma_sq: float) -> np.ndarray:
    """Solve (Q_NN + sigma_sq I) X = rhs by Cholesky with a jitter ladder.

    The final jitter, when nonzero, is reported through the module logger;
    only if the whole ladder fails does this raise, naming the smallest
    eigenvalue of the regularized matrix.
    """
    Q = _values(q_nn)
    n = Q.shape[0]
    if not sigma_sq > 0:
        raise ValueError("sigma_sq must be positive")
    scale = float(np.trace(Q)) / n
    eye = np.eye(n)
    for jitter in JITTER_LADDER:
        try:
            factor = cho_factor(Q + (sigma_sq + jitter * scale) * eye, lower=True)
        except LinAlgError:
            continue
        if jitter:
            log.info("factorization needed jitter %.1e * trace/N", jitter)
        return cho_solve(factor, rhs)
    smallest = float(np.linalg.eigvalsh(Q + sigma_sq * eye)[0])
    raise NumericError(
        f"matrix not positive definite after jitter ladder; smallest eigenvalue {smallest:.3e}"
    )


def posterior_mean(q_nn, q_xn, y_onehot: np.ndarray, sigma_sq: float) -> np.ndarray:
    """Posterior predictive mean at the rows of q_xn: Q_xN (Q_NN+s2 I)^{-1} Y."""
    Y = np.asarray(y_onehot, dtype=np.float64)
    sol = solve_regularized(q_nn, Y, sigma_sq)
    pred = _values(q_xn) @ sol
    if not np.all(np.isfinite(pred)):
        raise NumericError("posterior mean is not finite")
    return pred


def classify(predictions: np.ndarray) -> np.ndarray:
    """Row-wise argmax; ties resolve to the lowest class index."""
    predictions = np.asarray(predictions)
    if predictions.ndim != 2 or predictions.shape[1] < 2:
        raise ValueError("predictions must be (m, c) with c >= 2")
    return np.argmax(predictions, axis=1)


def one_hot(labels: np.ndarray, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    return np.eye(n_classes)[labels]


@dataclass(frozen=True)
class NoiseChoice:
    sigma_sq: float
    multiplier: float
    val_accuracy: float
    table: tuple = field(default=(), repr=False)


def tune_noise(q_nn, q_vn, y_train, y_val, config: RegressionConfig) -> NoiseChoice:
    """Pick the noise level maximizing validation accuracy.

    ``y_train`` are class labels for the training rows of q_nn, ``y_val``
    labels for the rows of the cross Gram q_vn.  Ties break toward the
    largest sigma_sq.
    """
    if not config.noise_multipliers:
        raise ValueError("empty noise grid")
    Q = _values(q_nn)
    trace_per_n = float(np.trace(Q)) / Q.shape[0]
    Y = one_hot(y_train, config.n_classes)
    best = None
    table = []
    for mult in config.noise_multipliers:
        s2 = mult * trace_per_n
        acc = float(np.mean(classify(posterior_mean(q_nn, q_vn, Y, s2)) == y_val))
        table.append((mult, s2, acc))
        if best is None or acc >= best.val_accuracy:  # >= favors larger s2
            best = NoiseChoice(sigma_sq=s2, multiplier=mult, val_accuracy=acc)
    return NoiseChoice(best.sigma_sq, best.multiplier, best.val_accuracy, tuple(table))
