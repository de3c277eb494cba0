"""Finite-width Monte-Carlo certification of the analytic kernels.

Networks are sampled at a finite width with the block structure

    y_0 = W_0 x + B_0
    y_l = y_{l-1} + lambda_{l,L} (W_l relu(y_{l-1}) + B_l)

W entries N(0, sw2 / fan_in), B entries N(0, sb2), and the first output
unit recorded per draw.  Every weight tensor comes from its own random
stream keyed by (seed, sample index, layer index), so results are
bit-identical no matter how samples are chunked across processes.
Per-sample arithmetic runs in float32 (tolerances here are percent-level);
all moment accumulation is float64 over arrays assembled in sample order,
keeping reductions deterministic as well.

Gradient checks backpropagate through the sampled forward weights (no
independent backward copy), and report the per-layer second moment of the
whole gradient vector d(loss)/d(y_l) summed over units.  At the readout
layer that sum is exactly the readout unit's squared gradient; below it,
the summed moment is the quantity that obeys the
(1 + sw2 lambda^2 / 2)-per-block amplification law.  The second moment of
one fixed unit does not grow: the identity skip pins an O(1) component on
the readout unit while the amplified mass spreads across all units.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .kernels import KernelHyper, nngp_forward
from .scaling import ScalingScheme, lambda_sq_profile

MIN_WIDTH = 8
MIN_SAMPLES = 100


@dataclass(frozen=True)
class McConfig:
    width: int
    depth: int
    n_samples: int
    seed: int
    scheme: ScalingScheme
    hyper: KernelHyper

    def __post_init__(self):
        if self.width < MIN_WIDTH:
            raise ValueError(f"width must be >= {MIN_WIDTH}")
        if self.n_samples < MIN_SAMPLES:
            raise ValueError(f"n_samples must be >= {MIN_SAMPLES}")
        if self.depth < 0:
            raise ValueError("depth must be >= 0 (0 = input layer only)")
        if self.seed < 0:
            raise ValueError("seed must be a non-negative integer")


def _stream(seed: int, sample: int, layer: int) -> np.random.Generator:
    """Independent stream for one weight tensor; keying by (seed, sample,
    layer) makes sampling order irrelevant."""
    return np.random.Generator(np.random.SFC64(np.random.SeedSequence(entropy=(seed, sample, layer))))


def _draw_layer(cfg: McConfig, sample: int, layer: int, fan_in: int):
    gen = _stream(cfg.seed, sample, layer)
    sw = np.float32(math.sqrt(cfg.hyper.sigma_w_sq / fan_in))
    W = gen.standard_normal((cfg.width, fan_in), dtype=np.float32) * sw
    if cfg.hyper.sigma_b_sq > 0.0:
        b = gen.standard_normal(cfg.width, dtype=np.float32) * np.float32(
            math.sqrt(cfg.hyper.sigma_b_sq)
        )
    else:
        b = np.zeros(cfg.width, dtype=np.float32)
    return W, b


def _lams_f32(cfg: McConfig) -> np.ndarray:
    if cfg.depth == 0:
        return np.empty(0, dtype=np.float32)
    return np.sqrt(lambda_sq_profile(cfg.scheme, cfg.depth)).astype(np.float32)


def _forward_chunk(cfg: McConfig, inputs: np.ndarray, lo: int, hi: int) -> np.ndarray:
    X = inputs.astype(np.float32).T  # (d, m)
    lams = _lams_f32(cfg)
    out = np.empty((hi - lo, X.shape[1]), dtype=np.float64)
    for s in range(lo, hi):
        W, b = _draw_layer(cfg, s, 0, cfg.hyper.input_dim)
        Y = W @ X + b[:, None]
        for l in range(1, cfg.depth + 1):
            W, b = _draw_layer(cfg, s, l, cfg.width)
            Y = Y + lams[l - 1] * (W @ np.maximum(Y, np.float32(0)) + b[:, None])
        out[s - lo] = Y[0]
    return out


def _grad_chunk(cfg: McConfig, x: np.ndarray, target: float, lo: int, hi: int) -> np.ndarray:
    xf = x.astype(np.float32)
    lams = _lams_f32(cfg)
    out = np.empty((hi - lo, cfg.depth + 1), dtype=np.float64)
    for s in range(lo, hi):
        W0, b0 = _draw_layer(cfg, s, 0, cfg.hyper.input_dim)
        y = W0 @ xf + b0
        pre = [y]
        weights = []
        for l in range(1, cfg.depth + 1):
            W, b = _draw_layer(cfg, s, l, cfg.width)
            weights.append(W)
            y = y + lams[l - 1] * (W @ np.maximum(y, np.float32(0)) + b)
            pre.append(y)
        g = np.zeros(cfg.width, dtype=np.float32)
        g[0] = 2.0 * (pre[-1][0] - np.float32(target))
        moments = np.empty(cfg.depth + 1)
        moments[cfg.depth] = float(g @ g)
        for l in range(cfg.depth, 0, -1):
            g = g + lams[l - 1] * (weights[l - 1].T @ g) * (pre[l - 1] > 0)
            moments[l - 1] = float(g @ g)
        out[s - lo] = moments
    return out


def _run_chunks(fn, cfg: McConfig, args: tuple, workers: int | None):
    n = cfg.n_samples
    if not workers or workers <= 1 or n < 2 * MIN_SAMPLES:
        return fn(cfg, *args, 0, n)
    bounds = np.linspace(0, n, workers + 1, dtype=int)
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [
            pool.submit(fn, cfg, *args, int(lo), int(hi))
            for lo, hi in zip(bounds[:-1], bounds[1:])
            if hi > lo
        ]
        parts = [f.result() for f in futures]
    return np.concatenate(parts, axis=0)


def sample_forward(cfg: McConfig, inputs, workers: int | None = None) -> np.ndarray:
    """First-unit outputs of ``n_samples`` independent networks on the rows
    of ``inputs``; shape (n_samples, m)."""
    X = np.asarray(inputs, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != cfg.hyper.input_dim:
        raise ValueError(f"inputs must have {cfg.hyper.input_dim} columns")
    return _run_chunks(_forward_chunk, cfg, (X,), workers)


def _cov_stats(u: np.ndarray, v: np.ndarray) -> tuple[float, float]:
    """Sample covariance and its standard error (moment estimator)."""
    k = len(u)
    du, dv = u - u.mean(), v - v.mean()
    prod = du * dv
    emp = float(prod.sum() / (k - 1))
    se = float(prod.std(ddof=1) / math.sqrt(k))
    return emp, se


def mc_nngp_error(cfg: McConfig, x, xp, workers: int | None = None):
    """Empirical output covariance vs the analytic depth-L kernel.

    Returns (empirical, analytic, z_score) with the z-score based on the
    sampling standard error of the covariance estimate.
    """
    outs = sample_forward(cfg, np.stack([np.asarray(x), np.asarray(xp)]), workers)
    emp, se = _cov_stats(outs[:, 0], outs[:, 1])
    analytic = nngp_forward(x, xp, cfg.hyper, cfg.scheme, cfg.depth)[-1].q_ab
    return emp, analytic, (emp - analytic) / se


def mc_nngp_error_batch(cfg: McConfig, points, pairs, workers: int | None = None):
    """Covariance checks for many index pairs sharing one set of sampled
    networks.  ``points`` is (m, d); ``pairs`` is a list of (i, j) indexing
    its rows.  Returns a list of (empirical, analytic, z) triples."""
    P = np.asarray(points, dtype=np.float64)
    outs = sample_forward(cfg, P, workers)
    results = []
    for i, j in pairs:
        emp, se = _cov_stats(outs[:, i], outs[:, j])
        analytic = nngp_forward(P[i], P[j], cfg.hyper, cfg.scheme, cfg.depth)[-1].q_ab
        results.append((emp, analytic, (emp - analytic) / se))
    return results


def mc_grad_moment(cfg: McConfig, x, target: float = 1.0,
                   workers: int | None = None) -> np.ndarray:
    """Per-layer empirical gradient second moments (summed over units) for
    the squared-error loss (y_L^1 - target)^2; shape (depth+1,)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (cfg.hyper.input_dim,):
        raise ValueError(f"x must have shape ({cfg.hyper.input_dim},)")
    per_sample = _run_chunks(_grad_chunk, cfg, (x, float(target)), workers)
    return per_sample.mean(axis=0)
