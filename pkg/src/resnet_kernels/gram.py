"""Datasets, Gram matrices, eigenspectra and zonal spherical spectra.

Gram assembly exploits that on unit-norm data every kernel here is zonal
(a function of the inner product alone): the depth-L scalar map is
tabulated once on a 4097-point Chebyshev grid of [-1, 1] and evaluated by
cubic-spline interpolation, turning an O(n^2 L) job into O(L g + n^2).
A direct per-pair path remains available as the exactness fallback and for
data off the sphere.
"""

from __future__ import annotations

import csv
import gzip
import struct
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import ContractError, DatasetFormatError, NumericError
from .kernels import KernelHyper, forward_pairs, zonal_ntk_correlation, zonal_profiles
from .scaling import ScalingScheme

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801

ZONAL_GRID_SIZE = 4097
UNIT_NORM_TOL = 1e-9
PSD_TOL_FACTOR = 1e-8


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray          # (n, d) float64
    targets: np.ndarray         # (n,) int class indices
    split: str = "train"

    def __post_init__(self):
        if self.inputs.ndim != 2 or len(self.targets) != len(self.inputs):
            raise ValueError("inputs must be (n, d) with one target per row")

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]


@dataclass(frozen=True)
class KernelDescriptor:
    """What to compute for each Gram entry."""

    hyper: KernelHyper
    scheme: ScalingScheme
    depth: int
    kind: str = "nngp"                 # "nngp" | "ntk"
    normalize: str = "covariance"      # "covariance" | "correlation"

    def __post_init__(self):
        if self.kind not in ("nngp", "ntk"):
            raise ValueError(f"kind must be 'nngp' or 'ntk', got {self.kind!r}")
        if self.normalize not in ("covariance", "correlation"):
            raise ValueError(f"bad normalize {self.normalize!r}")
        if self.normalize == "correlation" and self.hyper.sigma_b_sq != 0.0:
            raise ContractError("correlation kernels require sigma_b_sq == 0")
        if self.depth < 0:
            raise ValueError("depth must be >= 0")

    def label(self) -> str:
        return f"{self.kind}-{self.normalize}-{self.scheme.kind}-L{self.depth}"


@dataclass(frozen=True)
class GramMatrix:
    values: np.ndarray
    descriptor: KernelDescriptor
    row_split: str = ""
    col_split: str = ""

    @property
    def n(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class SpectrumResult:
    values: np.ndarray
    normalized: bool = True


# ---------------------------------------------------------------------------
# dataset ingestion
# ---------------------------------------------------------------------------

def _open_maybe_gzip(path):
    with open(path, "rb") as fh:
        head = fh.read(2)
    if head == b"\x1f\x8b":
        return gzip.open(path, "rb")
    return open(path, "rb")


def _read_exact(fh, count, path, what):
    buf = fh.read(count)
    if len(buf) != count:
        raise DatasetFormatError(
            f"{path}: truncated while reading {what}; needed {count} bytes "
            f"at offset {fh.tell() - len(buf)}, got {len(buf)}"
        )
    return buf


def load_idx_images(path) -> np.ndarray:
    """Big-endian IDX image file -> (n, rows*cols) floats in [0, 1]."""
    with _open_maybe_gzip(path) as fh:
        magic, n, rows, cols = struct.unpack(">IIII", _read_exact(fh, 16, path, "header"))
        if magic != IDX_IMAGE_MAGIC:
            raise DatasetFormatError(
                f"{path}: bad image magic 0x{magic:08x}, expected 0x{IDX_IMAGE_MAGIC:08x}"
            )
        raw = _read_exact(fh, n * rows * cols, path, f"{n} images")
    pixels = np.frombuffer(raw, dtype=np.uint8).reshape(n, rows * cols)
    return pixels.astype(np.float64) / 255.0


def load_idx_labels(path) -> np.ndarray:
    with _open_maybe_gzip(path) as fh:
        magic, n = struct.unpack(">II", _read_exact(fh, 8, path, "header"))
        if magic != IDX_LABEL_MAGIC:
            raise DatasetFormatError(
                f"{path}: bad label magic 0x{magic:08x}, expected 0x{IDX_LABEL_MAGIC:08x}"
            )
        raw = _read_exact(fh, n, path, f"{n} labels")
    return np.frombuffer(raw, dtype=np.uint8).astype(np.int64)


def _labels_path_for(images_path: str) -> str:
    for a, b in (("images", "labels"), ("idx3", "idx1")):
        if a in images_path:
            return images_path.replace(a, b).replace("idx3", "idx1")
    raise DatasetFormatError(
        f"cannot derive a labels path from {images_path!r}; pass labels_path explicitly"
    )


def load_dataset(path, format: str = "idx", labels_path=None, split: str = "train") -> Dataset:
    """Load an image-classification dataset.

    idx: ``path`` is the image file (optionally gzipped); the label file is
    ``labels_path`` or derived by the images->labels naming convention.
    csv: label-first rows, an optional non-numeric header row is skipped.
    Pixel values are scaled from [0, 255] to [0, 1].
    """
    path = str(path)
    if format == "idx":
        images = load_idx_images(path)
        labels = load_idx_labels(str(labels_path) if labels_path else _labels_path_for(path))
        if len(labels) != len(images):
            raise DatasetFormatError(
                f"{path}: {len(images)} images but {len(labels)} labels"
            )
        return Dataset(inputs=images, targets=labels, split=split)
    if format == "csv":
        rows = []
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            for i, row in enumerate(reader):
                if not row:
                    continue
                try:
                    rows.append([float(v) for v in row])
                except ValueError:
                    if i == 0:
                        continue  # header
                    raise DatasetFormatError(f"{path}: non-numeric value in row {i}")
        if not rows:
            raise DatasetFormatError(f"{path}: no data rows")
        arr = np.asarray(rows, dtype=np.float64)
        return Dataset(inputs=arr[:, 1:] / 255.0, targets=arr[:, 0].astype(np.int64), split=split)
    raise ValueError(f"unknown format {format!r}")


def preprocess_sphere(train: Dataset, others=()) -> list[Dataset]:
    """Center every split by the train mean, then scale rows to unit norm.

    A row that lands exactly on the train mean has no direction and is
    rejected with its index.
    """
    if train.n == 0:
        raise ValueError("empty training set")
    mean = train.inputs.mean(axis=0)
    out = []
    for ds in (train, *others):
        centered = ds.inputs - mean
        norms = np.linalg.norm(centered, axis=1)
        bad = np.where(norms == 0.0)[0]
        if bad.size:
            raise ValueError(
                f"{ds.split}: row {int(bad[0])} equals the train mean (zero after centering)"
            )
        out.append(Dataset(inputs=centered / norms[:, None], targets=ds.targets, split=ds.split))
    return out


# ---------------------------------------------------------------------------
# Gram assembly
# ---------------------------------------------------------------------------

def _as_inputs(a) -> np.ndarray:
    if isinstance(a, Dataset):
        return a.inputs
    return np.asarray(a, dtype=np.float64)


def _on_sphere(X: np.ndarray) -> bool:
    # tight bound: the zonal shortcut treats the diagonal as exactly
    # sigma_b^2 + sigma_w^2/d, so row-norm error feeds the Gram directly
    return bool(np.all(np.abs(np.einsum("ij,ij->i", X, X) - 1.0) <= 1e-8))


def chebyshev_grid(size: int = ZONAL_GRID_SIZE) -> np.ndarray:
    """Chebyshev-Lobatto nodes of [-1, 1] in increasing order; the endpoint
    clustering keeps the spline error small where the maps have
    square-root-type derivative singularities."""
    return np.cos(np.pi * np.arange(size) / (size - 1))[::-1]


def zonal_map(descriptor: KernelDescriptor, grid_size: int = ZONAL_GRID_SIZE) -> CubicSpline:
    """Tabulate the depth-L scalar kernel map on the Chebyshev grid and
    return its cubic-spline interpolant."""
    t = chebyshev_grid(grid_size)
    if descriptor.kind == "ntk":
        if descriptor.normalize == "correlation":
            # bounded recursion: raw theta overflows for deep unscaled nets
            vals = zonal_ntk_correlation(t, descriptor.hyper, descriptor.scheme,
                                         descriptor.depth)
        else:
            _, _, vals = zonal_profiles(
                t, descriptor.hyper, descriptor.scheme, descriptor.depth, with_ntk=True
            )
    else:
        corr, cov = zonal_profiles(t, descriptor.hyper, descriptor.scheme, descriptor.depth)
        vals = cov if descriptor.normalize == "covariance" else corr
    return CubicSpline(t, vals)


def gram(a, b=None, descriptor: KernelDescriptor = None, exact: bool = False) -> GramMatrix:
    """Gram matrix of kernel values between rows of ``a`` and ``b``.

    Unit-norm data takes the tabulated zonal path; anything else (or
    ``exact=True``) evaluates the pair recursion directly.
    """
    if descriptor is None:
        raise ValueError("descriptor is required")
    A = _as_inputs(a)
    B = A if b is None else _as_inputs(b)
    if A.shape[1] != descriptor.hyper.input_dim or B.shape[1] != A.shape[1]:
        raise ValueError("input dimension does not match the kernel descriptor")
    row_split = a.split if isinstance(a, Dataset) else ""
    col_split = (b.split if isinstance(b, Dataset) else "") if b is not None else row_split

    if not exact and _on_sphere(A) and _on_sphere(B):
        spline = zonal_map(descriptor)
        values = spline(np.clip(A @ B.T, -1.0, 1.0))
    else:
        values = _gram_direct(A, B, descriptor, symmetric=b is None)
    if b is None:
        values = 0.5 * (values + values.T)
    return GramMatrix(values=np.ascontiguousarray(values), descriptor=descriptor,
                      row_split=row_split, col_split=col_split)


def _gram_direct(A, B, descriptor: KernelDescriptor, symmetric: bool = False) -> np.ndarray:
    h = descriptor.hyper
    sb2, sw2, d = h.sigma_b_sq, h.sigma_w_sq, h.input_dim
    q_ab0 = sb2 + sw2 * (A @ B.T) / d
    na = sb2 + sw2 * np.einsum("ij,ij->i", A, A) / d
    nb = sb2 + sw2 * np.einsum("ij,ij->i", B, B) / d
    if symmetric:
        # pin the self-pairs bit-exactly: a 1-ulp gap between the matmul
        # diagonal and the row norms puts c_0 just below 1, where the
        # square-root kink of the dual derivative amplifies it over depth
        np.fill_diagonal(q_ab0, na)
    q_aa0 = np.broadcast_to(na[:, None], q_ab0.shape)
    q_bb0 = np.broadcast_to(nb[None, :], q_ab0.shape)
    res = forward_pairs(q_ab0, q_aa0, q_bb0, h, descriptor.scheme, descriptor.depth,
                        with_ntk=descriptor.kind == "ntk")
    q_ab, q_aa, q_bb = res[0], res[1], res[2]
    if descriptor.kind == "ntk":
        theta = res[3]
        if descriptor.normalize == "correlation":
            ta = forward_pairs(na, na, na, h, descriptor.scheme, descriptor.depth,
                               with_ntk=True)[3]
            tb = forward_pairs(nb, nb, nb, h, descriptor.scheme, descriptor.depth,
                               with_ntk=True)[3]
            return theta / np.sqrt(ta[:, None] * tb[None, :])
        return theta
    if descriptor.normalize == "correlation":
        return q_ab / np.sqrt(q_aa * q_bb)
    return q_ab


def check_gram(g: GramMatrix, sym_tol: float = 1e-12, psd_factor: float = PSD_TOL_FACTOR):
    """Validate symmetry and approximate positive semidefiniteness."""
    v = g.values
    if v.shape[0] != v.shape[1]:
        raise ValueError("not a square Gram matrix")
    asym = float(np.max(np.abs(v - v.T)))
    if asym > sym_tol:
        raise NumericError(f"Gram asymmetry {asym:.3e} exceeds {sym_tol}")
    ev = np.linalg.eigvalsh(v)
    if ev[0] < -psd_factor * max(ev[-1], 0.0):
        raise NumericError(
            f"Gram not PSD within tolerance: min eigenvalue {ev[0]:.3e}, max {ev[-1]:.3e}"
        )
    return ev


def spectrum(g: GramMatrix, k: int) -> SpectrumResult:
    """Top-k eigenvalues of the symmetric Gram, normalized by the largest."""
    try:
        ev = np.linalg.eigvalsh(g.values)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"eigensolver failed: {exc}") from exc
    ev = ev[::-1]
    top = ev[: min(k, len(ev))]
    if top[0] <= 0:
        raise NumericError("largest eigenvalue not positive; cannot normalize")
    return SpectrumResult(values=top / top[0], normalized=True)


# ---------------------------------------------------------------------------
# zonal spherical-harmonic spectra
# ---------------------------------------------------------------------------

def legendre_d(t: np.ndarray, d: int, k_max: int) -> np.ndarray:
    """Dimension-d Legendre (normalized Gegenbauer) polynomials P^d_0..P^d_kmax
    evaluated at ``t``, via the three-term recurrence

        (k + d - 2) P_{k+1} = (2k + d - 2) t P_k - k P_{k-1},  P_0 = 1, P_1 = t.

    Consistent with the Rodrigues definition and P^d_k(1) = 1.
    """
    if d < 2:
        raise ValueError("d must be >= 2")
    t = np.asarray(t, dtype=np.float64)
    out = np.empty((k_max + 1,) + t.shape)
    out[0] = 1.0
    if k_max >= 1:
        out[1] = t
    for k in range(1, k_max):
        out[k + 1] = ((2 * k + d - 2) * t * out[k] - k * out[k - 1]) / (k + d - 2)
    return out


def sphere_area_ratio(d: int) -> float:
    """|S^{d-2}| / |S^{d-1}| = Gamma(d/2) / (sqrt(pi) Gamma((d-1)/2))."""
    from math import gamma, pi, sqrt

    return gamma(d / 2) / (sqrt(pi) * gamma((d - 1) / 2))


def zonal_spectrum(p, d: int, k_max: int, quad_order: int | None = None) -> SpectrumResult:
    """Spherical-harmonic eigenvalues mu_0..mu_kmax of the zonal kernel
    (x, x') -> p(x . x') on the unit sphere in R^d, via

        mu_k = (|S^{d-2}|/|S^{d-1}|) int_{-1}^{1} p(t) P^d_k(t) (1-t^2)^{(d-3)/2} dt

    with Gauss-Legendre quadrature.  Eigenvalues are w.r.t. the uniform
    probability measure (mu_0 = 1 for p == 1) and returned unnormalized.
    """
    if quad_order is None:
        quad_order = max(4 * k_max, 64)
    if quad_order < 4 * k_max:
        raise ContractError(
            f"quadrature order {quad_order} too small; need >= 4*k_max = {4 * k_max}"
        )
    t, w = np.polynomial.legendre.leggauss(quad_order)
    weight = w * (1.0 - t * t) ** ((d - 3) / 2)
    P = legendre_d(t, d, k_max)
    mus = sphere_area_ratio(d) * (P * (np.asarray(p(t)) * weight)).sum(axis=1)
    return SpectrumResult(values=mus, normalized=False)
