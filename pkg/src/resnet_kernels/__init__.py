"""Exact infinite-width kernels of scaled residual networks.

Covariance (NNGP) and tangent (NTK) kernel recursions for residual
networks whose blocks carry depth-dependent scaling factors, their
infinite-depth limits, Gram spectra, GP posterior classification,
PAC-Bayes divergences, gradient-moment profiles, and finite-width
Monte-Carlo certification.
"""

__version__ = "0.1.0"

from .dual import TaylorSeries, fhat_taylor, relu_f, relu_fhat, relu_fhat_prime, relu_fprime
from .errors import (
    ContractError,
    DatasetFormatError,
    DualDomainError,
    InvalidStateError,
    KernelOverflowError,
    NumericError,
)
from .grad_moments import GradientProfile, grad_profile, weight_grad_bound
from .gram import (
    Dataset,
    GramMatrix,
    KernelDescriptor,
    SpectrumResult,
    gram,
    load_dataset,
    preprocess_sphere,
    spectrum,
    zonal_spectrum,
)
from .gp import NoiseChoice, RegressionConfig, classify, one_hot, posterior_mean, tune_noise
from .kernels import (
    KernelHyper,
    PairState,
    corr_as_modified_nngp,
    corr_forward,
    diag_closed_form,
    forward_pairs,
    nngp_forward,
    nngp_step,
    ntk_forward,
    ntk_normalized_forward,
    q0,
    zonal_ntk_correlation,
    zonal_profiles,
)
from .limits import ContinuumState, ntk_ode, ode_uniform, q_infinity_decreasing
from .mc import McConfig, mc_grad_moment, mc_nngp_error, sample_forward
from .pacbayes import PacBayesReport, bernoulli_kl, gp_kl, kl_inverse, pac_bound
from .scaling import ScalingScheme, is_stable, lambda_at, sum_lambda_sq

__all__ = [name for name in dir() if not name.startswith("_")]
