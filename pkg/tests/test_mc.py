"""Finite-width Monte-Carlo sampling against the analytic kernels."""

import numpy as np
import pytest

from resnet_kernels.grad_moments import grad_profile
from resnet_kernels.kernels import KernelHyper, nngp_forward
from resnet_kernels.mc import (
    McConfig,
    mc_grad_moment,
    mc_nngp_error,
    mc_nngp_error_batch,
    sample_forward,
)
from resnet_kernels.scaling import decreasing, uniform, unscaled


def cfg_for(width=256, depth=4, n_samples=150, seed=7, scheme=None, sw2=2.0, sb2=0.0, d=16):
    return McConfig(
        width=width,
        depth=depth,
        n_samples=n_samples,
        seed=seed,
        scheme=scheme or unscaled(),
        hyper=KernelHyper(sw2, sb2, d),
    )


def sphere_rows(n, d, seed=0):
    X = np.random.default_rng(seed).standard_normal((n, d))
    return X / np.linalg.norm(X, axis=1, keepdims=True)


class TestSampleForward:
    def test_zero_input_no_bias_gives_zero(self):
        cfg = cfg_for()
        out = sample_forward(cfg, np.zeros((1, 16)))
        np.testing.assert_array_equal(out, 0.0)

    def test_seeded_determinism(self):
        cfg = cfg_for()
        X = sphere_rows(3, 16)
        np.testing.assert_array_equal(sample_forward(cfg, X), sample_forward(cfg, X))

    def test_worker_count_does_not_change_bits(self):
        cfg = cfg_for(n_samples=220)
        X = sphere_rows(2, 16)
        a = sample_forward(cfg, X, workers=1)
        b = sample_forward(cfg, X, workers=2)
        np.testing.assert_array_equal(a, b)

    def test_different_seeds_differ(self):
        X = sphere_rows(2, 16)
        a = sample_forward(cfg_for(seed=1), X)
        b = sample_forward(cfg_for(seed=2), X)
        assert not np.array_equal(a, b)

    def test_shape(self):
        cfg = cfg_for(n_samples=110)
        assert sample_forward(cfg, sphere_rows(5, 16)).shape == (110, 5)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            cfg_for(width=4)
        with pytest.raises(ValueError):
            cfg_for(n_samples=10)
        with pytest.raises(ValueError):
            McConfig(64, -1, 200, 0, unscaled(), KernelHyper(2.0, 0.0, 4))


class TestKernelAgreement:
    def test_variance_within_four_standard_errors(self):
        for scheme in (unscaled(), uniform(), decreasing()):
            cfg = cfg_for(width=512, depth=4, n_samples=200, scheme=scheme, sb2=0.1)
            x = sphere_rows(1, 16, seed=3)[0]
            emp, analytic, z = mc_nngp_error(cfg, x, x)
            assert abs(z) < 4.0, (scheme.kind, emp, analytic, z)

    def test_orthogonal_inputs_first_layer_only(self):
        cfg = cfg_for(depth=0, n_samples=400)
        x = np.zeros(16)
        x[0] = 1.0
        xp = np.zeros(16)
        xp[1] = 1.0
        emp, analytic, z = mc_nngp_error(cfg, x, xp)
        assert analytic == 0.0
        assert abs(z) < 4.0

    def test_covariance_batch_matches_single(self):
        cfg = cfg_for(n_samples=150)
        P = sphere_rows(4, 16, seed=5)
        batch = mc_nngp_error_batch(cfg, P, [(0, 1), (2, 3)])
        single = mc_nngp_error(cfg, P[0], P[1])
        # same networks evaluate every column, so pair (0,1) must agree
        # with the direct call on its own two columns
        assert batch[0][1] == pytest.approx(
            nngp_forward(P[0], P[1], cfg.hyper, cfg.scheme, cfg.depth)[-1].q_ab
        )
        assert len(batch) == 2 and np.isfinite(batch[1][2])
        assert np.isfinite(single[2])

    def test_width_sweep_median_error_shrinks(self):
        # finite-width bias scales like 1/width; widths picked so the bias
        # dominates the K-sample noise and the ordering is decisive
        x = sphere_rows(1, 16, seed=11)[0]
        analytic = None
        medians = []
        for width in (8, 32, 128):
            errs = []
            for rep in range(20):
                cfg = cfg_for(width=width, depth=4, n_samples=1000, seed=100 + rep)
                emp, analytic, _ = mc_nngp_error(cfg, x, x)
                errs.append(abs(emp - analytic))
            medians.append(np.median(errs))
        assert medians[0] > medians[1] > medians[2]

    def test_empirical_gram_symmetric_psd(self):
        cfg = cfg_for(width=512, depth=4, n_samples=300, sb2=0.1)
        P = sphere_rows(5, 16, seed=9)
        outs = sample_forward(cfg, P)
        emp = np.cov(outs.T)
        np.testing.assert_allclose(emp, emp.T, atol=1e-12)
        assert np.linalg.eigvalsh(emp)[0] > -1e-10


class TestGradMoment:
    def test_single_layer_profile_trivial(self):
        cfg = cfg_for(depth=0, n_samples=150)
        x = sphere_rows(1, 16)[0]
        moments = mc_grad_moment(cfg, x)
        assert moments.shape == (1,)
        assert moments[0] > 0.0

    def test_unscaled_amplification_within_tolerance(self):
        cfg = cfg_for(width=256, depth=4, n_samples=300, seed=2)
        x = sphere_rows(1, 16)[0]
        moments = mc_grad_moment(cfg, x)
        ratio = moments / moments[-1]
        oracle = grad_profile(unscaled(), cfg.hyper, 4).values
        np.testing.assert_allclose(ratio, oracle, rtol=0.2)

    def test_uniform_amplification_within_tolerance(self):
        cfg = cfg_for(width=256, depth=8, n_samples=300, seed=4, scheme=uniform())
        x = sphere_rows(1, 16)[0]
        moments = mc_grad_moment(cfg, x)
        ratio = moments / moments[-1]
        oracle = grad_profile(uniform(), cfg.hyper, 8).values
        np.testing.assert_allclose(ratio, oracle, rtol=0.2)

    def test_deterministic(self):
        cfg = cfg_for(depth=2, n_samples=120)
        x = sphere_rows(1, 16)[0]
        np.testing.assert_array_equal(mc_grad_moment(cfg, x), mc_grad_moment(cfg, x))
