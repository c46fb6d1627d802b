import numpy as np
import pytest

import eigml as E
from eigml.errors import HessianNotSPDError
from eigml.laplace import LaplaceFit
from eigml.util import substream


def _identity_model():
    # forces the generic mode search (no linear fast path)
    return E.CallableModel(lambda th: np.array([th[0]]), 1, 1, jac=lambda th: np.array([[1.0]]))


class TestFindMap:
    def test_ridge_closed_form(self, lin_problem):
        model, prior, noise = lin_problem
        th = E.find_map(model, 0, [[1.0]], noise, prior, [0.0])
        assert abs(th[0] - 0.5) < 1e-12

    def test_ridge_generic_path(self):
        model = _identity_model()
        prior = E.PriorSpec.gaussian([0.0], [1.0])
        noise = E.NoiseSpec.iso(1.0, q=1, N_e=1)
        th = E.find_map(model, 0, [[1.0]], noise, prior, [0.0])
        assert abs(th[0] - 0.5) < 1e-8
        # grid-search verification of the minimizer
        grid = np.linspace(-3, 3, 20001)
        obj = 0.5 * (1.0 - grid) ** 2 + 0.5 * grid**2
        assert abs(grid[np.argmin(obj)] - th[0]) < 1e-3

    def test_uniform_prior_pure_least_squares(self):
        model = _identity_model()
        prior = E.PriorSpec.uniform_box([-2.0], [2.0])
        noise = E.NoiseSpec.iso(1.0, q=1, N_e=1)
        th = E.find_map(model, 0, [[1.0]], noise, prior, [0.0])
        assert abs(th[0] - 1.0) < 1e-6

    def test_exact_data_fixed_point(self):
        # noise-free data generated at theta_n with a flat prior: theta_n
        # zeroes the misfit and the log prior is constant, so the mode
        # search must stay put
        model = E.CallableModel(
            lambda th: np.array([np.sin(th[0])]), 1, 1, jac=lambda th: np.array([[np.cos(th[0])]])
        )
        prior = E.PriorSpec.uniform_box([0.2], [1.2])
        noise = E.NoiseSpec.iso(0.01, q=1, N_e=1)
        theta_n = np.array([0.85])
        Y = model.evaluate(theta_n, 0)[None, :]
        th = E.find_map(model, 0, Y, noise, prior, theta_n)
        resid = Y[0] - model.evaluate(th, 0)
        assert np.linalg.norm(th - theta_n) < 1e-8
        assert np.linalg.norm(resid) < 1e-8


class TestLaplaceCovariance:
    def test_gaussian_prior_unit(self, lin_problem):
        model, prior, noise = lin_problem
        Sig = E.laplace_covariance(model, 0, [0.5], noise, prior)
        np.testing.assert_allclose(Sig, [[0.5]], atol=1e-14)

    def test_repeated_experiments(self, lin_problem):
        model, prior, _ = lin_problem
        noise4 = E.NoiseSpec.iso(1.0, q=1, N_e=4)
        Sig = E.laplace_covariance(model, 0, [0.2], noise4, prior)
        np.testing.assert_allclose(Sig, [[0.2]], atol=1e-14)

    def test_uniform_prior_scaled_map(self):
        model = E.CallableModel(lambda th: np.array([2.0 * th[0]]), 1, 1, jac=lambda th: np.array([[2.0]]))
        prior = E.PriorSpec.uniform_box([-5.0], [5.0])
        noise = E.NoiseSpec.iso(1.0, q=1, N_e=1)
        Sig = E.laplace_covariance(model, 0, [0.0], noise, prior)
        np.testing.assert_allclose(Sig, [[0.25]], atol=1e-14)

    def test_flat_direction_names_culprit(self):
        model = E.ConstantModel([1.0], dim_theta=2)
        prior = E.PriorSpec.uniform_box([-1.0, -1.0], [1.0, 1.0])
        noise = E.NoiseSpec.iso(1.0, q=1, N_e=1)
        with pytest.raises(HessianNotSPDError) as exc:
            E.laplace_covariance(model, 0, [0.0, 0.0], noise, prior)
        assert exc.value.null_direction is not None

    def test_shrinks_with_repetitions(self, toy_problem):
        model, prior, _ = toy_problem
        rng = substream(17, 0)
        for _ in range(5):
            th = prior.sample(rng)
            s1 = E.laplace_covariance(model, 1, th, E.NoiseSpec.iso(0.01, 1, 1), prior)
            s4 = E.laplace_covariance(model, 1, th, E.NoiseSpec.iso(0.01, 1, 4), prior)
            w = np.linalg.eigvalsh(s1 - s4)
            assert w.min() >= -1e-12


class TestProposalDensity:
    def test_mode_value(self):
        fit = LaplaceFit.from_covariance([0.0], [[1.0]])
        assert abs(E.is_log_density(fit, [0.0]) - (-0.5 * np.log(2 * np.pi))) < 1e-14

    def test_hand_value(self):
        fit = LaplaceFit.from_covariance([0.0], [[4.0]])
        want = -0.5 * np.log(8 * np.pi) - 0.5
        assert abs(E.is_log_density(fit, [2.0]) - want) < 1e-14

    def test_integrates_to_one(self):
        fit = LaplaceFit.from_covariance([0.3], [[0.8]])
        # ~20-point rule against a slightly wider reference Gaussian
        r = E.gh_rule(11)  # 21 points
        ref_sd = 1.2 * np.sqrt(0.8)
        x = 0.3 + ref_sd * r.points
        ref_log = -0.5 * np.log(2 * np.pi * ref_sd**2) - 0.5 * ((x - 0.3) / ref_sd) ** 2
        vals = np.array([np.exp(E.is_log_density(fit, [xi]) - rl) for xi, rl in zip(x, ref_log)])
        assert abs(np.sum(r.prob_weights * vals) - 1.0) < 1e-10

    def test_maximal_at_mode(self):
        rng = substream(3, 1)
        fit = LaplaceFit.from_covariance([0.1, -0.2], [[0.5, 0.1], [0.1, 0.3]])
        at_mode = E.is_log_density(fit, fit.theta_hat)
        for _ in range(50):
            pert = fit.theta_hat + 0.3 * rng.standard_normal(2)
            assert E.is_log_density(fit, pert) <= at_mode

    def test_asymmetric_covariance_rejected(self):
        with pytest.raises(E.DecompositionError):
            LaplaceFit.from_covariance([0.0, 0.0], [[1.0, 0.5], [0.2, 1.0]])


class TestRatio:
    def test_self_ratio_zero(self):
        prior = E.PriorSpec.gaussian([0.0], [1.0])
        fit = LaplaceFit.from_covariance([0.0], [[1.0]])
        for th in ([-1.3], [0.0], [2.4]):
            assert abs(E.is_ratio_log(prior, fit, th)) < 1e-12

    def test_uniform_inside(self):
        prior = E.PriorSpec.uniform_box([0.0], [4.0])
        fit = LaplaceFit.from_covariance([2.0], [[0.25]])
        got = E.is_ratio_log(prior, fit, [2.5])
        want = -np.log(4.0) - E.is_log_density(fit, [2.5])
        assert abs(got - want) < 1e-14

    def test_outside_support_sentinel(self):
        prior = E.PriorSpec.uniform_box([0.0], [1.0])
        fit = LaplaceFit.from_covariance([0.5], [[1.0]])
        assert E.is_ratio_log(prior, fit, [1.5]) == -np.inf


class TestSampleIs:
    def test_clt_mean(self):
        fit = LaplaceFit.from_covariance([0.0, 0.0], np.eye(2))
        x = E.sample_is(fit, 100_000, substream(9, 0))
        assert np.all(np.abs(x.mean(axis=0)) < 4 / np.sqrt(100_000))

    def test_cholesky_map(self):
        fit = LaplaceFit.from_covariance([0.0, 0.0], [[4.0, 0.0], [0.0, 1.0]])
        np.testing.assert_allclose(fit.chol, [[2.0, 0.0], [0.0, 1.0]], atol=1e-15)
        np.testing.assert_allclose(fit.chol @ [1.0, 1.0], [2.0, 1.0], atol=1e-15)
        x = E.sample_is(fit, 500, substream(9, 1))
        z = (x - fit.theta_hat) @ np.linalg.inv(fit.chol).T
        want = substream(9, 1).standard_normal((500, 2))
        np.testing.assert_allclose(z, want, atol=1e-12)

    def test_seed_determinism(self):
        fit = LaplaceFit.from_covariance([1.0], [[2.0]])
        a = E.sample_is(fit, 64, substream(4, 2))
        b = E.sample_is(fit, 64, substream(4, 2))
        assert np.array_equal(a, b)


class TestExactPosteriorProperty:
    def test_linear_gaussian_fit_is_posterior(self, lin_problem):
        model, prior, noise = lin_problem
        Y = np.array([[1.7]])
        fit = E.fit_laplace(model, 0, Y, noise, prior, [0.0])
        # conjugate formulas
        post_var = 1.0 / (1.0 + 1.0)
        post_mean = post_var * 1.7
        assert abs(fit.theta_hat[0] - post_mean) < 1e-8
        assert abs(fit.Sigma_hat[0, 0] - post_var) < 1e-8

    def test_zero_variance_weights(self, lin_problem):
        from eigml.dlmc import log_likelihood

        model, prior, noise = lin_problem
        Y = np.array([[0.6]])
        fit = E.fit_laplace(model, 0, Y, noise, prior, [0.0])
        thetas = E.sample_is(fit, 200, substream(11, 0))
        logw = np.array(
            [
                log_likelihood(Y, model.evaluate(t, 0), noise) + E.is_ratio_log(prior, fit, t)
                for t in thetas
            ]
        )
        assert logw.max() - logw.min() < 1e-10
