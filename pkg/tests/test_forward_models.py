import numpy as np
import pytest

import eigml as E
from eigml.errors import DomainError, LevelRangeError
from eigml.util import fit_loglog_slope, substream


class TestEvalForward:
    def test_linear_identity(self):
        model = E.LinearGaussianModel([[1.0]])
        for level in (0, 3, 17):
            np.testing.assert_array_equal(E.eval_forward(model, [0.3], level), [0.3])

    def test_constant(self):
        model = E.ConstantModel([1.0, 2.0], dim_theta=3)
        np.testing.assert_array_equal(E.eval_forward(model, [5.0, -1.0, 0.1], 0), [1.0, 2.0])

    def test_bit_identical_repeat(self, eit_problem):
        model, prior, _ = eit_problem
        th = prior.mean
        a = E.eval_forward(model, th, 1)
        b = E.eval_forward(model, th, 1)
        assert np.array_equal(a, b)

    def test_level_out_of_range(self):
        model = E.LinearGaussianModel([[1.0]], max_level=4)
        with pytest.raises(LevelRangeError):
            E.eval_forward(model, [0.0], 5)
        with pytest.raises(LevelRangeError):
            E.eval_forward(model, [0.0], -1)

    def test_domain_error_outside_support(self):
        model = E.CallableModel(
            lambda th: np.array([th[0] ** 2]), 1, 1, support=([0.0], [1.0])
        )
        with pytest.raises(DomainError):
            E.eval_forward(model, [1.5], 0)
        with pytest.raises(DomainError):
            E.eval_forward(model, [np.nan], 0)

    def test_eval_counts(self):
        model = E.LinearGaussianModel([[1.0]])
        model.evaluate([0.1], 0)
        model.evaluate([0.1], 0)
        model.evaluate([0.1], 2)
        assert model.snapshot_counts() == {0: 2, 2: 1}


class TestEvalJacobian:
    def test_linear_exact(self):
        A = [[2.0, 0.0], [0.0, 3.0]]
        model = E.LinearGaussianModel(A)
        np.testing.assert_array_equal(E.eval_jacobian(model, [0.4, 0.5], 0), -np.array(A))

    def test_constant_zero(self):
        model = E.ConstantModel([1.0, 2.0], dim_theta=2)
        np.testing.assert_array_equal(E.eval_jacobian(model, [0.0, 0.0], 0), np.zeros((2, 2)))

    def test_cubic_finite_difference(self):
        model = E.CallableModel(lambda th: np.array([th[0] ** 3]), 1, 1)
        J = E.eval_jacobian(model, [1.0], 0)
        assert abs(J[0, 0] - (-3.0)) < 1e-6

    def test_half_step_agreement(self):
        # two central-difference estimates with steps h and h/2 agree to O(h^2)
        th = np.array([0.9])
        fd1 = E.eval_jacobian(
            E.CallableModel(lambda t: np.array([np.sin(t[0])]), 1, 1), th, 0, step=[1e-4]
        )
        fd2 = E.eval_jacobian(
            E.CallableModel(lambda t: np.array([np.sin(t[0])]), 1, 1), th, 0, step=[5e-5]
        )
        assert abs(fd1[0, 0] - fd2[0, 0]) < 10 * (1e-4) ** 2
        assert abs(fd1[0, 0] + np.cos(0.9)) < 1e-7

    def test_one_sided_at_boundary(self):
        model = E.CallableModel(
            lambda th: np.array([th[0] ** 2]), 1, 1, support=([0.0], [1.0]), fd_scale=[1.0]
        )
        J = E.eval_jacobian(model, [0.0], 0)
        assert abs(J[0, 0] - 0.0) < 1e-4
        J = E.eval_jacobian(model, [1.0], 0)
        assert abs(J[0, 0] + 2.0) < 1e-4


class TestClosedFormEig:
    def test_unit_case(self):
        got = E.closed_form_eig([[1.0]], [[1.0]], [[1.0]], 1)
        assert abs(got - 0.5 * np.log(2.0)) < 1e-14

    def test_zero_map(self):
        assert E.closed_form_eig([[0.0]], [[1.0]], [[1.0]], 1) == 0.0

    def test_repeated_experiments(self):
        got = E.closed_form_eig([[1.0]], [[1.0]], [[1.0]], 4)
        assert abs(got - 0.5 * np.log(5.0)) < 1e-14

    def test_against_quadrature(self):
        # independent check: integrate the log likelihood ratio exactly;
        # for the unit linear-Gaussian case the integrand is quadratic, so
        # moderate Gauss-Hermite rules are exact
        from numpy.polynomial.hermite_e import hermegauss

        z, w = hermegauss(21)
        w = w / w.sum()
        total = 0.0
        for a, wa in zip(z, w):
            for b, wb in zip(z, w):
                y = a + b
                log_lik = -0.5 * np.log(2 * np.pi) - 0.5 * b * b
                log_ev = -0.5 * np.log(4 * np.pi) - 0.25 * y * y
                total += wa * wb * (log_lik - log_ev)
        assert abs(total - E.closed_form_eig([[1.0]], [[1.0]], [[1.0]], 1)) < 1e-12

    def test_against_monte_carlo_repeated(self):
        # N_e = 4 case against vectorized Monte Carlo with the analytic
        # evidence (three standard errors)
        rng = substream(2024, 0)
        n = 200_000
        theta = rng.standard_normal(n)
        eps = rng.standard_normal((n, 4))
        Y = theta[:, None] + eps
        log_lik = -2.0 * np.log(2 * np.pi) - 0.5 * np.sum(eps * eps, axis=1)
        cov = np.eye(4) + np.ones((4, 4))
        inv = np.linalg.inv(cov)
        _, logdet = np.linalg.slogdet(cov)
        quad = np.einsum("ni,ij,nj->n", Y, inv, Y)
        log_ev = -0.5 * (4 * np.log(2 * np.pi) + logdet + quad)
        f = log_lik - log_ev
        se = f.std(ddof=1) / np.sqrt(n)
        assert abs(f.mean() - 0.5 * np.log(5.0)) < 3 * se

    def test_non_spd_rejected(self):
        with pytest.raises(E.DecompositionError):
            E.closed_form_eig([[1.0]], [[-1.0]], [[1.0]], 1)


class TestWorkModel:
    def test_trivial_levels(self):
        h = E.MeshHierarchy(h0=1.0, beta=2, gamma=2.0)
        assert E.work_of_level(h, 0) == 1.0
        assert E.work_of_level(h, 3) == 64.0

    def test_eit_work_exponent(self):
        # quadratic unknown growth per refinement for the plate model
        assert E.four_ply_plate_spec().hierarchy.gamma == 2.0

    def test_hierarchy_invariants(self):
        h = E.MeshHierarchy(h0=2.0, beta=2, gamma=1.5)
        hs = [h.h(l) for l in range(5)]
        assert all(a > b for a, b in zip(hs, hs[1:]))
        ws = [h.work(l) for l in range(5)]
        assert all(a < b for a, b in zip(ws, ws[1:]))
        with pytest.raises(ValueError):
            E.MeshHierarchy(h0=1.0, beta=1)
        with pytest.raises(ValueError):
            E.MeshHierarchy(h0=1.0, beta=2, gamma=-1.0)


class TestSyntheticLevels:
    def test_strong_convergence_slope(self, toy_problem):
        model, prior, _ = toy_problem
        rng = substream(555, 0)
        thetas = prior.sample(rng, 2000)
        hs, sq = [], []
        for ell in range(1, 5):
            d = np.array(
                [model.evaluate(t, ell) - model.evaluate(t, ell - 1) for t in thetas]
            )
            sq.append(np.mean(np.sum(d * d, axis=1)))
            hs.append(model.hierarchy.h(ell))
        slope, _ = fit_loglog_slope(np.array(hs), np.array(sq))
        assert abs(slope - 2.0 * model.hierarchy.eta_s) < 0.5

    def test_linear_map_combines_planted_terms(self):
        base = E.LinearGaussianModel([[1.0]])
        hier = E.MeshHierarchy(h0=1.0, beta=2, gamma=1.0, eta_w=1.5, eta_s=1.0)
        model = E.SyntheticLevelModel(base, hier, Ww=[[0.3]], Ws=[[0.1]])
        A2, b2 = model.linear_map(2)
        h2 = hier.h(2)
        assert abs(A2[0, 0] - (1.0 + 0.3 * h2**1.5 + 0.1 * h2)) < 1e-15
        np.testing.assert_allclose(model.evaluate([0.5], 2), A2 @ [0.5] + b2)
        np.testing.assert_allclose(model.jacobian([0.5], 2), -A2)
