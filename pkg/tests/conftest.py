import numpy as np
import pytest
from numpy.polynomial.hermite_e import hermegauss

import eigml as E


@pytest.fixture(scope="session")
def lin_problem():
    model = E.LinearGaussianModel([[1.0]])
    prior = E.PriorSpec.gaussian([0.0], [1.0])
    noise = E.NoiseSpec.iso(1.0, q=1, N_e=1)
    return model, prior, noise


@pytest.fixture(scope="session")
def toy_problem():
    return E.make_toy_problem()


@pytest.fixture(scope="session")
def toy_eig_oracle():
    """Per-level information gain of the toy model by dense quadrature.

    Outer integrals over (theta, eps) use 80-point Gauss-Hermite rules;
    the evidence integral uses a 200-point rule.  All integrands are
    smooth, so the values are accurate far beyond test tolerances.
    """
    sd, mu, sig = 0.3, 0.7, 0.1
    zt, wt = hermegauss(80)
    wt = wt / wt.sum()
    ze, we = hermegauss(80)
    we = we / we.sum()
    tq, twq = hermegauss(200)
    twq = twq / twq.sum()

    def g_at(t, lev):
        return np.sin(t) + 0.1 * (0.5**lev) ** 1.5 * (t - 0.7)

    def I_level(lev):
        tot = 0.0
        gp = g_at(mu + sd * tq, lev)
        for a, wa in zip(zt, wt):
            gl = g_at(mu + sd * a, lev)
            for b, wb in zip(ze, we):
                eps = sig * b
                y = gl + eps
                ev = np.sum(twq * np.exp(-0.5 * ((y - gp) / sig) ** 2) / np.sqrt(2 * np.pi * sig**2))
                tot += wa * wb * (-0.5 * np.log(2 * np.pi * sig**2) - 0.5 * (eps / sig) ** 2 - np.log(ev))
        return tot

    levels = {lev: I_level(lev) for lev in range(7)}
    levels["inf"] = levels[6]  # h_6 bias ~ 1e-4, far below every tolerance used
    return levels


@pytest.fixture(scope="session")
def const_problem():
    model = E.ConstantModel([1.0, 2.0], dim_theta=1)
    prior = E.PriorSpec.gaussian([0.0], [1.0])
    noise = E.NoiseSpec.iso(1.0, q=2, N_e=1)
    return model, prior, noise


@pytest.fixture(scope="session")
def eit_problem():
    spec = E.four_ply_plate_spec()
    model = E.EitForwardModel(spec)
    noise = E.NoiseSpec.iso(1e-4, q=model.dim_output, N_e=1)
    return model, spec.prior, noise


@pytest.fixture(scope="session")
def eit_pilot(eit_problem):
    # inner counts match the M floor the plate model runs with, so the
    # pilot variance decay is measured in the same regime
    model, prior, noise = eit_problem
    return E.pilot_run(
        model, 3, 16, seed=901, prior=prior, noise=noise, M_small=8, M_large=40, map_gtol=1e-3
    )


@pytest.fixture(scope="session")
def toy_pilot(toy_problem):
    model, prior, noise = toy_problem
    return E.pilot_run(model, 4, 40, seed=905, prior=prior, noise=noise)
