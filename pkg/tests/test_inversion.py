import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pwcip import inversion
from pwcip.errors import FloorViolation
from pwcip.fdgrid import GridSpec, interior
from pwcip.inversion import AdmissibleSet, InversionProblem, Objective
from pwcip.medium import constant_medium

from conftest import optics_pipeline

G = GridSpec(z_samples=11, t_samples=13)
ALPHA = 1.0 / 1.8


@pytest.fixture(scope="module")
def constant_data():
    return optics_pipeline(constant_medium(), G)[4]


def problem(data, **kw):
    return InversionProblem(data, G, lam=2.0, alpha=ALPHA, bounds=AdmissibleSet(), **kw)


def test_constant_truth_has_zero_residuals():
    w = np.full(G.shape_t, 0.5)
    tau = np.broadcast_to(G.z, G.shape).copy()
    R1, R2 = inversion.residuals(w, tau, G)
    assert np.abs(R1).max() < 1e-12 and np.abs(R2).max() < 1e-12
    np.testing.assert_allclose(inversion.recover_n(tau, G), 1.0, atol=1e-12)


def test_quadratic_travel_time_residual():
    w = np.full(G.shape_t, 0.5)
    tau = np.broadcast_to(G.z + 0.1 * G.z**2, G.shape).copy()
    R1, R2 = inversion.residuals(w, tau, G)
    np.testing.assert_allclose(R2, 0.2, atol=1e-10)
    np.testing.assert_allclose(R1, 0.0, atol=1e-12)
    n1, n2 = inversion.residual_norms(R1, R2, G)
    assert n1 < 1e-12 and n2 == pytest.approx(0.2 * G.h * G.N)


def test_floor_violation():
    w = np.full(G.shape_t, 0.5)
    tau = np.broadcast_to(G.z, G.shape).copy()
    w[3, 3, 2, 0] = 1e-3
    with pytest.raises(FloorViolation):
        inversion.residuals(w, tau, G, A0=3.875e-3)
    w[3, 3, 2, 0] = -1.0
    with pytest.raises(FloorViolation):
        inversion.residuals(w, tau, G)


def test_horizon_consistency(constant_data):
    with pytest.raises(ValueError):
        InversionProblem(constant_data, G, lam=2.0, alpha=0.6, bounds=AdmissibleSet())
    p = problem(constant_data)
    assert p.beta == pytest.approx(800.0)
    assert p.q_theta.shape == (4 * (G.N + 1), G.z_samples)


def random_point(obj, rng):
    lo, hi = obj.bounds()
    x = obj.pack(*inversion.initial_guess(obj.p, "flat"))
    x = x + 0.05 * rng.normal(size=x.size)
    return np.clip(x, lo + 1e-3, hi - 1e-3)


def test_gradient_matches_differences(constant_data):
    rng = np.random.default_rng(3)
    data = constant_data.copy()
    data.g0 = data.g0 + 0.01 * rng.normal(size=data.g0.shape)
    data.g1 = data.g1 + 0.01 * rng.normal(size=data.g1.shape)
    obj = Objective(problem(data, rho2=3.0))
    x = random_point(obj, rng)
    J, g = obj(x)
    for _ in range(3):
        d = rng.normal(size=x.size)
        e = 1e-6
        fd = (obj.value(x + e * d) - obj.value(x - e * d)) / (2 * e)
        assert abs(fd - g @ d) <= 1e-5 * max(abs(fd), 1e-8)


def test_zero_weights_give_zero_objective(constant_data):
    obj = Objective(problem(constant_data, rho1=0.0, rho2=0.0, beta=0.0))
    x = random_point(obj, np.random.default_rng(1))
    J, g = obj(x)
    assert J == 0.0 and np.all(g == 0.0)


def test_gauss_newton_diagonal_positive(constant_data):
    obj = Objective(problem(constant_data))
    d = obj.gauss_newton_diagonal(random_point(obj, np.random.default_rng(2)), probes=4)
    assert d.shape == (obj.nw + obj.nq,) and np.all(d >= 0) and d.max() > 0


def test_constant_medium_is_a_stationary_point(constant_data):
    res = inversion.minimize(problem(constant_data), max_iter=50)
    assert res.diagnostics["iterations"] == 0 and res.diagnostics["J"] < 1e-20
    np.testing.assert_allclose(res.n_hat, 1.0, atol=1e-12)
    np.testing.assert_allclose(res.w_hat, 0.5, atol=1e-12)


def test_minimize_decreases_from_perturbed_data(constant_data):
    data = constant_data.copy()
    data.g0 = data.g0 + 0.02 * np.sin(G.t)
    res = inversion.minimize(problem(data), max_iter=30)
    tr = np.array(res.trace)
    assert tr[-1] < tr[0] and np.all(np.diff(tr) <= 1e-12 * tr[0])
    assert res.diagnostics["J"] <= res.diagnostics["J0"]
    assert res.w_hat[..., 0].min() >= AdmissibleSet().A0


def test_initial_guess_kinds(constant_data):
    p = problem(constant_data)
    w, q = inversion.initial_guess(p, "data-extension")
    np.testing.assert_allclose(w, 0.5, atol=1e-12)
    with pytest.raises(ValueError):
        inversion.initial_guess(p, "random")


def test_lambda_for_noise():
    assert inversion.lambda_for_noise(1e-3) == pytest.approx(np.log(1e3) / 3)
    assert inversion.lambda_for_noise(0.5) == 1.0
    assert inversion.lambda_for_noise(1e-60) == 10.0


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(1.0, 1.2), min_size=G.z_samples, max_size=G.z_samples))
def test_recovered_index_stays_in_box(qs):
    # tau = int q dz with 1 <= q <= n0 gives 1 <= n_hat <= n0 away from the z faces
    q = np.broadcast_to(np.asarray(qs), G.shape)
    tau = inversion._apply(inversion._cumtrapz_matrix(G.z_samples, G.dz), q, 2)
    n = inversion.recover_n(tau, G)[..., 1:-1]
    assert n.min() >= 1.0 - 1e-12 and n.max() <= 1.2 + 1e-12


def test_recover_layered_index(layered_optics, grid):
    tf = layered_optics[0]
    n = inversion.recover_n(tf.tau, grid)
    exact = 1 + 0.2 * grid.z**3 * (10 - 15 * grid.z + 6 * grid.z**2)
    assert np.abs(n[3, 3] - exact).max() < 5e-3
    assert np.abs(interior(tf.tau)[..., 0]).max() == 0.0
