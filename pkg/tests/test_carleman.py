import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pwcip import carleman
from pwcip.carleman import CarlemanParams
from pwcip.errors import DomainMismatch
from pwcip.fdgrid import GridSpec

G = GridSpec(z_samples=41, t_samples=31, T1=1.5, t1=1.5)
P = CarlemanParams(lam=5.0)


def zt_field(grid, f):
    Z, T = np.meshgrid(grid.z, grid.t, indexing="ij")
    return np.broadcast_to(f(Z, T), grid.shape_t).copy()


def test_params_defaults_and_checks():
    assert P.alpha == pytest.approx(2.0 / 3.0) and P.alpha0 == pytest.approx(2.0 / 3.0)
    assert carleman.alpha0(1.2) == pytest.approx(2.0 / 3.6)
    with pytest.raises(ValueError):
        CarlemanParams(alpha=0.9)
    with pytest.raises(ValueError):
        CarlemanParams(xi0=2.0, xi1=1.0)
    with pytest.raises(ValueError):
        CarlemanParams(xi=3.0)


def test_operator_on_polynomial():
    v = zt_field(G, lambda z, t: z**2 * t + 0.5 * z**3)
    Lv = carleman.operator_c4(v, G, P)
    Z, T = np.meshgrid(G.z, G.t, indexing="ij")
    np.testing.assert_allclose(Lv, np.broadcast_to(2 * T + 3 * Z - 2 * Z, Lv.shape), atol=1e-9)


def test_weighted_integral_of_constant():
    v = zt_field(G, lambda z, t: z + 0 * t)
    # Lap v = 0 for v linear in z, so lhs_c6 vanishes
    assert carleman.lhs_c6(v, G, P) == pytest.approx(0.0, abs=1e-20)
    w = zt_field(G, lambda z, t: 0.5 * z**2 + 0 * t)
    lam, a = P.lam, P.alpha

    def trap(c, d, L):
        # trapezoid rule for exp(-c x) on [0, L] with step d, in closed form
        return 0.5 * d / np.tanh(0.5 * c * d) * (1 - np.exp(-c * L))

    exact = G.h**2 * G.N**2 * trap(2 * lam, G.dz, 1.0) * trap(2 * lam * a, G.dt, G.T1)
    assert carleman.lhs_c6(w, G, P) == pytest.approx(exact, rel=1e-12)


def test_shape_mismatch():
    with pytest.raises(DomainMismatch):
        carleman.lhs_c4(np.zeros(G.shape), G, P)
    with pytest.raises(DomainMismatch):
        carleman.operator_c4(np.zeros(G.shape_t), G, CarlemanParams(xi=np.ones(3)))


fields = st.integers(0, 2**31 - 1).map(lambda s: np.random.default_rng(s).normal(size=G.shape_t))


@settings(max_examples=20, deadline=None)
@given(fields, st.floats(-4, 4))
def test_functionals_scale_quadratically(v, c):
    for f in (carleman.lhs_c4, carleman.lhs_c6):
        assert f(c * v, G, P) == pytest.approx(c * c * f(v, G, P), rel=1e-9, abs=1e-300)
    g1, g2 = carleman.rhs_groups_c4(v, G, P), carleman.rhs_groups_c4(c * v, G, P)
    for k in carleman.C4_GROUPS:
        assert g2[k] == pytest.approx(c * c * g1[k], rel=1e-9, abs=1e-300)
        assert g1[k] >= 0.0


def test_double_resolution_agrees():
    coarse = carleman.carleman_grid(z_samples=121, t_samples=81)
    fine = carleman.carleman_grid(z_samples=241, t_samples=161)
    p = CarlemanParams(lam=10.0)
    vals = []
    for g in (coarse, fine):
        _, _, v = carleman.field_suite(g, ("clean",))[0]
        vals.append((carleman.lhs_c4(v, g, p), carleman.weighted_h1(v, g, p)))
    for a, b in zip(*vals):
        assert a == pytest.approx(b, rel=2e-2)


def test_clean_suite_vanishes_on_boundaries():
    g = carleman.carleman_grid(z_samples=61, t_samples=41)
    for name, fam, v in carleman.field_suite(g, ("clean",)):
        assert np.abs(v[:, :, 0]).max() == 0.0
        assert np.abs(v[0]).max() < 1e-14 and np.abs(v[:, -1]).max() < 1e-14
        groups = carleman.rhs_groups_c4(v, g, P)
        assert groups["Neg_theta"] < 1e-25 and groups["Neg_terminal"] < 1e-20


def test_verify_estimate_on_clean_suite():
    g = carleman.carleman_grid(z_samples=121, t_samples=81)
    suite = carleman.field_suite(g, ("clean",))
    rep = carleman.verify_estimate("C4", suite, [5, 10, 20], CarlemanParams(), g)
    assert rep.passed and rep.C > 0 and np.isfinite(rep.lambda0)
    assert len(rep.rows) == 3 * len(suite)
    assert rep.min_slope >= 0.9
    assert set(rep.to_dict()) >= {"lambda0", "C", "slopes", "rows"}
    for row in rep.rows:
        if row["lambda"] >= rep.lambda0 and row["W"] > 0:
            assert row["lhs"] >= rep.C * row["W"] * (1 - 1e-12)


def test_verify_estimate_arguments():
    suite = carleman.field_suite(G, ("clean",))
    with pytest.raises(ValueError):
        carleman.verify_estimate("C5", suite, [5, 10], P, G)
    with pytest.raises(ValueError):
        carleman.verify_estimate("C4", suite, [10, 5], P, G)
    with pytest.raises(ValueError):
        carleman.verify_estimate("C6", suite, [0.5, 5], P, G)


def test_dominance_sign_convention():
    assert carleman.dominance({"Pos_a": 3.0, "Pos_b": 1.0, "Neg_c": 1.5}) == pytest.approx(2.5)
