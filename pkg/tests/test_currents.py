import numpy as np
import pytest
from dataclasses import fields
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from morawetz.currents import (
    ModeState,
    SphereJet,
    controlled_sphere,
    flux_components,
    k_aux_sphere,
    k_combined_sphere,
    kv0_sphere,
    kv1_sphere,
    kv2_sphere,
    lower_bound_sphere,
    mode_to_jet,
    template_flux,
    zero_jet,
)
from morawetz.geometry import Geometry, MultiplierParams, beta, dmu_drstar, point_from_r, point_from_rstar
from morawetz.multipliers import MultiplierEval, big_F, f_a, f_aux, f_b
from morawetz.verifier import suffices2_lhs


def random_jet(rng, p, n_modes=3, ell_max=12):
    """Jet of a superposition of modes; distinct modes are L^2-orthogonal on
    the sphere, so their jets add."""
    jet = None
    n = np.shape(p.r)
    for _ in range(n_modes):
        ell = int(rng.integers(0, ell_max + 1))
        u, ur, ut = rng.standard_normal((3,) + n)
        j = mode_to_jet(ModeState(ell, u, ur, ut), p)
        jet = j if jet is None else SphereJet(**{f.name: getattr(jet, f.name) + getattr(j, f.name) for f in fields(j)})
    return jet


# ---------------------------------------------------------------------------
# structure
# ---------------------------------------------------------------------------


def _all_ops(g, params):
    def fb(p):
        return f_b(p, params)

    return {
        "kv0": lambda j, p: kv0_sphere(j, fb(p), p, g),
        "kv1": lambda j, p: kv1_sphere(j, fb(p), p, g),
        "kv2": lambda j, p: kv2_sphere(j, fb(p), p, params, g),
        "K": lambda j, p: k_combined_sphere(j, p, params, g)[0],
        "lower": lambda j, p: lower_bound_sphere(j, p, params, g),
        "aux": lambda j, p: k_aux_sphere(j, p, g),
        "controlled": lambda j, p: controlled_sphere(j, p, g, include_time=True),
        "J_t": lambda j, p: flux_components(j, p, params, g, "J")[0],
        "J_r": lambda j, p: flux_components(j, p, params, g, "J")[1],
        "T_t": lambda j, p: flux_components(j, p, params, g, "J_T")[0],
        "aux_r": lambda j, p: flux_components(j, p, params, g, "J_aux")[1],
    }


@pytest.mark.parametrize(
    "name", ["kv0", "kv1", "kv2", "K", "lower", "aux", "controlled", "J_t", "J_r", "T_t", "aux_r"]
)
def test_zero_jet_and_polarization(g, params, rng, name):
    op = _all_ops(g, params)[name]
    p = point_from_rstar(np.linspace(-20, 200, 101), g)
    assert np.all(op(zero_jet(p.r.shape), p) == 0)
    jet = random_jet(rng, p)
    assert_allclose(op(jet.times(4.0), p), 4.0 * op(jet, p), rtol=1e-13, atol=1e-300)


def test_angular_coefficient_identity(g):
    p = point_from_r(np.geomspace(2.0 + 1e-6, 1e6, 10_000), g)
    lhs = dmu_drstar(p) / (2 * p.one_minus_mu) + p.one_minus_mu / p.r
    rhs = (p.r - 3.0) / p.r**2
    scale = np.abs(dmu_drstar(p) / (2 * p.one_minus_mu)) + p.one_minus_mu / p.r
    assert np.all(np.abs(lhs - rhs) <= 1e-12 * scale)


def test_ell0_reduction(g, params, rng):
    p = point_from_rstar(np.linspace(-30, 300, 300), g)
    u, ur, ut = rng.standard_normal((3, 300))
    jet = mode_to_jet(ModeState(0, u, ur, ut), p)
    for name in ("Aang", "Aang2", "B00", "Brr", "Btt", "Bang", "Bcross"):
        assert np.all(getattr(jet, name) == 0)
    expect = p.r**2 * 2 * params.c_star * ur**2 / (params.alpha**2 * p.r**3)
    assert_allclose(k_combined_sphere(jet, p, params, g)[0], expect, rtol=1e-13)


def test_kv1_is_kv0_plus_zeroth_order_trade(g, params, rng):
    # for any f: K^{V,1} - K^{V,0} = r^2 [ (w/2) L - (1/4) Box(w) phi^2 ]
    p = point_from_rstar(np.linspace(-10, 60, 71), g)
    f = MultiplierEval(*(rng.standard_normal(71) for _ in range(4)))
    jet = random_jet(rng, p)
    om, r = p.one_minus_mu, p.r
    w = f.f1 + 2 * om * f.f / r
    L = (jet.Arr - jet.Att) / om + jet.Aang
    from morawetz.currents import _box_w

    diff = kv1_sphere(jet, f, p, g) - kv0_sphere(jet, f, p, g)
    expect = r**2 * (0.5 * w * L - 0.25 * _box_w(f, p, g) * jet.A00)
    assert_allclose(diff, expect, rtol=1e-10, atol=1e-12 * np.max(np.abs(expect)))


def test_kv2_phi_squared_block(g, params):
    # only phi^2 data: completed square leaves f' beta^2 / (1 - mu)
    p = point_from_rstar(np.linspace(-40, 500, 2001), g)
    jet = SphereJet(A00=np.ones_like(p.r))
    fb = f_b(p, params)
    got = kv2_sphere(jet, fb, p, params, g) - p.r**2 * fb.f1 / p.one_minus_mu * beta(p, params) ** 2
    expect = p.r**2 * (big_F(p, params) + p.mu * (3 - 4 * p.mu) / (2 * p.r**3) * fb.f)
    assert_allclose(got, expect, rtol=1e-12, atol=1e-12 * np.max(np.abs(expect)))


def test_completed_square_nonnegative(g, params, rng):
    p = point_from_rstar(np.linspace(-40, 500, 1001), g)
    _, bd = k_combined_sphere(random_jet(rng, p), p, params, g)
    assert np.all(bd.completed_square >= 0)
    assert np.all(bd.rr_square >= 0)
    assert_allclose(
        bd.total, bd.rr_square + bd.angular + bd.zeroth_order + bd.completed_square + bd.F_term, rtol=1e-14
    )


def test_lower_bound_mode_closed_form(g, params, rng):
    # lower bound of a pure-l jet is l(l+1) u^2 / r^4 times the suffices2 left side
    rs = np.linspace(-30, 400, 500)
    p = point_from_rstar(rs, g)
    u = rng.standard_normal(500)
    for ell in (1, 3, 10):
        jet = mode_to_jet(ModeState(ell, u, 0 * u, 0 * u), p)
        lam = ell * (ell + 1)
        expect = lam * u**2 / p.r**4 * suffices2_lhs(rs, params, g)
        got = lower_bound_sphere(jet, p, params, g)
        assert_allclose(got, expect, rtol=1e-9, atol=1e-13 * np.max(np.abs(expect)))


def test_lower_bound_below_K_for_ell_at_least_2(g, params, rng):
    # l = 1 is excluded here on purpose: see the acceptance suite, criterion 5
    rs = np.linspace(-40, 400, 1000)
    p = point_from_rstar(rs, g)
    for ell in (2, 3, 5, 20, 64):
        u, ur, ut = rng.standard_normal((3, 1000))
        jet = mode_to_jet(ModeState(ell, u, ur, ut), p)
        k, bd = k_combined_sphere(jet, p, params, g)
        assert np.all(k - lower_bound_sphere(jet, p, params, g) >= -1e-12 * bd.scale())


def test_kaux_time_coefficient(g):
    p = point_from_rstar(np.linspace(-20, 100, 50), g)
    jet = SphereJet(Att=np.ones_like(p.r))
    assert_allclose(k_aux_sphere(jet, p, g, 1.0), -p.r**2 / (2 * p.r**4), rtol=1e-13)
    assert_allclose(k_aux_sphere(jet, p, g, -1.0), p.r**2 / (2 * p.r**4), rtol=1e-13)


def test_energy_density_convention(g, params, rng):
    p = point_from_rstar(np.linspace(-20, 100, 50), g)
    jet = random_jet(rng, p)
    pt, pr = flux_components(jet, p, params, g, "J_T")
    om = p.one_minus_mu
    expect = p.r**2 * om * (0.5 / om * (jet.Att + jet.Arr) + 0.5 * jet.Aang)
    assert_allclose(pt, expect, rtol=1e-14)
    assert_allclose(pr, p.r**2 * jet.Atr, rtol=1e-14)


def test_controlled_degenerates_at_photon_sphere(g):
    p = point_from_r(np.array([3.0]), g)
    jet = SphereJet(Aang2=np.array([1.0]))
    assert controlled_sphere(jet, p, g)[0] == 0.0


def test_poincare_factor(g):
    p = point_from_rstar(np.array([0.3, 7.0]), g)
    for ell in range(1, 10):
        jet = mode_to_jet(ModeState(ell, np.ones(2), np.zeros(2), np.zeros(2)), p)
        assert_allclose(p.r**2 * jet.Bang / (2 * jet.B00), ell * (ell + 1) / 2, rtol=1e-14)
        v = jet.invariant_violations(p)
        assert all(val <= 1e-14 for val in v.values())


# ---------------------------------------------------------------------------
# sphere quadrature oracle for mode_to_jet
# ---------------------------------------------------------------------------


def _sphere_grid(n_theta=40, n_phi=80):
    z, wz = np.polynomial.legendre.leggauss(n_theta)
    ph = 2 * np.pi * np.arange(n_phi) / n_phi
    Z, PH = np.meshgrid(z, ph, indexing="ij")
    s = np.sqrt(1 - Z**2)
    X = np.stack([s * np.cos(PH), s * np.sin(PH), Z], axis=-1).reshape(-1, 3)
    W = (wz[:, None] * np.full(n_phi, 2 * np.pi / n_phi)).reshape(-1)
    return X, W


# homogeneous harmonic polynomials P = c.x (l = 1) or x.A.x / 2 with tr A = 0 (l = 2)
_POLYS = {
    1: (np.array([0.3, -0.5, 1.0]), None),
    2: (None, np.array([[-0.6, 1.0, 0.0], [1.0, -0.6, 0.7], [0.0, 0.7, 1.2]])),
}


def _quadrature_jet(ell):
    X, W = _sphere_grid()
    c, A = _POLYS[ell]
    if ell == 1:
        P = X @ c
        grad = np.broadcast_to(c, X.shape)
        hess = np.zeros((3, 3))
    else:
        P = 0.5 * np.einsum("ni,ij,nj->n", X, A, X)
        grad = X @ A
        hess = A
    norm = np.sqrt(np.sum(W * P**2))
    P, grad, hess = P / norm, grad / norm, hess / norm
    eye = np.eye(3)
    proj = eye[None] - X[:, :, None] * X[:, None, :]
    gS = grad - ell * P[:, None] * X
    # Hess_S = proj Hess proj - (d_r P) proj on the unit sphere
    HS = proj @ hess @ proj - ell * P[:, None, None] * proj
    eps = np.zeros((3, 3, 3))
    eps[0, 1, 2] = eps[1, 2, 0] = eps[2, 0, 1] = 1
    eps[0, 2, 1] = eps[2, 1, 0] = eps[1, 0, 2] = -1
    # Omega_i P = eps_ijk x_j d_k P, grad_m Omega_i P = eps_imk d_k P + eps_ijk x_j H_mk
    OmP = np.einsum("ijk,nj,nk->ni", eps, X, grad)
    dOm = np.einsum("imk,nk->nim", eps, grad) + np.einsum("ijk,nj,mk->nim", eps, X, hess)
    dOmS = dOm - ell * OmP[:, :, None] * X[:, None, :]
    integ = lambda f: float(np.sum(W * f))
    return {
        "Y2": integ(P**2),
        "grad": integ(np.sum(gS**2, axis=1)),
        "hess": integ(np.sum(HS**2, axis=(1, 2))),
        "om": integ(np.sum(OmP**2, axis=1)),
        "om_grad": integ(np.sum(dOmS**2, axis=(1, 2))),
    }


@pytest.mark.parametrize("ell", [1, 2])
def test_mode_jet_matches_sphere_quadrature(g, ell):
    q = _quadrature_jet(ell)
    r = 4.5
    p = point_from_r(np.array([r]), g)
    u = 0.8
    jet = mode_to_jet(ModeState(ell, np.array([u]), np.array([0.0]), np.array([0.0])), p)
    assert_allclose(q["Y2"], 1.0, rtol=1e-13)
    assert_allclose(jet.Aang, u**2 * q["grad"] / r**2, rtol=1e-12)
    assert_allclose(jet.Aang2, u**2 * q["hess"] / r**4, rtol=1e-12)
    assert_allclose(jet.B00, u**2 * q["om"], rtol=1e-12)
    assert_allclose(jet.Bang, u**2 * q["om_grad"] / r**2, rtol=1e-12)


def test_ell1_closed_form(g):
    p = point_from_r(np.array([5.0]), g)
    jet = mode_to_jet(ModeState(1, np.array([1.5]), np.array([0.0]), np.array([0.0])), p)
    assert_allclose(jet.Aang, 2 * 1.5**2 / 25.0, rtol=1e-15)
    assert_allclose(jet.B00, 2 * 1.5**2, rtol=1e-15)


# ---------------------------------------------------------------------------
# finite-difference divergence oracle on a manufactured (non-solution) field
# ---------------------------------------------------------------------------


def _manufactured(t, s):
    """u = exp(-z^2/2)(1 + sin(t)/5), z = s - 1 - 0.3 t, with exact derivatives."""
    z = s - 1 - 0.3 * t
    G = np.exp(-0.5 * z * z)
    S = 1 + 0.2 * np.sin(t)
    u = G * S
    us = -z * G * S
    uss = (z * z - 1) * G * S
    ut = 0.3 * z * G * S + 0.2 * G * np.cos(t)
    utt = G * (S * (0.09 * z * z - 0.09) + 0.12 * z * np.cos(t) - 0.2 * np.sin(t))
    return u, us, ut, uss, utt


_ELL = 2


def _fluxes(g, params, t, s, which):
    p = point_from_rstar(s, g)
    u, ur, ut, _, _ = _manufactured(t, s)
    j = mode_to_jet(ModeState(_ELL, u, ur, ut), p)
    fb = f_b(p, params)
    if which == "V0":
        return template_flux(j, fb, p, 0)
    if which == "V1":
        return template_flux(j, fb, p, 1)
    if which == "V2":
        return template_flux(j, fb, p, 2, params)
    if which == "Va0":
        return template_flux(j, f_a(p, params, g), p, 0)
    return flux_components(j, p, params, g, which)


def _kform(g, params, t, s, which):
    """K plus the sphere integral of Box(phi) times the multiplier."""
    p = point_from_rstar(s, g)
    u, ur, ut, urr, utt = _manufactured(t, s)
    j = mode_to_jet(ModeState(_ELL, u, ur, ut), p)
    om, r = p.one_minus_mu, p.r
    lam = _ELL * (_ELL + 1.0)
    box = (-utt + urr + 2 * om * ur / r) / om - lam * u / r**2

    def ident(f, order, weight=1.0):
        w = f.f1 + 2 * om * f.f / r
        val = box * f.f * ur + (0.5 * box * w * u if order >= 1 else 0.0)
        return r * r * val * weight

    fb = f_b(p, params)
    fa = f_a(p, params, g)
    if which == "V0":
        return kv0_sphere(j, fb, p, g) + ident(fb, 0)
    if which == "V1":
        return kv1_sphere(j, fb, p, g) + ident(fb, 1)
    if which == "V2":
        return kv2_sphere(j, fb, p, params, g) + ident(fb, 1)
    if which == "Va0":
        return kv0_sphere(j, fa, p, g) + ident(fa, 0)
    if which == "J":
        return k_combined_sphere(j, p, params, g)[0] + ident(fa, 0) + ident(fb, 1, lam)
    if which == "J_aux":
        return k_aux_sphere(j, p, g) + ident(f_aux(p, g), 0)
    if which == "J_T":
        return r * r * box * ut
    raise AssertionError(which)


@pytest.mark.parametrize("which", ["V0", "V1", "V2", "Va0", "J", "J_aux", "J_T"])
def test_divergence_oracle(which):
    g = Geometry(1.0)
    # small alpha keeps every term of the same order on this grid
    params = MultiplierParams.from_alpha(7.0, g)
    t0, s0 = 0.7, np.array([-3.0, 0.4, 2.0, 5.0])
    errs = []
    for h in (1e-2, 5e-3, 2.5e-3):
        om = point_from_rstar(s0, g).one_minus_mu
        dPr = (_fluxes(g, params, t0, s0 + h, which)[1] - _fluxes(g, params, t0, s0 - h, which)[1]) / (2 * h)
        dPt = (_fluxes(g, params, t0 + h, s0, which)[0] - _fluxes(g, params, t0 - h, s0, which)[0]) / (2 * h)
        div = (dPr - dPt) / om
        errs.append(np.max(np.abs(div - _kform(g, params, t0, s0, which))) / np.max(np.abs(div)))
    assert errs[-1] < 1e-4
    for a, b in zip(errs, errs[1:]):
        assert 3.2 <= a / b <= 4.8


# ---------------------------------------------------------------------------
# nonnegativity at the certified alpha
# ---------------------------------------------------------------------------


def test_K_nonnegative_on_mode_superpositions(g, params, rng):
    p = point_from_rstar(np.linspace(-40, 400, 1000), g)
    for _ in range(20):
        k, bd = k_combined_sphere(random_jet(rng, p, n_modes=4, ell_max=64), p, params, g)
        assert np.all(k >= -1e-12 * bd.scale())


def test_kv1_variant_is_indefinite(g, params):
    # the literal J^{X^b,1} bookkeeping is not sign-definite; kept for comparison
    rs = np.linspace(-10, 10, 2001)
    p = point_from_rstar(rs, g)
    worst = np.inf
    for ell in (1, 2, 5):
        for ur in (-1.0, 0.0, 1.0):
            jet = mode_to_jet(ModeState(ell, np.ones_like(rs), ur * np.ones_like(rs), 0 * rs), p)
            k, bd = k_combined_sphere(jet, p, params, g, variant="kv1")
            worst = min(worst, np.min(k / bd.scale()))
    assert worst < -1e-3


@settings(max_examples=200, deadline=None)
@given(
    rs=st.floats(min_value=-60.0, max_value=2000.0),
    ell=st.integers(min_value=0, max_value=64),
    v=st.tuples(*(st.floats(min_value=-1e3, max_value=1e3) for _ in range(3))),
)
def test_K_nonnegative_property(rs, ell, v):
    g = Geometry(1.0)
    params = MultiplierParams.from_alpha(10 ** (17 / 8), g)
    p = point_from_rstar(np.array([rs]), g)
    jet = mode_to_jet(ModeState(ell, *(np.array([x]) for x in v)), p)
    k, bd = k_combined_sphere(jet, p, params, g)
    assert k[0] >= -1e-12 * bd.scale()[0]
