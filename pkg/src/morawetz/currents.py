"""Multiplier currents and their divergences, integrated over spheres.

Conventions (fixed here, used everywhere):

* Every ``*_sphere`` quantity is an integral over the unit sphere of the
  pointwise quantity times r^2, i.e. ``int (...) r^2 dA``.
* g^{ab} d_a phi d_b phi = ((d_{r*} phi)^2 - (d_t phi)^2)/(1 - mu) + |grad_S phi|^2,
  from the metric (1 - mu)(-dt^2 + dr*^2) + r^2 dsigma.
* Flux components are ``(P_t, P_r) = (int J_t r^2 dA, int J_{r*} r^2 dA)``.
  With these, (1 - mu) * K_sphere = d_{r*} P_r - d_t P_t, and the spacetime
  volume element is (1 - mu) r^2 dt dr* dA.

The Omega_i block of a jet is stored already summed over i = 1, 2, 3.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace

import numpy as np

from .geometry import Geometry, MultiplierParams, RadialPoint, beta, d2mu_drstar2, dmu_drstar, x_of
from .multipliers import MultiplierEval, big_F, f_a, f_aux, f_b

__all__ = [
    "SphereJet",
    "ModeState",
    "DivergenceBreakdown",
    "kv0_sphere",
    "kv1_sphere",
    "kv2_sphere",
    "k_combined_sphere",
    "lower_bound_sphere",
    "k_aux_sphere",
    "controlled_sphere",
    "template_flux",
    "flux_components",
    "mode_to_jet",
]


@dataclass(frozen=True)
class SphereJet:
    """Sphere integrals (unit-sphere measure) of quadratic 2-jet data of phi.

    ``A*`` fields concern phi itself, ``B*`` fields the rotated fields
    Omega_i phi summed over i.  ``Atr``/``Acrosst`` (and their B analogues)
    only enter flux components, never a divergence.
    """

    A00: np.ndarray = 0.0
    Arr: np.ndarray = 0.0
    Att: np.ndarray = 0.0
    Aang: np.ndarray = 0.0
    Aang2: np.ndarray = 0.0
    Across: np.ndarray = 0.0
    B00: np.ndarray = 0.0
    Brr: np.ndarray = 0.0
    Btt: np.ndarray = 0.0
    Bang: np.ndarray = 0.0
    Bcross: np.ndarray = 0.0
    Atr: np.ndarray = 0.0
    Acrosst: np.ndarray = 0.0
    Btr: np.ndarray = 0.0
    Bcrosst: np.ndarray = 0.0

    def times(self, c) -> "SphereJet":
        """Jet of sqrt(c) * phi."""
        return SphereJet(**{fl.name: c * getattr(self, fl.name) for fl in fields(self)})

    def phi_block(self) -> "_Block":
        return _Block(self.A00, self.Arr, self.Att, self.Aang, self.Across, self.Atr, self.Acrosst)

    def omega_block(self) -> "_Block":
        return _Block(self.B00, self.Brr, self.Btt, self.Bang, self.Bcross, self.Btr, self.Bcrosst)

    def invariant_violations(self, p: RadialPoint) -> dict:
        """Largest violation of each jet invariant (<= 0 means satisfied).

        Violations are scaled by the size of the quantities involved.
        """
        r2 = p.r * p.r
        sq = (self.A00, self.Arr, self.Att, self.Aang, self.Aang2, self.B00, self.Brr, self.Btt, self.Bang)
        neg = max(float(np.max(-np.asarray(q))) for q in sq)
        cs_a = np.asarray(self.Across) ** 2 - np.asarray(self.A00) * self.Arr
        cs_b = np.asarray(self.Bcross) ** 2 - np.asarray(self.B00) * self.Brr
        ident = np.abs(np.asarray(self.B00) - r2 * self.Aang)
        poinc = 2.0 * np.asarray(self.B00) - r2 * self.Bang
        scale_a = np.asarray(self.A00) * self.Arr + 1e-300
        scale_b = np.asarray(self.B00) * self.Brr + 1e-300
        scale_i = np.abs(self.B00) + np.abs(r2 * self.Aang) + 1e-300
        return {
            "nonnegative": neg,
            "cauchy_schwarz_phi": float(np.max(cs_a / scale_a)),
            "cauchy_schwarz_omega": float(np.max(cs_b / scale_b)),
            "omega_identity": float(np.max(ident / scale_i)),
            "poincare": float(np.max(poinc / (np.abs(r2 * self.Bang) + 1e-300))),
        }


@dataclass(frozen=True)
class _Block:
    q00: np.ndarray
    qrr: np.ndarray
    qtt: np.ndarray
    qang: np.ndarray
    qcross: np.ndarray
    qtr: np.ndarray
    qcrosst: np.ndarray


@dataclass(frozen=True)
class ModeState:
    """phi = u(t, r*) Y_l with Y_l a unit-normalised spherical harmonic."""

    ell: int
    u: np.ndarray
    ur: np.ndarray
    ut: np.ndarray


@dataclass(frozen=True)
class DivergenceBreakdown:
    rr_square: np.ndarray
    angular: np.ndarray
    zeroth_order: np.ndarray
    completed_square: np.ndarray
    F_term: np.ndarray
    aux: np.ndarray
    total: np.ndarray

    @classmethod
    def from_parts(cls, **parts) -> "DivergenceBreakdown":
        parts.setdefault("aux", 0.0)
        total = sum(parts[k] for k in ("rr_square", "angular", "zeroth_order", "completed_square", "F_term", "aux"))
        return cls(total=total, **parts)

    def scale(self):
        """Sum of absolute values of the parts; the natural size of K."""
        return (
            np.abs(self.rr_square)
            + np.abs(self.angular)
            + np.abs(self.zeroth_order)
            + np.abs(self.completed_square)
            + np.abs(self.F_term)
            + np.abs(self.aux)
        )


def mode_to_jet(m: ModeState, p: RadialPoint) -> SphereJet:
    """Sphere integrals for phi = u Y_l.

    Uses int |grad_S Y|^2 = lam, int |Hess_S Y|^2 = lam(lam - 1) on the unit
    sphere, and sum_i int (Omega_i Y)^2 = lam, sum_i int |grad_S Omega_i Y|^2 = lam^2.
    """
    lam = float(m.ell * (m.ell + 1))
    u, ur, ut = (np.asarray(v, dtype=float) for v in (m.u, m.ur, m.ut))
    r2 = p.r * p.r
    return SphereJet(
        A00=u * u,
        Arr=ur * ur,
        Att=ut * ut,
        Aang=lam * u * u / r2,
        Aang2=lam * (lam - 1.0) * u * u / (r2 * r2),
        Across=u * ur,
        B00=lam * u * u,
        Brr=lam * ur * ur,
        Btt=lam * ut * ut,
        Bang=lam * lam * u * u / r2,
        Bcross=lam * u * ur,
        Atr=ut * ur,
        Acrosst=u * ut,
        Btr=lam * ut * ur,
        Bcrosst=lam * u * ut,
    )


def _angular_coefficient(p, g):
    # mu'/(2(1 - mu)) + (1 - mu)/r == (r - 3M)/r^2
    return (p.r - 3.0 * g.M) / (p.r * p.r)


def _w(f: MultiplierEval, p):
    """w = f' + 2(1 - mu) f / r and its r*-derivative."""
    om, r = p.one_minus_mu, p.r
    w = f.f1 + 2.0 * om * f.f / r
    d_om_over_r = om * (p.mu / (r * r) - om / (r * r))  # (om/r)' with 2M/r^3 = mu/r^2
    dw = f.f2 + 2.0 * d_om_over_r * f.f + 2.0 * om / r * f.f1
    return w, dw


def _kv0_block(b: _Block, f: MultiplierEval, p, g):
    om, r = p.one_minus_mu, p.r
    w, _ = _w(f, p)
    lagr = (b.qrr - b.qtt) / om + b.qang
    return r * r * (f.f1 * b.qrr / om + f.f * _angular_coefficient(p, g) * b.qang - 0.5 * w * lagr)


def _box_w(f: MultiplierEval, p, g):
    """Box of w = f' + 2(1-mu)f/r, expanded in f, f', f'', f'''."""
    om, r = p.one_minus_mu, p.r
    mup = dmu_drstar(p)
    mupp = d2mu_drstar2(p, g)
    return f.f3 / om + 4.0 / r * f.f2 - 4.0 * mup / (r * om) * f.f1 + 2.0 / (om * r) * (mup * om / r - mupp) * f.f


def _kv1_block(b: _Block, f: MultiplierEval, p, g):
    om, r = p.one_minus_mu, p.r
    return r * r * (
        f.f1 * b.qrr / om + f.f * _angular_coefficient(p, g) * b.qang - 0.25 * _box_w(f, p, g) * b.q00
    )


def _kv2_coefficients(f: MultiplierEval, p, params, g):
    """(beta, F-type coefficient, zeroth-order coefficient) of K^{V,2}."""
    om, r, mu = p.one_minus_mu, p.r, p.mu
    a = params.alpha
    x = x_of(p.r_star, params)
    q = a * a + x * x
    bet = beta(p, params)
    fcoef = -0.25 / om * (f.f3 + 4.0 * f.f2 * x / q + 4.0 * a * a * f.f1 / q**2)
    zcoef = -mu * f.f * (4.0 * mu - 3.0) / (2.0 * r**3)
    return bet, fcoef, zcoef


def _kv2_parts(b: _Block, f: MultiplierEval, p, params, g):
    om, r = p.one_minus_mu, p.r
    bet, fcoef, zcoef = _kv2_coefficients(f, p, params, g)
    r2 = r * r
    square = r2 * f.f1 / om * (b.qrr + 2.0 * bet * b.qcross + bet * bet * b.q00)
    ang = r2 * f.f * _angular_coefficient(p, g) * b.qang
    return square, ang, r2 * fcoef * b.q00, r2 * zcoef * b.q00


def kv0_sphere(jet: SphereJet, f: MultiplierEval, p: RadialPoint, g: Geometry):
    """Sphere integral of K^{V,0} for V = f d/dr*, applied to phi."""
    return _kv0_block(jet.phi_block(), f, p, g)


def kv1_sphere(jet: SphereJet, f: MultiplierEval, p: RadialPoint, g: Geometry):
    """Sphere integral of K^{V,1}: K^{V,0} with the Lagrangian term traded for
    -(1/4) Box(f' + 2(1-mu)f/r) phi^2."""
    return _kv1_block(jet.phi_block(), f, p, g)


def kv2_sphere(jet: SphereJet, f: MultiplierEval, p: RadialPoint, params: MultiplierParams, g: Geometry):
    """Sphere integral of K^{V,2}, the completed-square form with beta."""
    return sum(_kv2_parts(jet.phi_block(), f, p, params, g))


def k_combined_sphere(
    jet: SphereJet,
    p: RadialPoint,
    params: MultiplierParams,
    g: Geometry,
    variant: str = "kv2",
):
    """K for J = J^{X^a,0}(phi) + sum_i J^{X^b,2}(Omega_i phi).

    ``variant="kv1"`` builds the Omega_i part from J^{X^b,1} instead.  That
    form is not sign-definite; it is kept for comparison only.

    Returns ``(total, DivergenceBreakdown)``.
    """
    fa = f_a(p, params, g)
    fb = f_b(p, params)
    om, r = p.one_minus_mu, p.r
    r2 = r * r
    # 2 (f^a)' + 4 (1-mu) f^a / r == 0, so K^{X^a,0} has no Lagrangian term
    rr = r2 * fa.f1 * jet.Arr / om
    ang_a = r2 * fa.f * _angular_coefficient(p, g) * jet.Aang
    ob = jet.omega_block()
    if variant == "kv2":
        square, ang_b, fterm, zeroth = _kv2_parts(ob, fb, p, params, g)
        bd = DivergenceBreakdown.from_parts(
            rr_square=rr,
            angular=ang_a + ang_b,
            zeroth_order=zeroth,
            completed_square=square,
            F_term=fterm,
        )
    elif variant == "kv1":
        bd = DivergenceBreakdown.from_parts(
            rr_square=rr,
            angular=ang_a + r2 * fb.f * _angular_coefficient(p, g) * ob.qang,
            zeroth_order=-0.25 * r2 * _box_w(fb, p, g) * ob.q00,
            completed_square=r2 * fb.f1 * ob.qrr / om,
            F_term=np.zeros_like(np.asarray(rr)),
        )
    else:
        raise ValueError(f"unknown variant {variant!r}")
    return bd.total, bd


def lower_bound_sphere(jet: SphereJet, p: RadialPoint, params: MultiplierParams, g: Geometry):
    """Right-hand side of the pointwise lower bound for K, after Poincare.

    sum_i [ f^b (r-3M)/r^2 |grad Omega_i phi|^2 + (f^b mu(3-4mu)/(2r^3) + F)(Omega_i phi)^2 ]
        - 2 C_* (r-3M)/(alpha^2 r^4) |grad phi|^2,

    with |grad Omega_i phi|^2 replaced by its Poincare floor 2 (Omega_i phi)^2 / r^2
    (valid because f^b (r - 3M) >= 0).
    """
    fb = f_b(p, params).f
    M = g.M
    r = p.r
    r2 = r * r
    F = big_F(p, params)
    # mu(3 - 4mu)/(2 r^3) = M (3r - 8M)/r^5
    zeroth = fb * M * (3.0 * r - 8.0 * M) / r**5
    omega_part = (2.0 * fb * (r - 3.0 * M) / (r2 * r2) + zeroth + F) * jet.B00
    fa_part = -2.0 * params.c_star * (r - 3.0 * M) / (params.alpha**2 * r2 * r2) * jet.Aang
    return r2 * (omega_part + fa_part)


def k_aux_sphere(jet: SphereJet, p: RadialPoint, g: Geometry, sign: float = 1.0):
    """K^{X^aux,0} with X^aux = sign * r^{-3} d/dr*."""
    return kv0_sphere(jet, f_aux(p, g, sign), p, g)


def controlled_sphere(jet: SphereJet, p: RadialPoint, g: Geometry, include_time: bool = False):
    """Weighted derivative norm bounded by K (and by K + K^aux with the
    (d_t phi)^2 / r^4 term when ``include_time``)."""
    r, om = p.r, p.one_minus_mu
    M = g.M
    val = (
        jet.Arr / r**3
        + (r - 3.0 * M) ** 2 / r * jet.Aang2
        + r**3 / (om * (np.abs(p.r_star) + 1.0) ** 4) * jet.Aang
    )
    if include_time:
        val = val + jet.Att / r**4
    return r * r * val


def _template_flux_block(b: _Block, f: MultiplierEval, p, order: int, params=None):
    om, r = p.one_minus_mu, p.r
    r2 = r * r
    pt = f.f * b.qtr
    pr = f.f * (0.5 * b.qrr + 0.5 * b.qtt - 0.5 * om * b.qang)
    if order >= 1:
        w, dw = _w(f, p)
        pt = pt + 0.5 * w * b.qcrosst
        pr = pr + 0.5 * w * b.qcross - 0.25 * dw * b.q00
    if order == 2:
        # divergence of (f'/(f(1-mu))) beta V_mu phi^2; V_{r*} = (1-mu) f
        pr = pr + f.f1 * beta(p, params) * b.q00
    return r2 * pt, r2 * pr


def template_flux(jet: SphereJet, f: MultiplierEval, p: RadialPoint, order: int, params=None, block="phi"):
    """(P_t, P_r) of J^{V,order} for V = f d/dr*, on phi or on the Omega block."""
    if order not in (0, 1, 2):
        raise ValueError("order must be 0, 1 or 2")
    if order == 2 and params is None:
        raise ValueError("order 2 needs MultiplierParams for beta")
    b = jet.phi_block() if block == "phi" else jet.omega_block()
    return _template_flux_block(b, f, p, order, params)


def flux_components(
    jet: SphereJet,
    p: RadialPoint,
    params: MultiplierParams,
    g: Geometry,
    which: str = "J",
    aux_sign: float = 1.0,
):
    """Sphere-integrated (time, r*) components (P_t, P_r) of a named current.

    ``which`` is one of ``"J"`` (the combined current), ``"J_aux"`` or
    ``"J_T"`` (the Killing energy current, T = d/dt).
    """
    if which == "J":
        pt_a, pr_a = _template_flux_block(jet.phi_block(), f_a(p, params, g), p, 0)
        pt_b, pr_b = _template_flux_block(jet.omega_block(), f_b(p, params), p, 2, params)
        return pt_a + pt_b, pr_a + pr_b
    if which == "J_aux":
        return _template_flux_block(jet.phi_block(), f_aux(p, g, aux_sign), p, 0)
    if which == "J_T":
        r2 = p.r * p.r
        pt = 0.5 * (jet.Att + jet.Arr) + 0.5 * p.one_minus_mu * jet.Aang
        return r2 * pt, r2 * np.asarray(jet.Atr, dtype=float)
    raise ValueError(f"unknown current {which!r}")


def zero_jet(shape=()) -> SphereJet:
    z = np.zeros(shape)
    return SphereJet(**{fl.name: z for fl in fields(SphereJet)})


def with_fields(jet: SphereJet, **kw) -> SphereJet:
    return replace(jet, **kw)
