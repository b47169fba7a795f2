"""Radial multiplier functions and the scalar functions of the positivity proof.

Derivatives marked ``f1, f2, f3`` are with respect to r*.  All of them are
closed forms: the proof's cancellations (f^b = 0 at the photon sphere,
F = 0 at x = +/-alpha) must survive to rounding level.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import (
    Geometry,
    MultiplierParams,
    RadialPoint,
    point_from_r,
    x_of,
)

__all__ = [
    "MultiplierEval",
    "choose_cstar",
    "f_a",
    "f_b",
    "f_aux",
    "big_F",
    "big_F_composite",
    "H_of_r",
    "dH_dr",
    "d2H_dr2",
    "fb_lower_bound_constant",
]


@dataclass(frozen=True)
class MultiplierEval:
    """Value and first three r*-derivatives of a radial multiplier."""

    f: np.ndarray
    f1: np.ndarray
    f2: np.ndarray
    f3: np.ndarray


def choose_cstar(alpha, g: Geometry):
    """C_* fixed by dH/dr = 0 at r = 3M.

    Equal to 9 alpha^2 M^3 / (2((alpha + sqrt(alpha))^2 + alpha^2)), which
    tends to 9M^3/4 as alpha grows.
    """
    alpha = float(alpha)
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    M = g.M
    return float(9.0 * alpha**2 * M**3 / (2.0 * ((alpha + np.sqrt(alpha)) ** 2 + alpha**2)))


def f_a(p: RadialPoint, params: MultiplierParams, g: Geometry) -> MultiplierEval:
    """f^a = -C_*/(alpha^2 r^2).  Uses dr/dr* = 1 - mu."""
    a2 = params.alpha**2
    C = params.c_star
    r, om = p.r, p.one_minus_mu
    M = g.M
    f = -C / (a2 * r * r)
    f1 = 2.0 * C * om / (a2 * r**3)
    f2 = 2.0 * C / a2 * (2.0 * M * om / r**5 - 3.0 * om * om / r**4)
    f3 = (2.0 * C / a2) * (
        2.0 * M * (2.0 * M * om / r**7 - 5.0 * om * om / r**6)
        - 3.0 * (4.0 * M * om * om / r**6 - 4.0 * om**3 / r**5)
    )
    return MultiplierEval(f, f1, f2, f3)


def f_b(p: RadialPoint, params: MultiplierParams) -> MultiplierEval:
    """f^b = (1/alpha)(atan(x/alpha) - atan(-1 - alpha^{-1/2})).

    The arctangent difference is evaluated as a single atan2 so that f^b
    vanishes exactly at r* = 0 and keeps full relative accuracy nearby.
    """
    a = params.alpha
    x = x_of(p.r_star, params)
    x0 = -params.x_offset
    # atan(u) - atan(v) = atan2(u - v, 1 + u v); here u - v = r*/alpha
    f = np.arctan2(np.asarray(p.r_star, dtype=float) / a, 1.0 + x * x0 / (a * a)) / a
    q = a * a + x * x
    f1 = 1.0 / q
    f2 = -2.0 * x / q**2
    f3 = (6.0 * x * x - 2.0 * a * a) / q**3
    return MultiplierEval(f, f1, f2, f3)


def f_aux(p: RadialPoint, g: Geometry, sign: float = 1.0) -> MultiplierEval:
    """sign * r^{-3}, the auxiliary multiplier X^aux = r^{-3} d/dr*."""
    r, om = p.r, p.one_minus_mu
    M = g.M
    f = 1.0 / r**3
    f1 = -3.0 * om / r**4
    # d/dr*(om) = 2M om / r^2
    f2 = -3.0 * (2.0 * M * om / r**6 - 4.0 * om * om / r**5)
    f3 = -3.0 * (
        2.0 * M * (2.0 * M * om / r**8 - 6.0 * om * om / r**7)
        - 4.0 * (4.0 * M * om * om / r**7 - 5.0 * om**3 / r**6)
    )
    return MultiplierEval(sign * f, sign * f1, sign * f2, sign * f3)


def big_F(p: RadialPoint, params: MultiplierParams):
    """Reduced form F = (x^2 - alpha^2) / (2(1-mu)(x^2 + alpha^2)^3)."""
    a = params.alpha
    x = x_of(p.r_star, params)
    q = a * a + x * x
    return (x - a) * (x + a) / (2.0 * p.one_minus_mu * q**3)


def big_F_composite(p: RadialPoint, params: MultiplierParams):
    """F from its definition in terms of (f^b)', (f^b)'', (f^b)'''."""
    a = params.alpha
    x = x_of(p.r_star, params)
    q = a * a + x * x
    fb = f_b(p, params)
    return -0.25 / p.one_minus_mu * (fb.f3 + 4.0 * fb.f2 * x / q + 4.0 * a * a * fb.f1 / q**2)


def _H_parts(r, params, g):
    p = point_from_r(r, g)
    return p, f_b(p, params)


def H_of_r(r, params: MultiplierParams, g: Geometry):
    """H(r) = M f^b (3r^2 - 8Mr) - 2 C_* (r - 3M)/alpha^2.

    The first term is f^b mu (3 - 4 mu) r^3 / 2 written without the
    cancellation-prone factor (3 - 4 mu).
    """
    p, fb = _H_parts(r, params, g)
    M = g.M
    r = p.r
    return M * fb.f * (3.0 * r * r - 8.0 * M * r) - 2.0 * params.c_star * (r - 3.0 * M) / params.alpha**2


def dH_dr(r, params: MultiplierParams, g: Geometry):
    p, fb = _H_parts(r, params, g)
    M = g.M
    r, om = p.r, p.one_minus_mu
    return (
        M * fb.f1 * (3.0 * r * r - 8.0 * M * r) / om
        + 2.0 * M * fb.f * (3.0 * r - 4.0 * M)
        - 2.0 * params.c_star / params.alpha**2
    )


def d2H_dr2(r, params: MultiplierParams, g: Geometry, parts: bool = False):
    """Second r-derivative of H.

    With ``parts=True`` returns the four summands separately, in the order
    ((f^b)'' term, (f^b)' term, (f^b)' mu-derivative term, 6 M f^b).
    """
    p, fb = _H_parts(r, params, g)
    M = g.M
    r, om = p.r, p.one_minus_mu
    quad = 3.0 * r * r - 8.0 * M * r
    t1 = M * fb.f2 * quad / om**2
    t2 = 4.0 * M * fb.f1 * (3.0 * r - 4.0 * M) / om
    t3 = -2.0 * M * M * fb.f1 * quad / (r * r * om**2)
    t4 = 6.0 * M * fb.f
    if parts:
        return t1, t2, t3, t4
    return t1 + t2 + t3 + t4


def fb_lower_bound_constant(params: MultiplierParams, p: RadialPoint):
    """Largest c with f^b >= (c/alpha) min(r/alpha, 1) on the sampled points."""
    fb = f_b(p, params).f
    a = params.alpha
    floor = np.minimum(p.r / a, 1.0) / a
    return float(np.min(fb / floor))
