"""Schwarzschild exterior background: mu, the tortoise coordinate and its inverse.

Everything here is vectorised over numpy arrays.  The tortoise coordinate is
normalised so that the photon sphere r = 3M sits at r* = 0:

    r* = r + 2M ln(r - 2M) - 3M - 2M ln M = (r - 3M) + 2M ln((r - 2M)/M)

Near the horizon the areal radius r is indistinguishable from 2M in double
precision, so the inversion solves for y = r - 2M in log variables and
``one_minus_mu`` is carried as y/r rather than recomputed from r.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "Geometry",
    "RadialPoint",
    "MultiplierParams",
    "InversionError",
    "rstar_of_r",
    "r_of_rstar",
    "point_from_r",
    "point_from_rstar",
    "x_of",
    "beta",
    "dmu_drstar",
]

NEWTON_MAX_STEPS = 100
INVERSION_RTOL = 1e-12


class InversionError(RuntimeError):
    """Newton inversion of r*(r) failed; carries the iteration trace."""

    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class Geometry:
    """Exterior Schwarzschild of mass M (geometric units)."""

    M: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.M) and self.M > 0):
            raise ValueError(f"mass must be positive, got {self.M!r}")

    @property
    def photon_sphere(self) -> float:
        return 3.0 * self.M

    @property
    def horizon(self) -> float:
        return 2.0 * self.M


@dataclass(frozen=True)
class RadialPoint:
    """Radial data at one or many points; fields may be scalars or arrays."""

    r: np.ndarray
    r_star: np.ndarray
    mu: np.ndarray
    one_minus_mu: np.ndarray

    def __len__(self):
        return np.size(self.r)


@dataclass(frozen=True)
class MultiplierParams:
    """The large parameter alpha and the constant C_* tied to it.

    Build with :meth:`from_alpha`; the constructor accepts any c_star so the
    tests can probe inadmissible pairs.
    """

    alpha: float
    c_star: float

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha!r}")

    @property
    def x_offset(self) -> float:
        return self.alpha + np.sqrt(self.alpha)

    @classmethod
    def from_alpha(cls, alpha: float, g: Geometry) -> "MultiplierParams":
        from .multipliers import choose_cstar

        return cls(float(alpha), choose_cstar(alpha, g))


def _check_exterior(r, g):
    r = np.asarray(r, dtype=float)
    if np.any(~(r > 2.0 * g.M)):
        raise ValueError("areal radius must satisfy r > 2M")
    return r


def rstar_of_r(r, g: Geometry):
    """Tortoise coordinate of areal radius ``r`` (r > 2M), with r*(3M) = 0."""
    r = _check_exterior(r, g)
    M = g.M
    out = (r - 3.0 * M) + 2.0 * M * np.log((r - 2.0 * M) / M)
    return out if out.ndim else float(out)


def _log_y_of_rstar(rs, M):
    """Solve y + 2M ln(y/M) - M = r* for s = ln(y/M), y = r - 2M.

    g(s) = M e^s + 2M s - M - r* is convex and increasing, so after the first
    Newton step every iterate lies on the right of the root and the sequence
    decreases monotonically.
    """
    rs = np.asarray(rs, dtype=float)
    if np.any(~np.isfinite(rs)):
        raise ValueError("r_star must be finite")
    # seeds: y ~ r* for large r*, y ~ M exp((r* + M)/2M) deep in the throat
    s = np.where(
        rs > 2.0 * M,
        np.log(np.maximum(rs, 2.0 * M) / M),
        (rs + M) / (2.0 * M),
    )
    trace = []
    converged = np.zeros(rs.shape, dtype=bool)
    for _ in range(NEWTON_MAX_STEPS):
        es = np.exp(s)
        resid = M * es + 2.0 * M * s - M - rs
        step = resid / (M * es + 2.0 * M)
        s = s - step
        trace.append(float(np.max(np.abs(step), initial=0.0)))
        # s-step of size eps is a relative change of eps in y = r - 2M
        converged = np.abs(step) <= 0.25 * INVERSION_RTOL
        if np.all(converged):
            return s, trace
    bad = ~converged
    s = s.copy()
    s[bad] = _bisect_log_y(rs[bad], M)
    return s, trace


def _bisect_log_y(rs, M):
    rs = np.atleast_1d(rs)
    lo = np.minimum((rs - 1.0) / (2.0 * M), -1.0) - 1.0
    hi = np.log(np.maximum(np.abs(rs), 1.0) / M + 3.0) + 1.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        f = M * np.exp(mid) + 2.0 * M * mid - M - rs
        lo = np.where(f < 0, mid, lo)
        hi = np.where(f < 0, hi, mid)
    return 0.5 * (lo + hi)


def r_of_rstar(r_star, g: Geometry):
    """Areal radius r > 2M with rstar_of_r(r) == r_star."""
    s, _ = _log_y_of_rstar(r_star, g.M)
    out = 2.0 * g.M + g.M * np.exp(s)
    return out if np.ndim(out) else float(out)


def point_from_rstar(r_star, g: Geometry) -> RadialPoint:
    r_star = np.asarray(r_star, dtype=float)
    s, _ = _log_y_of_rstar(r_star, g.M)
    y = g.M * np.exp(s)
    r = 2.0 * g.M + y
    return RadialPoint(r=r, r_star=r_star, mu=2.0 * g.M / r, one_minus_mu=y / r)


def point_from_r(r, g: Geometry) -> RadialPoint:
    r = _check_exterior(r, g)
    y = r - 2.0 * g.M
    return RadialPoint(
        r=r,
        r_star=np.asarray(rstar_of_r(r, g)),
        mu=2.0 * g.M / r,
        one_minus_mu=y / r,
    )


def x_of(r_star, params: MultiplierParams):
    """x = r* - alpha - sqrt(alpha)."""
    return np.asarray(r_star, dtype=float) - params.x_offset


def beta(p: RadialPoint, params: MultiplierParams):
    """beta = (1 - mu)/r - x/(alpha^2 + x^2)."""
    x = x_of(p.r_star, params)
    return p.one_minus_mu / p.r - x / (params.alpha**2 + x * x)


def dmu_drstar(p: RadialPoint):
    """d(mu)/dr* = -(mu/r)(1 - mu)."""
    return -(p.mu / p.r) * p.one_minus_mu


def d2mu_drstar2(p: RadialPoint, g: Geometry):
    M = g.M
    om = p.one_minus_mu
    return -4.0 * M * M * om / p.r**4 + 4.0 * M * om * om / p.r**3
