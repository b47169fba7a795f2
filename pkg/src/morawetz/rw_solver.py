"""Single-mode Regge-Wheeler evolution and the spacetime integral identity.

For phi = u(t, r*) Y_l the variable psi = r u solves

    psi_tt = psi_{r*r*} - V_l psi,   V_l = (1 - mu)(l(l+1)/r^2 + 2M/r^3).

It is evolved with the second-order leapfrog scheme on a uniform r* grid.
The grid is padded past the domain of dependence of the diagnostic window,
so Dirichlet ends never influence the stored data.

Integration regions are trapezoids bounded by two constant-t slices and two
outgoing/ingoing null lines (r* +/- t = const), which is the shape on which
the divergence identity is checked:

    bulk int (1-mu) K~ dt dr*  =  E(t1) - E(t2) + int (P_r - P_t)|_right dt
                                   - int (P_r + P_t)|_left dt

with E(t) = int P_t dr* and (P_t, P_r) the sphere-integrated flux components.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .currents import (
    SphereJet,
    ModeState,
    controlled_sphere,
    flux_components,
    k_aux_sphere,
    k_combined_sphere,
    lower_bound_sphere,
    mode_to_jet,
)
from .geometry import Geometry, MultiplierParams, point_from_rstar

__all__ = [
    "rw_potential",
    "Bump",
    "InitialData",
    "EvolutionConfig",
    "FieldHistory",
    "InstabilityError",
    "evolve",
    "assemble_jets",
    "TrapezoidRegion",
    "FluxBalance",
    "bulk_integral",
    "boundary_flux",
    "data_norm",
    "theorem1_ratio",
    "random_ensemble",
    "run_ensemble",
]

INSTABILITY_FACTOR = 10.0


def rw_potential(r_star, ell, g: Geometry):
    """V_l = (1 - mu)(l(l+1)/r^2 + 2M/r^3)."""
    p = point_from_rstar(r_star, g)
    lam = ell * (ell + 1)
    return p.one_minus_mu * (lam / p.r**2 + 2.0 * g.M / p.r**3)


class InstabilityError(RuntimeError):
    def __init__(self, message, diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass(frozen=True)
class Bump:
    """amplitude * profile((x - center)/width); ``shape`` "bump" is the
    compactly supported exp(-1/(1-s^2)), "gaussian" is exp(-s^2)."""

    center: float
    width: float
    amplitude: float = 1.0
    shape: str = "bump"

    def __post_init__(self):
        if not self.width > 0:
            raise ValueError("bump width must be positive")
        if self.shape not in ("bump", "gaussian"):
            raise ValueError(f"unknown bump shape {self.shape!r}")

    def value(self, x):
        s = (np.asarray(x, dtype=float) - self.center) / self.width
        if self.shape == "gaussian":
            return self.amplitude * np.exp(-s * s)
        inside = np.abs(s) < 1.0
        out = np.zeros_like(s)
        si = s[inside]
        out[inside] = np.exp(-1.0 / (1.0 - si * si))
        return self.amplitude * out * math.e

    def derivative(self, x):
        s = (np.asarray(x, dtype=float) - self.center) / self.width
        if self.shape == "gaussian":
            return self.amplitude * (-2.0 * s) * np.exp(-s * s) / self.width
        inside = np.abs(s) < 1.0
        out = np.zeros_like(s)
        si = s[inside]
        d = 1.0 - si * si
        out[inside] = np.exp(-1.0 / d) * (-2.0 * si / (d * d))
        return self.amplitude * out * math.e / self.width


@dataclass(frozen=True)
class InitialData:
    """psi(0) = sum of ``psi`` bumps, psi_t(0) = sum of ``psi_t`` bumps minus
    ``advect`` times d/dr* psi(0) (advect = +1 gives an outgoing pulse in flat space)."""

    psi: tuple = ()
    psi_t: tuple = ()
    advect: float = 0.0

    def psi0(self, x):
        return sum((b.value(x) for b in self.psi), np.zeros_like(np.asarray(x, dtype=float)))

    def psi_t0(self, x):
        out = sum((b.value(x) for b in self.psi_t), np.zeros_like(np.asarray(x, dtype=float)))
        if self.advect:
            out = out - self.advect * sum((b.derivative(x) for b in self.psi), 0.0)
        return out

    def support(self):
        """(lo, hi) beyond which the data vanish (or are below rounding)."""
        bs = list(self.psi) + list(self.psi_t)
        if not bs:
            return (0.0, 0.0)

        def reach(b):
            return b.width * (1.0 if b.shape == "bump" else 6.5)

        return min(b.center - reach(b) for b in bs), max(b.center + reach(b) for b in bs)


@dataclass(frozen=True)
class EvolutionConfig:
    """Leapfrog run of one (l, m) mode.

    ``window`` is the r*-interval where psi and its derivatives are stored;
    the computational grid is padded beyond it by ``t_final`` plus a margin
    so that the boundary is causally disconnected from the window.
    """

    ell: int
    data: InitialData
    h: float
    t_final: float
    window: tuple = (-30.0, 60.0)
    courant: float = 0.5
    M: float = 1.0
    t0: float = 0.0
    potential: str = "regge_wheeler"
    pad_margin: float = 2.0

    def __post_init__(self):
        if self.ell < 0 or int(self.ell) != self.ell:
            raise ValueError("ell must be a non-negative integer")
        if not (self.h > 0 and np.isfinite(self.h)):
            raise ValueError("h must be positive")
        if not 0 < self.courant <= 1.0:
            raise ValueError("courant number must lie in (0, 1]")
        if self.t_final < 0:
            raise ValueError("t_final must be non-negative")
        if self.window[1] <= self.window[0]:
            raise ValueError("window must be an increasing interval")
        if self.potential not in ("regge_wheeler", "zero"):
            raise ValueError(f"unknown potential {self.potential!r}")


@dataclass
class FieldHistory:
    """psi and centred derivatives on the window at every time level.

    Arrays have shape (n_times, n_window).  ``energy`` is the conserved
    leapfrog energy at the half steps t_{n+1/2}.
    """

    config: EvolutionConfig
    times: np.ndarray
    rstar: np.ndarray
    psi: np.ndarray
    psi_t: np.ndarray
    psi_r: np.ndarray
    energy: np.ndarray
    h: float
    k: float

    @property
    def ell(self):
        return self.config.ell

    def energy_drift(self):
        e0 = self.energy[0]
        return float(np.max(np.abs(self.energy - e0)) / max(abs(e0), 1e-300))


def _snap(x, h, what):
    n = round(x / h)
    if abs(n * h - x) > 1e-9 * max(h, abs(x)):
        raise ValueError(f"{what}={x!r} is not a multiple of h={h!r}")
    return int(n)


def evolve(cfg: EvolutionConfig, g: Geometry | None = None) -> FieldHistory:
    """Run the leapfrog scheme and return the stored window history."""
    g = g or Geometry(cfg.M)
    h = cfg.h
    k = cfg.courant * h
    n_steps = int(math.ceil(cfg.t_final / k - 1e-9)) + 1  # one extra level for centred psi_t
    t_span = n_steps * k
    lo_w, hi_w = cfg.window
    d_lo, d_hi = cfg.data.support()
    pad = t_span + cfg.pad_margin + 4 * h
    lo = min(lo_w, d_lo) - pad
    hi = max(hi_w, d_hi) + pad
    j_lo = int(math.floor(lo / h))
    j_hi = int(math.ceil(hi / h))
    x = h * np.arange(j_lo, j_hi + 1)
    iw0 = _snap(lo_w, h, "window start") - j_lo - 1
    iw1 = _snap(hi_w, h, "window end") - j_lo + 2
    if cfg.potential == "zero":
        V = np.zeros_like(x)
    else:
        V = rw_potential(x, cfg.ell, g)

    psi0 = cfg.data.psi0(x)
    psit0 = cfg.data.psi_t0(x)
    psi0[0] = psi0[-1] = 0.0
    psit0[0] = psit0[-1] = 0.0

    def rhs(u):
        out = np.zeros_like(u)
        out[1:-1] = (u[2:] - 2.0 * u[1:-1] + u[:-2]) / (h * h) - V[1:-1] * u[1:-1]
        return out

    # Taylor start: psi^1 = psi^0 + k psi_t + k^2/2 (D^2 - V) psi^0 (+ k^3/6 (D^2 - V) psi_t)
    psi1 = psi0 + k * psit0 + 0.5 * k * k * rhs(psi0) + (k**3 / 6.0) * rhs(psit0)
    psi1[0] = psi1[-1] = 0.0

    def energy(a, b):
        dt = (b - a) / k
        dx_a = np.diff(a) / h
        dx_b = np.diff(b) / h
        return h * (0.5 * np.sum(dt * dt) + 0.5 * np.sum(dx_a * dx_b) + 0.5 * np.sum(V * a * b))

    store = np.empty((n_steps + 1, iw1 - iw0))
    store[0] = psi0[iw0:iw1]
    store[1] = psi1[iw0:iw1]
    energies = [energy(psi0, psi1)]
    e_ref = energies[0]
    prev, cur = psi0, psi1
    for n in range(1, n_steps):
        nxt = 2.0 * cur - prev + k * k * rhs(cur)
        store[n + 1] = nxt[iw0:iw1]
        e = energy(cur, nxt)
        energies.append(e)
        if not np.isfinite(e) or (e > INSTABILITY_FACTOR * e_ref and e > 0):
            raise InstabilityError(
                f"energy grew from {e_ref:.3e} to {e:.3e} at step {n}",
                {"step": n, "t": cfg.t0 + (n + 1) * k, "energy": e, "initial_energy": e_ref, "h": h, "k": k},
            )
        prev, cur = cur, nxt

    xw = x[iw0:iw1]
    psi_t = np.empty_like(store)
    psi_t[1:-1] = (store[2:] - store[:-2]) / (2.0 * k)
    psi_t[0] = psit0[iw0:iw1]
    psi_t[-1] = (3.0 * store[-1] - 4.0 * store[-2] + store[-3]) / (2.0 * k) if n_steps >= 2 else psi_t[0]
    psi_r = (store[:, 2:] - store[:, :-2]) / (2.0 * h)
    times = cfg.t0 + k * np.arange(n_steps + 1)
    return FieldHistory(
        config=cfg,
        times=times,
        rstar=xw[1:-1],
        psi=store[:, 1:-1],
        psi_t=psi_t[:, 1:-1],
        psi_r=psi_r,
        energy=np.asarray(energies),
        h=h,
        k=k,
    )


def assemble_jets(hist: FieldHistory, g: Geometry, rows=slice(None)):
    """Sphere jets of phi = (psi / r) Y_l on the stored window."""
    p = point_from_rstar(hist.rstar, g)
    r, om = p.r, p.one_minus_mu
    psi = hist.psi[rows]
    u = psi / r
    ur = hist.psi_r[rows] / r - om * psi / (r * r)
    ut = hist.psi_t[rows] / r
    return mode_to_jet(ModeState(hist.ell, u, ur, ut), p), p


@dataclass(frozen=True)
class TrapezoidRegion:
    """t1 <= t <= t2 between the null lines r* = r1 - (t2 - t) (left) and
    r* = r2 + (t2 - t) (right); r1, r2 are the r*-ends at t = t2."""

    t1: float
    t2: float
    r1: float
    r2: float

    def __post_init__(self):
        if not self.t2 > self.t1:
            raise ValueError("need t2 > t1")
        if not self.r2 > self.r1:
            raise ValueError("need r2 > r1")

    def left(self, t):
        return self.r1 - (self.t2 - np.asarray(t, dtype=float))

    def right(self, t):
        return self.r2 + (self.t2 - np.asarray(t, dtype=float))

    def shifted(self, tau):
        return replace(self, t1=self.t1 + tau, t2=self.t2 + tau)


@dataclass
class FluxBalance:
    past: float
    future: float
    left: float
    right: float

    @property
    def net(self):
        """E(t1) - E(t2) + right - left, which should equal the bulk."""
        return self.past - self.future + self.right - self.left


def _lagrange4(xs, vals, x):
    """Cubic interpolation of row data ``vals`` (uniform grid xs) at points x."""
    h = xs[1] - xs[0]
    j = np.clip(np.floor((x - xs[0]) / h).astype(int) - 1, 0, len(xs) - 4)
    s = (x - xs[j]) / h  # in [1, 2] for interior points
    w0 = -(s - 1) * (s - 2) * (s - 3) / 6.0
    w1 = s * (s - 2) * (s - 3) / 2.0
    w2 = -s * (s - 1) * (s - 3) / 2.0
    w3 = s * (s - 1) * (s - 2) / 6.0
    rows = np.arange(vals.shape[0])
    return w0 * vals[rows, j] + w1 * vals[rows, j + 1] + w2 * vals[rows, j + 2] + w3 * vals[rows, j + 3]


def _row_integrals(xs, vals, a, b):
    """int_a^b of each row (trapezoid, with interpolated partial end cells)."""
    h = xs[1] - xs[0]
    out = np.empty(vals.shape[0])
    fa = _lagrange4(xs, vals, a)
    fb = _lagrange4(xs, vals, b)
    for i in range(vals.shape[0]):
        ia = int(math.ceil((a[i] - xs[0]) / h - 1e-9))
        ib = int(math.floor((b[i] - xs[0]) / h + 1e-9))
        if ib < ia:
            out[i] = 0.5 * (fa[i] + fb[i]) * (b[i] - a[i])
            continue
        inner = vals[i, ia : ib + 1]
        s = h * (np.sum(inner) - 0.5 * (inner[0] + inner[-1]))
        s += 0.5 * (fa[i] + inner[0]) * (xs[ia] - a[i])
        s += 0.5 * (inner[-1] + fb[i]) * (b[i] - xs[ib])
        out[i] = s
    return out


def _rows_in(hist: FieldHistory, region: TrapezoidRegion):
    k = hist.k
    i1 = int(round((region.t1 - hist.times[0]) / k))
    i2 = int(round((region.t2 - hist.times[0]) / k))
    for i, t in ((i1, region.t1), (i2, region.t2)):
        if not (0 <= i < len(hist.times)) or abs(hist.times[i] - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"time {t} is not a stored time level")
    lo, hi = region.left(region.t1), region.right(region.t1)
    if lo < hist.rstar[1] or hi > hist.rstar[-2]:
        raise ValueError("region leaves the stored window")
    return i1, i2


def density(name, jet: SphereJet, p, params, g, aux_sign=1.0):
    """Sphere densities that can be integrated over a region (times (1-mu))."""
    if name == "K":
        return k_combined_sphere(jet, p, params, g)[0]
    if name == "K+K_aux":
        return k_combined_sphere(jet, p, params, g)[0] + k_aux_sphere(jet, p, g, aux_sign)
    if name == "K_aux":
        return k_aux_sphere(jet, p, g, aux_sign)
    if name == "lower_bound":
        return lower_bound_sphere(jet, p, params, g)
    if name == "controlled":
        return controlled_sphere(jet, p, g, include_time=False)
    if name == "controlled_t":
        return controlled_sphere(jet, p, g, include_time=True)
    raise ValueError(f"unknown density {name!r}")


def bulk_integral(
    hist: FieldHistory,
    region: TrapezoidRegion,
    name: str,
    params: MultiplierParams,
    g: Geometry,
    aux_sign: float = 1.0,
    return_rows: bool = False,
):
    """int int (1-mu) * density dt dr* over the region (t-trapezoid of row integrals)."""
    i1, i2 = _rows_in(hist, region)
    jet, p = assemble_jets(hist, g, slice(i1, i2 + 1))
    vals = p.one_minus_mu * density(name, jet, p, params, g, aux_sign)
    t = hist.times[i1 : i2 + 1]
    rows = _row_integrals(hist.rstar, vals, region.left(t), region.right(t))
    total = float(np.trapezoid(rows, t))
    return (total, t, rows) if return_rows else total


def _fluxes(hist, rows, which, params, g, aux_sign):
    jet, p = assemble_jets(hist, g, rows)
    return flux_components(jet, p, params, g, which, aux_sign)


def boundary_flux(
    hist: FieldHistory,
    region: TrapezoidRegion,
    which: str,
    params: MultiplierParams,
    g: Geometry,
    aux_sign: float = 1.0,
) -> FluxBalance:
    """Fluxes of a current through the four sides of the region."""
    i1, i2 = _rows_in(hist, region)
    rows = slice(i1, i2 + 1)
    pt, pr = _fluxes(hist, rows, which, params, g, aux_sign)
    t = hist.times[rows]
    a, b = region.left(t), region.right(t)
    xs = hist.rstar
    e = _row_integrals(xs, pt[[0, -1]], a[[0, -1]], b[[0, -1]])
    left_vals = _lagrange4(xs, pr + pt, a)
    right_vals = _lagrange4(xs, pr - pt, b)
    return FluxBalance(
        past=float(e[0]),
        future=float(e[1]),
        left=float(np.trapezoid(left_vals, t)),
        right=float(np.trapezoid(right_vals, t)),
    )


def _energy_density(jet, p):
    r2 = p.r * p.r
    return r2 * (
        0.5 * (jet.Att + jet.Arr)
        + 0.5 * p.one_minus_mu * jet.Aang
        + 0.5 * (jet.Btt + jet.Brr)
        + 0.5 * p.one_minus_mu * jet.Bang
    )


def energy_rows(hist: FieldHistory, g: Geometry, region: TrapezoidRegion):
    """Killing energy of phi plus the Omega_i phi on every slice of the region."""
    i1, i2 = _rows_in(hist, region)
    jet, p = assemble_jets(hist, g, slice(i1, i2 + 1))
    t = hist.times[i1 : i2 + 1]
    return t, _row_integrals(hist.rstar, _energy_density(jet, p), region.left(t), region.right(t))


def data_norm(hist: FieldHistory, g: Geometry, region: TrapezoidRegion):
    """Killing energy of phi plus the Omega_i phi on the bottom slice."""
    i1, _ = _rows_in(hist, region)
    jet, p = assemble_jets(hist, g, slice(i1, i1 + 1))
    t = hist.times[i1 : i1 + 1]
    return float(_row_integrals(hist.rstar, _energy_density(jet, p), region.left(t), region.right(t))[0])


def theorem1_ratio(hist: FieldHistory, region: TrapezoidRegion, params: MultiplierParams, g: Geometry):
    """bulk(controlled norm with the time term) / ((1 + l(l+1)) * data energy).

    The time term is integrated as a whole; the factor (1 + l(l+1)) is the
    number of angular derivatives of the data the estimate loses.
    """
    bulk = bulk_integral(hist, region, "controlled_t", params, g)
    norm = data_norm(hist, g, region)
    return bulk / norm, bulk, norm


def random_ensemble(n_runs: int, seed: int, ell_max: int = 8, h: float = 0.1, t_final: float = 40.0):
    """Seeded random initial data and modes for the constant test."""
    if n_runs <= 0:
        raise ValueError("need at least one run")
    rng = np.random.default_rng(seed)
    cfgs = []
    for _ in range(n_runs):
        ell = int(rng.integers(0, ell_max + 1))
        n_b = int(rng.integers(1, 3))
        psi = tuple(
            Bump(
                center=round(float(rng.uniform(-10.0, 10.0)), 3),
                width=round(float(rng.uniform(1.5, 4.0)), 3),
                amplitude=round(float(rng.normal()), 6),
            )
            for _ in range(n_b)
        )
        psi_t = tuple(
            Bump(
                center=round(float(rng.uniform(-10.0, 10.0)), 3),
                width=round(float(rng.uniform(1.5, 4.0)), 3),
                amplitude=round(float(rng.normal()), 6),
            )
            for _ in range(int(rng.integers(0, 2)))
        )
        advect = float(rng.choice([-1.0, 0.0, 1.0]))
        cfgs.append(
            EvolutionConfig(
                ell=ell,
                data=InitialData(psi=psi, psi_t=psi_t, advect=advect),
                h=h,
                t_final=t_final,
                window=(-60.0, 80.0),
            )
        )
    return cfgs


@dataclass
class RunRecord:
    index: int
    ell: int
    ratio: float
    bulk: float
    data_energy: float
    energy_drift: float
    identity_residual: float
    rows: dict = field(default_factory=dict)


def default_region(t_final: float, window=(-60.0, 80.0)):
    """Largest region fitting in the window: bottom slice at t = 0."""
    lo, hi = window
    span = t_final
    return TrapezoidRegion(0.0, t_final, lo + span + 1.0, hi - span - 1.0)


def run_one(args):
    """Evolve one configuration and evaluate the constant and the identity."""
    index, cfg, params, region = args
    g = Geometry(cfg.M)
    hist = evolve(cfg, g)
    ratio, bulk, norm = theorem1_ratio(hist, region, params, g)
    kb, t, krows = bulk_integral(hist, region, "K", params, g, return_rows=True)
    fl = boundary_flux(hist, region, "J", params, g)
    resid = abs(kb - fl.net) / max(abs(kb), abs(fl.past) + abs(fl.future) + 1e-300)
    te, erows = energy_rows(hist, g, region)
    a, b = region.left(t), region.right(t)
    return RunRecord(
        index=index,
        ell=cfg.ell,
        ratio=float(ratio),
        bulk=float(bulk),
        data_energy=float(norm),
        energy_drift=hist.energy_drift(),
        identity_residual=float(resid),
        rows={"t": t, "energy_T": erows, "bulk_K_row": krows, "left": a, "right": b},
    )


def run_ensemble(cfgs, params: MultiplierParams, region: TrapezoidRegion, mapper=map):
    """Evaluate every configuration; ``mapper`` may be a process-pool map."""
    return list(mapper(run_one, [(i, c, params, region) for i, c in enumerate(cfgs)]))
