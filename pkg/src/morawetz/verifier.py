"""Margin certification of the positivity argument, and best constants.

Each inequality of the argument is scanned on a dense grid (uniform in r*,
with geometric clustering at the photon sphere and at x = +/-alpha), the
smallest local minima are then zoomed in on until the bracket is at rounding
level.  Margins are reported both raw and normalised by the sum of absolute
values of the terms that make up the inequality, so they are comparable
across alpha.

This is numerical certification with explicit margins, not interval
arithmetic.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .currents import (
    ModeState,
    controlled_sphere,
    k_aux_sphere,
    k_combined_sphere,
    mode_to_jet,
)
from .geometry import Geometry, MultiplierParams, point_from_r, point_from_rstar, rstar_of_r
from .multipliers import (
    H_of_r,
    big_F,
    choose_cstar,
    d2H_dr2,
    dH_dr,
    f_b,
)

__all__ = [
    "VerifierGrid",
    "CheckRecord",
    "CertificationReport",
    "BestConstantReport",
    "IndefiniteFormError",
    "check_suffices2",
    "check_H",
    "check_ratio",
    "check_midrange_approx",
    "certify",
    "scan_alpha",
    "default_alphas",
    "best_constant",
    "validate_constant",
    "RATIO_BOUND",
    "RATIO_BOUND_NEG",
    "RATIO_BOUND_POS",
]

RATIO_BOUND = 9.0 / 10.0
RATIO_BOUND_NEG = 3.0 / 4.0
RATIO_BOUND_POS = (2.0 / 7.0) * 2.0**1.5
POINT_TOL = 1e-12


@dataclass(frozen=True)
class VerifierGrid:
    n_base: int = 20000
    n_x: int = 4001
    rstar_min: float = -60.0
    R_split: float = 10.0  # in units of M
    R_max: float = 1.0e4  # in units of M
    n_cluster: int = 200
    zoom_points: int = 33
    max_levels: int = 60
    n_candidates: int = 6

    def refined(self) -> "VerifierGrid":
        return VerifierGrid(
            n_base=2 * self.n_base,
            n_x=2 * self.n_x - 1,
            rstar_min=self.rstar_min,
            R_split=self.R_split,
            R_max=self.R_max,
            n_cluster=2 * self.n_cluster,
            zoom_points=self.zoom_points,
            max_levels=self.max_levels,
            n_candidates=self.n_candidates,
        )


@dataclass
class CheckRecord:
    name: str
    region: str
    grid_points: int
    refinement_levels: int
    min_margin: float
    argmin: float
    passed: bool
    raw_value: float = float("nan")
    trace: list = field(default_factory=list)
    children: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)
    refined_margin: float = float("nan")
    stable: bool | None = None
    # (coordinate, value, margin) rows for plotting; not part of the JSON report
    samples: tuple = field(default=(), repr=False)

    def to_dict(self):
        d = asdict(self)
        d.pop("samples")
        d["children"] = [c.to_dict() if isinstance(c, CheckRecord) else c for c in self.children]
        return d


@dataclass
class CertificationReport:
    alpha: float
    c_star: float
    checks: list
    verdict: bool
    M: float = 1.0
    scan_table: list = field(default_factory=list)

    def to_dict(self):
        return {
            "alpha": self.alpha,
            "c_star": self.c_star,
            "M": self.M,
            "verdict": "pass" if self.verdict else "fail",
            "checks": [c.to_dict() for c in self.checks],
            "scan_table": self.scan_table,
        }


# ---------------------------------------------------------------------------
# grids and the zooming minimiser
# ---------------------------------------------------------------------------


def _clustered(center, lo, hi, n, smallest=1e-9):
    if n <= 0:
        return np.empty(0)
    span = max(hi - lo, 1e-300)
    offs = np.geomspace(smallest * max(1.0, abs(center)), span, n)
    pts = np.concatenate([center - offs, [center], center + offs])
    return pts[(pts >= lo) & (pts <= hi)]


def rstar_grid(params: MultiplierParams, g: Geometry, grid: VerifierGrid, lo=None, hi=None):
    """Uniform-in-r* grid with clustering at r* = 0 and at x = +/-alpha."""
    a = params.alpha
    if lo is None:
        lo = grid.rstar_min * g.M
    if hi is None:
        hi = max(rstar_of_r(grid.R_max * g.M, g), 4.0 * params.x_offset)
    base = np.linspace(lo, hi, grid.n_base)
    centres = [0.0, params.x_offset - a, params.x_offset + a]
    extra = [_clustered(c, lo, hi, grid.n_cluster) for c in centres]
    return np.unique(np.concatenate([base, *extra]))


def _zoom_min(fun, xs, grid: VerifierGrid):
    """Minimise ``fun`` (vectorised) starting from samples ``xs``.

    Returns (min value, argmin, zoom levels used, trace of running minima).
    """
    vals = np.asarray(fun(xs), dtype=float)
    if np.any(np.isnan(vals)):
        raise FloatingPointError("NaN in scanned function")
    j0 = int(np.argmin(vals))
    best_v, best_x = float(vals[j0]), float(xs[j0])
    trace = [best_v]
    n = len(xs)
    interior = np.flatnonzero(
        (vals <= np.concatenate([[np.inf], vals[:-1]])) & (vals <= np.concatenate([vals[1:], [np.inf]]))
    )
    cand = interior[np.argsort(vals[interior])][: grid.n_candidates]
    levels_used = 0
    lo_all, hi_all = float(xs[0]), float(xs[-1])
    for i in cand:
        lo, hi = float(xs[max(i - 1, 0)]), float(xs[min(i + 1, n - 1)])
        for level in range(grid.max_levels):
            zs = np.linspace(lo, hi, grid.zoom_points)
            zv = np.asarray(fun(zs), dtype=float)
            k = int(np.argmin(zv))
            if zv[k] < best_v:
                best_v, best_x = float(zv[k]), float(zs[k])
            if i == cand[0]:
                trace.append(best_v)
            step = zs[1] - zs[0]
            lo, hi = max(zs[k] - step, lo_all), min(zs[k] + step, hi_all)
            levels_used = max(levels_used, level + 1)
            if hi - lo <= 1e-14 * (1.0 + abs(zs[k])):
                break
    return best_v, best_x, levels_used, trace


MAX_SAMPLES = 2000


def _record(name, region, fun, xs, grid, raw_fun=None, threshold=0.0, diagnostics=None):
    v, x, levels, trace = _zoom_min(fun, xs, grid)
    raw = float(raw_fun(np.array([x]))[0]) if raw_fun is not None else v
    sub = xs[:: max(1, len(xs) // MAX_SAMPLES)]
    m = np.asarray(fun(sub), dtype=float)
    val = np.asarray(raw_fun(sub), dtype=float) if raw_fun is not None else m
    return CheckRecord(
        name=name,
        region=region,
        grid_points=len(xs),
        refinement_levels=levels,
        min_margin=v,
        argmin=x,
        passed=bool(v > threshold),
        raw_value=raw,
        trace=trace,
        diagnostics=diagnostics or {},
        samples=tuple(zip(sub.tolist(), val.tolist(), m.tolist())),
    )


def _combine(name, region, children, diagnostics=None):
    # non-strict intermediate bounds (equality allowed) do not set the margin
    strict = [c for c in children if c.diagnostics.get("strict", True)]
    worst = min(strict, key=lambda c: c.min_margin)
    return CheckRecord(
        name=name,
        region=region,
        grid_points=sum(c.grid_points for c in children),
        refinement_levels=max(c.refinement_levels for c in children),
        min_margin=worst.min_margin,
        argmin=worst.argmin,
        passed=all(c.passed for c in children),
        raw_value=worst.raw_value,
        trace=[],
        children=children,
        diagnostics=diagnostics or {},
    )


# ---------------------------------------------------------------------------
# the four certified checks
# ---------------------------------------------------------------------------


def _suffices2_terms(rs, params, g):
    p = point_from_rstar(rs, g)
    M = g.M
    r = p.r
    fb = f_b(p, params).f
    t1 = 2.0 * fb * (r - 3.0 * M) * r * r
    h1 = M * fb * (3.0 * r * r - 8.0 * M * r)
    h2 = -2.0 * params.c_star * (r - 3.0 * M) / params.alpha**2
    t3 = big_F(p, params) * r**6
    return t1, h1, h2, t3


def suffices2_lhs(rs, params, g):
    """2 f^b (r-3M) r^2 + H(r) + F r^6 as a function of r*."""
    return sum(_suffices2_terms(rs, params, g))


def check_suffices2(params: MultiplierParams, g: Geometry, grid: VerifierGrid = VerifierGrid()) -> CheckRecord:
    """Certify 2 f^b (r-3M) r^2 + H(r) + F r^6 > 0 on (2M, R_max]."""
    xs = rstar_grid(params, g, grid)

    def norm(rs):
        parts = _suffices2_terms(rs, params, g)
        return sum(parts) / sum(np.abs(t) for t in parts)

    at_ps = sum(_suffices2_terms(np.array([0.0]), params, g))[0]
    rec = _record(
        "suffices2",
        f"r* in [{xs[0]:.6g}, {xs[-1]:.6g}]",
        norm,
        xs,
        grid,
        raw_fun=lambda rs: suffices2_lhs(rs, params, g),
        diagnostics={
            "value_at_photon_sphere": float(at_ps),
            "F_r6_at_photon_sphere": float(_suffices2_terms(np.array([0.0]), params, g)[3][0]),
            "min_first_term": float(np.min(_suffices2_terms(xs, params, g)[0])),
        },
    )
    return rec


def _quadratic_record(name, a, b, c, M):
    """Positivity of a r^2 + b M r + c M^2 for all r via its discriminant."""
    disc = (b * b - 4.0 * a * c) * M * M
    scale = (b * b + 4.0 * abs(a * c)) * M * M
    return CheckRecord(
        name=name,
        region="all r",
        grid_points=0,
        refinement_levels=0,
        min_margin=float(-disc / scale),
        argmin=float("nan"),
        passed=bool(a > 0 and disc < 0),
        raw_value=float(disc),
        diagnostics={"coefficients": [a, b, c], "discriminant": float(disc)},
    )


def _point_record(name, value, tol, where):
    return CheckRecord(
        name=name,
        region=where,
        grid_points=1,
        refinement_levels=0,
        min_margin=float((tol - abs(value)) / tol),
        argmin=float("nan"),
        passed=bool(abs(value) <= tol),
        raw_value=float(value),
        diagnostics={"tolerance": tol},
    )


def check_H(params: MultiplierParams, g: Geometry, grid: VerifierGrid = VerifierGrid()) -> CheckRecord:
    """Certify H >= 0 through the chain: H > 0 for r <= 8M/3, H(3M) = 0,
    dH/dr(3M) = 0, convexity on [8M/3, R], and H > 0 on [R, R_max]."""
    M = g.M
    a = params.alpha
    R = grid.R_split * M
    Rmax = grid.R_max * M
    rs_83 = rstar_of_r(8.0 * M / 3.0, g)
    rs_R = rstar_of_r(R, g)
    rs_max = rstar_of_r(Rmax, g)
    full = rstar_grid(params, g, grid, hi=max(rs_max, 4.0 * params.x_offset))
    children = []

    def H_terms(rs):
        p = point_from_rstar(rs, g)
        r = p.r
        fb = f_b(p, params).f
        return M * fb * (3.0 * r * r - 8.0 * M * r), -2.0 * params.c_star * (r - 3.0 * M) / a**2

    def H_norm(rs):
        h1, h2 = H_terms(rs)
        return (h1 + h2) / (np.abs(h1) + np.abs(h2))

    near = np.unique(np.concatenate([full[full <= rs_83], [rs_83]]))
    children.append(
        _record(
            "H_positive_near_horizon",
            "2M < r <= 8M/3",
            H_norm,
            near,
            grid,
            raw_fun=lambda rs: sum(H_terms(rs)),
        )
    )
    children.append(_point_record("H_zero_at_3M", H_of_r(3.0 * M, params, g), POINT_TOL, "r = 3M"))
    children.append(_point_record("dH_zero_at_3M", dH_dr(3.0 * M, params, g), POINT_TOL, "r = 3M"))

    mid = np.unique(np.concatenate([full[(full >= rs_83) & (full <= rs_R)], [rs_83, rs_R]]))

    def d2(rs):
        return d2H_dr2(point_from_rstar(rs, g).r, params, g)

    def d2_scaled(rs):
        return a * a * d2(rs)

    conv = _record(
        "d2H_convex",
        "8M/3 <= r <= R",
        d2_scaled,
        mid,
        grid,
        diagnostics={"R": R, "reported_c": None},
    )
    conv.diagnostics["reported_c"] = conv.min_margin
    conv.raw_value = conv.min_margin
    # relative size, so the margin is comparable across alpha
    parts = d2H_dr2(point_from_rstar(np.array([conv.argmin]), g).r, params, g, parts=True)
    conv.min_margin = float(conv.min_margin / (a * a * sum(abs(float(t[0])) for t in parts)))
    children.append(conv)

    # |M (f^b)'' (3r^2 - 8Mr)/(1-mu)^2| <= C alpha^{-3}: report C
    def t1_scaled(rs):
        t1 = d2H_dr2(point_from_rstar(rs, g).r, params, g, parts=True)[0]
        return -a**3 * np.abs(t1)

    c_fb2 = _record(
        "fb2_term_bound",
        "8M/3 <= r <= R",
        t1_scaled,
        mid,
        grid,
        threshold=-np.inf,
        diagnostics={"strict": False},
    )
    c_fb2.diagnostics["empirical_C"] = -c_fb2.min_margin
    c_fb2.passed = bool(np.isfinite(c_fb2.min_margin))

    # the (f^b)' pair >= 2M (f^b)'/(r(1-mu)) (6r^2 - 20Mr + 32M^2) on r >= 8M/3
    def combo_margin(rs, lin=20.0):
        p = point_from_rstar(rs, g)
        r, om = p.r, p.one_minus_mu
        f1 = f_b(p, params).f1
        _, t2, t3, _ = d2H_dr2(r, params, g, parts=True)
        bound = 2.0 * M * f1 / (r * om) * (6.0 * r * r - lin * M * r + 32.0 * M * M)
        return (t2 + t3 - bound) / (np.abs(t2) + np.abs(t3) + np.abs(bound))

    # equality holds at r = 8M/3, so this one is non-strict up to rounding
    combo = _record(
        "fb1_combination_bound",
        "8M/3 <= r <= R",
        combo_margin,
        mid,
        grid,
        threshold=-1e-13,
        diagnostics={"strict": False},
    )
    stated = _record(
        "fb1_combination_bound_as_printed",
        "8M/3 <= r <= R",
        lambda rs: combo_margin(rs, lin=16.0),
        mid,
        grid,
    )
    combo.diagnostics["printed_variant_min_margin"] = stated.min_margin
    combo.diagnostics["printed_variant_holds"] = stated.passed
    children.append(combo)
    children.append(_quadratic_record("quadratic_6r2_16Mr_32M2", 6.0, -16.0, 32.0, M))
    children.append(_quadratic_record("quadratic_6r2_20Mr_32M2", 6.0, -20.0, 32.0, M))
    children.append(_quadratic_record("quadratic_9r2_25Mr_32M2", 9.0, -25.0, 32.0, M))

    far = np.unique(np.concatenate([full[(full >= rs_R) & (full <= rs_max)], [rs_R, rs_max]]))
    children.append(
        _record("H_positive_far", "R <= r <= R_max", H_norm, far, grid, raw_fun=lambda rs: sum(H_terms(rs)))
    )
    pfar = point_from_rstar(far, g)
    fb_far = f_b(pfar, params).f
    c_fb = float(np.min(fb_far / (np.minimum(pfar.r / a, 1.0) / a)))

    def H_floor(rs):
        p = point_from_rstar(rs, g)
        r = p.r
        lead = c_fb * M / a * (3.0 * r * r - 8.0 * M * r) * np.minimum(r / a, 1.0)
        tail = 2.0 * params.c_star * (r - 3.0 * M) / a**2
        return (lead - tail) / (lead + tail)

    floor = _record("H_lower_bound_far", "R <= r <= R_max", H_floor, far, grid)
    floor.diagnostics["fb_bound_c"] = c_fb
    children.append(floor)
    fbb = CheckRecord(
        name="fb_lower_bound",
        region="R <= r <= R_max",
        grid_points=len(far),
        refinement_levels=0,
        min_margin=c_fb,
        argmin=float(far[int(np.argmin(fb_far / (np.minimum(pfar.r / a, 1.0) / a)))]),
        passed=bool(c_fb > 0),
        raw_value=c_fb,
        diagnostics={"R": R},
    )
    children.append(fbb)
    out = _combine("H_chain", "2M < r <= R_max", children)
    out.diagnostics["fb2_term_C"] = c_fb2.diagnostics["empirical_C"]
    out.diagnostics["d2H_c"] = conv.diagnostics["reported_c"]
    out.children.append(c_fb2)
    return out


def ratio_function(xi, alpha):
    """(alpha - x)(x + alpha + alpha^{1/2})^3 / (4 (x^2 + alpha^2)^2) at x = alpha * xi."""
    s = alpha**-0.5
    return (1.0 - xi) * (xi + 1.0 + s) ** 3 / (4.0 * (xi * xi + 1.0) ** 2)


def check_ratio(params: MultiplierParams, g: Geometry, grid: VerifierGrid = VerifierGrid()) -> CheckRecord:
    """Certify the final ratio bound 9/10 on x in [-alpha, alpha] together
    with the sub-bounds 3/4 (x <= 0) and (2/7) 2^{3/2} (x >= 0)."""
    a = params.alpha
    s = a**-0.5
    xi = np.linspace(-1.0, 1.0, grid.n_x)
    neg = xi[xi <= 0.0]
    pos = xi[xi >= 0.0]

    def bound_rec(name, bound, pts, region):
        rec = _record(name, region, lambda z: (bound - ratio_function(z, a)) / bound, pts, grid)
        rec.diagnostics["bound"] = bound
        rec.diagnostics["max_ratio"] = bound * (1.0 - rec.min_margin)
        rec.raw_value = rec.diagnostics["max_ratio"]
        rec.argmin = rec.argmin * a
        rec.diagnostics["sample_coordinate"] = "x/alpha"
        return rec

    children = [
        bound_rec("ratio_below_9_10", RATIO_BOUND, xi, "-alpha <= x <= alpha"),
        bound_rec("ratio_below_3_4", RATIO_BOUND_NEG, neg, "-alpha <= x <= 0"),
        bound_rec("ratio_below_2_7_2to3_2", RATIO_BOUND_POS, pos, "0 <= x <= alpha"),
    ]
    # factor bounds used to get the sub-bounds
    cube_neg = _record(
        "cube_below_3_2_alpha3",
        "-alpha <= x <= 0",
        lambda z: (1.5 - (z + 1.0 + s) ** 3) / 1.5,
        neg,
        grid,
    )
    cube_neg.argmin *= a
    cube_neg.diagnostics["sample_coordinate"] = "x/alpha"
    cube_pos = _record(
        "cube_below_2to3_2_8_7",
        "0 <= x <= alpha",
        lambda z: 1.0 - (z + 1.0 + s) ** 3 / (2.0**1.5 * (8.0 / 7.0) * (z * z + 1.0) ** 1.5),
        pos,
        grid,
    )
    cube_pos.argmin *= a
    cube_pos.diagnostics["sample_coordinate"] = "x/alpha"
    children += [cube_neg, cube_pos]
    rec = _combine("ratio_9_10", "-alpha <= x <= alpha", children)
    rec.diagnostics["value_at_x_eq_alpha"] = float(ratio_function(np.array([1.0]), a)[0])
    return rec


def _midrange_terms(xi, params, g):
    a = params.alpha
    x = a * np.asarray(xi, dtype=float)
    p = point_from_rstar(x + params.x_offset, g)
    r = p.r
    fb = f_b(p, params).f
    t = 2.0 * fb * (r - 3.0 * g.M) / r**4
    F = big_F(p, params)
    q = x * x + a * a
    F_approx = 0.5 * (x * x - a * a) / q**3
    t_approx = 2.0 * (x + a) / (q * (x + params.x_offset) ** 3)
    return p, t, F, t_approx, F_approx


def check_midrange_approx(
    params: MultiplierParams, g: Geometry, grid: VerifierGrid = VerifierGrid()
) -> CheckRecord:
    """Certify 2 f^b (r-3M)/r^4 + F >= 0 exactly on x in [-alpha, alpha],
    and report how far the large-alpha surrogates are from the exact terms."""
    a = params.alpha
    xi = np.linspace(-1.0, 1.0, grid.n_x)

    def norm(z):
        _, t, F, _, _ = _midrange_terms(z, params, g)
        return (t + F) / (np.abs(t) + np.abs(F))

    rec = _record(
        "midrange_exact",
        "-alpha <= x <= alpha",
        norm,
        xi,
        grid,
        raw_fun=lambda z: (lambda q: q[1] + q[2])(_midrange_terms(z, params, g)),
    )
    p, t, F, t_ap, F_ap = _midrange_terms(xi, params, g)
    rec.argmin *= a
    rec.diagnostics["sample_coordinate"] = "x/alpha"
    rec.diagnostics.update(
        {
            "rel_dev_F": float(np.max(np.abs(F - F_ap)) / np.max(np.abs(F))),
            # the surrogate vanishes at x = -alpha, so measure it pointwise on x >= -alpha/2
            "rel_dev_fb_term": float(np.max(np.abs(t - t_ap)[xi >= -0.5] / np.abs(t)[xi >= -0.5])),
            "min_r_over_sqrt_alpha": float(np.min(p.r) / math.sqrt(a)),
            "max_mu_times_sqrt_alpha": float(np.max(p.mu) * math.sqrt(a)),
            "surrogate_min_margin": float(
                np.min((t_ap + F_ap)[1:] / (np.abs(t_ap) + np.abs(F_ap))[1:])
            ),
        }
    )
    return rec


_CHECKS = (check_suffices2, check_H, check_ratio, check_midrange_approx)


def _run_checks(params, g, grid):
    return [chk(params, g, grid) for chk in _CHECKS]


def _walk(rec):
    yield rec
    for c in rec.children:
        yield from _walk(c)


def certify(
    params: MultiplierParams,
    g: Geometry,
    grid: VerifierGrid = VerifierGrid(),
    verify_refinement: bool = True,
) -> CertificationReport:
    """Run all checks at one alpha; optionally repeat on a 2x refined grid
    and record the relative change of every margin."""
    checks = _run_checks(params, g, grid)
    if verify_refinement:
        fine = _run_checks(params, g, grid.refined())
        for coarse_rec, fine_rec in zip(checks, fine):
            for c, f in zip(_walk(coarse_rec), _walk(fine_rec)):
                c.refined_margin = f.min_margin
                if not c.diagnostics.get("strict", True):
                    c.passed = bool(c.passed and f.passed)
                    continue
                denom = max(abs(c.min_margin), 1e-300)
                c.stable = bool(abs(f.min_margin - c.min_margin) <= 0.01 * denom)
                # the verdict is taken after the final refinement
                c.passed = bool(c.passed and f.passed)
    verdict = all(c.passed for c in checks)
    return CertificationReport(alpha=params.alpha, c_star=params.c_star, checks=checks, verdict=verdict, M=g.M)


def default_alphas(lo=10.0, hi=1.0e5, per_decade=8):
    n = int(round(math.log10(hi / lo) * per_decade)) + 1
    return [float(v) for v in np.geomspace(lo, hi, n)]


def scan_alpha(
    alphas,
    g: Geometry,
    grid: VerifierGrid = VerifierGrid(),
    verify_refinement: bool = True,
    mapper=map,
) -> CertificationReport:
    """Smallest sampled alpha passing every check, with the full table.

    ``mapper`` may be a parallel map; the result does not depend on it.
    """
    alphas = sorted(float(a) for a in alphas)
    if not alphas:
        raise ValueError("empty alpha range")
    reports = list(mapper(_certify_alpha, [(a, g, grid) for a in alphas]))
    table = []
    for rep in reports:
        table.append(
            {
                "alpha": rep.alpha,
                "c_star": rep.c_star,
                "verdict": "pass" if rep.verdict else "fail",
                **{c.name: c.min_margin for c in rep.checks},
            }
        )
    passing = [rep for rep in reports if rep.verdict]
    if passing:
        best = passing[0]
        if verify_refinement:
            best = certify(MultiplierParams(best.alpha, best.c_star), g, grid, verify_refinement=True)
    else:
        best = max(reports, key=lambda rep: min(c.min_margin for c in rep.checks))
    best.scan_table = table
    return best


def _certify_alpha(args):
    a, g, grid = args
    return certify(MultiplierParams(a, choose_cstar(a, g)), g, grid, verify_refinement=False)


# ---------------------------------------------------------------------------
# best constants
# ---------------------------------------------------------------------------


class IndefiniteFormError(RuntimeError):
    """K is not positive semidefinite somewhere: contradicts the certificate."""

    def __init__(self, message, where):
        super().__init__(message)
        self.where = where


@dataclass
class BestConstantReport:
    which: str
    constant: float
    finite: bool
    alpha: float
    c_star: float
    ell_max: int
    grid: dict
    per_ell: list
    limit_ratio: float
    ell0_ratio: float | None = None
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)


def mode_forms(rs, lam, params, g, which="prop2", aux_sign=1.0, aux_scale=1.0):
    """Matrices of the two quadratic forms in (u, u_r, u_t) for a mode.

    Returns (K, C) with shape (..., 3, 3): K the divergence form (K, or
    K + K^aux for ``prop3``) and C the controlled form.
    """
    p = point_from_rstar(rs, g)
    shape = np.shape(rs)

    def K_of(u, ur, ut):
        jet = _mode_jet(lam, u, ur, ut, p)
        k = k_combined_sphere(jet, p, params, g)[0]
        if which == "prop3":
            k = k + aux_scale * k_aux_sphere(jet, p, g, aux_sign)
        return k

    def C_of(u, ur, ut):
        jet = _mode_jet(lam, u, ur, ut, p)
        return controlled_sphere(jet, p, g, include_time=(which == "prop3"))

    K = np.zeros(shape + (3, 3))
    C = np.zeros(shape + (3, 3))
    basis = np.eye(3)
    for form, fun in ((K, K_of), (C, C_of)):
        diag = [fun(*(basis[i][:, None] * np.ones(shape)).reshape(3, *shape)) for i in range(3)]
        for i in range(3):
            form[..., i, i] = diag[i]
            for j in range(i + 1, 3):
                v = (basis[i] + basis[j])[:, None] * np.ones(shape)
                off = 0.5 * (fun(*v.reshape(3, *shape)) - diag[i] - diag[j])
                form[..., i, j] = off
                form[..., j, i] = off
    return K, C


def _mode_jet(lam, u, ur, ut, p):
    # mode_to_jet with real lambda (the large-l limit uses non-integer values)
    m = ModeState(0, u, ur, ut)
    jet = mode_to_jet(m, p)
    r2 = p.r * p.r
    from dataclasses import replace

    return replace(
        jet,
        Aang=lam * u * u / r2,
        Aang2=lam * (lam - 1.0) * u * u / (r2 * r2),
        B00=lam * u * u,
        Brr=lam * ur * ur,
        Btt=lam * ut * ut,
        Bang=lam * lam * u * u / r2,
        Bcross=lam * u * ur,
        Btr=lam * ut * ur,
        Bcrosst=lam * u * ut,
    )


def generalized_max_ratio(K, C, null_rtol=1e-13):
    """sup_v (v.C.v)/(v.K.v) for stacks of symmetric K >= 0.

    Returns (ratio, min relative eigenvalue of K).  Directions in the kernel
    of K contribute nothing if C vanishes there and +inf otherwise.
    """
    # diagonal equilibration; the ratio is invariant under this congruence and
    # the null test becomes meaningful across the wide dynamic range near the horizon
    d = np.sqrt(np.maximum(np.abs(np.diagonal(K, axis1=-2, axis2=-1)), np.abs(np.diagonal(C, axis1=-2, axis2=-1))))
    d = np.where(d > 0, 1.0 / np.where(d > 0, d, 1.0), 1.0)
    K = K * d[..., :, None] * d[..., None, :]
    C = C * d[..., :, None] * d[..., None, :]
    w, V = np.linalg.eigh(K)
    scale = np.max(np.abs(w), axis=-1, keepdims=True)
    scale = np.where(scale > 0, scale, 1.0)
    rel = w / scale
    W = np.swapaxes(V, -1, -2) @ C @ V
    null = rel <= null_rtol
    cscale = np.max(np.abs(np.linalg.eigvalsh(C)), axis=-1, keepdims=True) + 1e-300
    null_c = np.abs(np.diagonal(W, axis1=-2, axis2=-1)) / cscale
    blows = np.any(null & (null_c > 1e-12), axis=-1)
    ws = np.where(null, np.inf, w)
    Wt = W / np.sqrt(ws[..., :, None] * ws[..., None, :])
    Wt = np.where(np.isfinite(Wt), Wt, 0.0)
    ratio = np.linalg.eigvalsh(Wt)[..., -1]
    ratio = np.where(blows, np.inf, ratio)
    return ratio, np.min(rel, axis=-1)


def _limit_ratio(rs, params, g):
    """Large-l limit of the prop2 ratio: (r - 3M)/(r f^b) off the photon
    sphere (the l^2 parts dominate), with the l^1 parts taking over at r = 3M."""
    p = point_from_rstar(rs, g)
    fb = f_b(p, params)
    r = p.r
    tiny = np.abs(rs) < 1e-9
    safe = np.where(tiny, 1.0, fb.f)
    lim = np.where(tiny, p.one_minus_mu / (r * fb.f1), (r - 3.0 * g.M) / (r * safe))
    return lim


def _ratio_on(rs, ell, params, g, which, aux_sign, aux_scale=1.0):
    lam = float(ell * (ell + 1))
    K, C = mode_forms(np.atleast_1d(rs), lam, params, g, which, aux_sign, aux_scale)
    return generalized_max_ratio(K, C)


def best_constant(
    which: str,
    params: MultiplierParams,
    g: Geometry,
    rstar_range=(-40.0, 400.0),
    n_r: int = 2001,
    ell_max: int = 64,
    aux_sign: float = 1.0,
    grid: VerifierGrid = VerifierGrid(),
    psd_rtol: float = 1e-13,
    aux_scale: float = 1.0,
) -> BestConstantReport:
    """Best C with C * K_sphere >= controlled_sphere on all mode states.

    ``which`` is ``"prop2"`` (K against the controlled norm) or ``"prop3"``
    (K + K^aux against the norm including (d_t phi)^2 / r^4).  For prop2 an
    indefinite K raises :class:`IndefiniteFormError`; for prop3 the
    constant is reported infinite, with diagnostics.  ``aux_scale``
    multiplies K^aux (1 is the stated estimate; other values are a probe).

    Relative eigenvalues are measured after diagonal equilibration of each
    form pair.
    """
    if which not in ("prop2", "prop3"):
        raise ValueError(f"unknown constant {which!r}")
    if ell_max < 0:
        raise ValueError("empty ell range")
    lo, hi = rstar_range
    base = np.linspace(lo, hi, n_r)
    xs = np.unique(np.concatenate([base, _clustered(0.0, lo, hi, 60, smallest=1e-7)]))
    per_ell = []
    finite = True
    worst_psd = np.inf
    indefinite_at = []
    for ell in range(ell_max + 1):
        ratio, minrel = _ratio_on(xs, ell, params, g, which, aux_sign, aux_scale)
        worst_psd = min(worst_psd, float(np.min(minrel)))
        bad = minrel < -psd_rtol
        if np.any(bad):
            j = int(np.argmin(minrel))
            indefinite_at.append({"ell": ell, "r_star": float(xs[j]), "min_rel_eig": float(minrel[j])})
            if which == "prop2":
                raise IndefiniteFormError(
                    f"K indefinite at ell={ell}, r*={xs[j]:.6g} (rel eig {minrel[j]:.3e})",
                    indefinite_at[-1],
                )
            finite = False
            per_ell.append({"ell": ell, "ratio": float("inf"), "r_star": float(xs[j])})
            continue
        if not np.all(np.isfinite(ratio)):
            finite = False
            j = int(np.argmax(~np.isfinite(ratio)))
            per_ell.append({"ell": ell, "ratio": float("inf"), "r_star": float(xs[j])})
            continue
        v, x, _, _ = _zoom_min(lambda z: -_ratio_on(z, ell, params, g, which, aux_sign, aux_scale)[0], xs, grid)
        per_ell.append({"ell": ell, "ratio": -v, "r_star": x})
    lim = 0.0
    if which == "prop2":
        lv, lx, _, _ = _zoom_min(lambda z: -_limit_ratio(z, params, g), xs, grid)
        lim = -lv
        # l^1 form at the photon sphere: K_eff = r^2 F, controlled = r^3/(1-mu)
        p3 = point_from_rstar(np.array([0.0]), g)
        lam_part = float((p3.r**3 / p3.one_minus_mu)[0] / (p3.r**2 * big_F(p3, params))[0])
        lim = max(lim, lam_part)
    ratios = [e["ratio"] for e in per_ell]
    C = max(ratios + [lim]) if finite else float("inf")
    ell0 = per_ell[0]["ratio"] if per_ell else None
    diag = {"min_rel_eig_K": worst_psd}
    if indefinite_at:
        diag["indefinite_at"] = indefinite_at[:10]
        diag["aux_sign"] = aux_sign
        diag["aux_scale"] = aux_scale
    if which == "prop3" and not finite:
        diag["flag"] = "no finite constant: K + K_aux is not positive semidefinite on mode states"
    return BestConstantReport(
        which=which,
        constant=float(C),
        finite=bool(finite and np.isfinite(C)),
        alpha=params.alpha,
        c_star=params.c_star,
        ell_max=ell_max,
        grid={"rstar_min": lo, "rstar_max": hi, "n_r": int(len(xs))},
        per_ell=per_ell,
        limit_ratio=float(lim),
        ell0_ratio=ell0,
        diagnostics=diag,
    )


def validate_constant(
    report: BestConstantReport,
    params: MultiplierParams,
    g: Geometry,
    n_samples: int = 100_000,
    seed: int = 0,
    aux_sign: float = 1.0,
    aux_scale: float = 1.0,
):
    """Smallest relative slack (C K - controlled)/(C K + controlled) over
    random mode states within the report's grid range."""
    rng = np.random.default_rng(seed)
    rs = rng.uniform(report.grid["rstar_min"], report.grid["rstar_max"], n_samples)
    ell = rng.integers(0, report.ell_max + 1, n_samples)
    u, ur, ut = rng.standard_normal((3, n_samples))
    p = point_from_rstar(rs, g)
    lam = (ell * (ell + 1)).astype(float)
    jet = _mode_jet(lam, u, ur, ut, p)
    k = k_combined_sphere(jet, p, params, g)[0]
    if report.which == "prop3":
        k = k + aux_scale * k_aux_sphere(jet, p, g, aux_sign)
    ctrl = controlled_sphere(jet, p, g, include_time=(report.which == "prop3"))
    C = report.constant
    slack = (C * k - ctrl) / (np.abs(C * k) + np.abs(ctrl) + 1e-300)
    return float(np.min(slack))
