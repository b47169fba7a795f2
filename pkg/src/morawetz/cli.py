"""Command line driver.

Exit codes: 0 success, 1 configuration error, 2 a check failed (inadmissible
alpha, no finite constant, unstable estimate), 3 numerical instability.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import json
import logging
import math
import os
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .geometry import MultiplierParams
from .rw_solver import (
    InstabilityError,
    boundary_flux,
    bulk_integral,
    default_region,
    evolve,
    random_ensemble,
    run_ensemble,
)
from .verifier import (
    IndefiniteFormError,
    best_constant,
    certify,
    default_alphas,
    scan_alpha,
    validate_constant,
)

log = logging.getLogger("morawetz")

THREADS_ENV = "MORAWETZ_THREADS"
EXIT_OK, EXIT_CONFIG, EXIT_FAIL, EXIT_UNSTABLE = 0, 1, 2, 3
VALIDATION_TOL = -1e-10
THEOREM1_REFINE_TOL = 0.10
THEOREM1_SHIFT_TOL = 0.01

_MARK = "@@f17@@"


def _fmt(x: float) -> str:
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    return "%.17g" % x


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return _MARK + _fmt(float(obj))
    return obj


def dumps17(obj) -> str:
    """JSON with every float written to 17 significant digits."""
    text = json.dumps(_plain(obj), indent=2, sort_keys=True)
    return re.sub('"' + _MARK + '([^"]*)"', r"\1", text) + "\n"


def write_json(path: Path, obj):
    path.write_text(dumps17(obj))


def write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


@contextlib.contextmanager
def _mapper(threads: int):
    if threads <= 1:
        yield map
        return
    with ProcessPoolExecutor(max_workers=threads) as pool:
        yield pool.map


def _walk(rec, prefix=""):
    name = f"{prefix}{rec.name}"
    yield name, rec
    for c in rec.children:
        yield from _walk(c, name + "/")


def _margin_rows(report):
    for top in report.checks:
        for name, rec in _walk(top):
            coord = rec.diagnostics.get("sample_coordinate", "r_star")
            for pos, val, margin in rec.samples:
                yield (name, coord, pos, val, margin)


def _params(cfg, g, threads):
    """Alpha from the config, else the smallest certified alpha of the scan."""
    if cfg["alpha"] is not None:
        return MultiplierParams.from_alpha(cfg["alpha"], g), None
    v = cfg["verifier"]
    alphas = default_alphas(v["alpha_min"], v["alpha_max"], v["per_decade"])
    with _mapper(threads) as m:
        rep = scan_alpha(alphas, g, cfgmod.verifier_grid_of(cfg), verify_refinement=False, mapper=m)
    return MultiplierParams(rep.alpha, rep.c_star), rep


def cmd_verify(cfg, out: Path, threads: int) -> int:
    g = cfgmod.geometry_of(cfg)
    grid = cfgmod.verifier_grid_of(cfg)
    refine = cfg["verifier"]["verify_refinement"]
    if cfg["alpha"] is not None:
        rep = certify(MultiplierParams.from_alpha(cfg["alpha"], g), g, grid, verify_refinement=refine)
    else:
        v = cfg["verifier"]
        with _mapper(threads) as m:
            rep = scan_alpha(
                default_alphas(v["alpha_min"], v["alpha_max"], v["per_decade"]),
                g,
                grid,
                verify_refinement=refine,
                mapper=m,
            )
    write_json(out / "report.json", rep.to_dict())
    write_csv(out / "margins.csv", ["check", "coordinate", "position", "value", "margin"], _margin_rows(rep))
    log.info("alpha=%s verdict=%s", rep.alpha, "pass" if rep.verdict else "fail")
    return EXIT_OK if rep.verdict else EXIT_FAIL


def cmd_scan_alpha(cfg, out: Path, threads: int) -> int:
    g = cfgmod.geometry_of(cfg)
    v = cfg["verifier"]
    with _mapper(threads) as m:
        rep = scan_alpha(
            default_alphas(v["alpha_min"], v["alpha_max"], v["per_decade"]),
            g,
            cfgmod.verifier_grid_of(cfg),
            verify_refinement=v["verify_refinement"],
            mapper=m,
        )
    write_json(out / "scan.json", rep.to_dict())
    cols = ["alpha", "c_star", "verdict", "suffices2", "H_chain", "ratio_9_10", "midrange_exact"]
    write_csv(out / "scan.csv", cols, ([row[c] for c in cols] for row in rep.scan_table))
    return EXIT_OK if rep.verdict else EXIT_FAIL


def cmd_constants(cfg, out: Path, threads: int) -> int:
    g = cfgmod.geometry_of(cfg)
    params, _ = _params(cfg, g, threads)
    c = cfg["constants"]
    summary = {"alpha": params.alpha, "c_star": params.c_star, "constants": {}}
    code = EXIT_OK
    for which in c["which"]:
        try:
            rep = best_constant(
                which,
                params,
                g,
                rstar_range=tuple(c["rstar_range"]),
                n_r=c["n_r"],
                ell_max=c["ell_max"],
                aux_sign=float(c["aux_sign"]),
            )
        except IndefiniteFormError as exc:
            summary["constants"][which] = {"error": str(exc), "where": exc.where}
            code = EXIT_FAIL
            continue
        d = rep.to_dict()
        if rep.finite and c["n_validate"] > 0:
            slack = validate_constant(
                rep, params, g, n_samples=c["n_validate"], seed=cfg["seed"], aux_sign=float(c["aux_sign"])
            )
            d["validation_min_slack"] = slack
            d["validated"] = bool(slack >= VALIDATION_TOL)
            if slack < VALIDATION_TOL:
                code = EXIT_FAIL
        if not rep.finite:
            code = EXIT_FAIL
        summary["constants"][which] = d
        write_csv(
            out / f"constants_{which}.csv",
            ["ell", "ratio", "r_star"],
            ((e["ell"], float(e["ratio"]), float(e["r_star"])) for e in rep.per_ell),
        )
    write_json(out / "constants.json", summary)
    return code


def _identity_residuals(hist, region, params, g):
    res = {}
    for which, dens in (("J", "K"), ("J_aux", "K_aux"), ("J_T", None)):
        bulk = bulk_integral(hist, region, dens, params, g) if dens else 0.0
        res[which] = bulk - boundary_flux(hist, region, which, params, g).net
    return res


def cmd_evolve(cfg, out: Path, threads: int) -> int:
    g = cfgmod.geometry_of(cfg)
    params, _ = _params(cfg, g, threads)
    region = cfgmod.region_of(cfg)
    s = cfg["solver"]
    rows, levels = [], []
    for level in range(s["refinements"]):
        h = s["h"] / 2**level
        hist = evolve(cfgmod.evolution_config_of(cfg, h=h), g)
        res = _identity_residuals(hist, region, params, g)
        drift = hist.energy_drift()
        rows.append((h, res["J"], res["J_aux"], res["J_T"], drift))
        levels.append({"h": h, "residuals": res, "energy_drift": drift, "max_abs_psi": float(np.max(np.abs(hist.psi)))})
    ratios = {}
    for j, key in enumerate(("J", "J_aux", "J_T")):
        vals = [abs(r[1 + j]) for r in rows]
        ratios[key] = [vals[i] / vals[i + 1] if vals[i + 1] > 0 else float("nan") for i in range(len(vals) - 1)]
    write_csv(out / "convergence.csv", ["h", "residual_J", "residual_J_aux", "residual_J_T", "energy_drift"], rows)
    write_json(
        out / "summary.json",
        {"alpha": params.alpha, "ell": s["ell"], "region": s["region"], "levels": levels, "ratios": ratios},
    )
    return EXIT_OK


def cmd_check_theorem1(cfg, out: Path, threads: int) -> int:
    g = cfgmod.geometry_of(cfg)
    params, _ = _params(cfg, g, threads)
    e = cfg["ensemble"]
    window = tuple(e["window"])
    cfgs = [
        replace(c, window=window, M=cfg["mass"])
        for c in random_ensemble(e["n_runs"], cfg["seed"], ell_max=e["ell_max"], h=e["h"], t_final=e["t_final"])
    ]
    region = default_region(e["t_final"], window)
    tau = e["t_shift"]
    with _mapper(threads) as m:
        base = run_ensemble(cfgs, params, region, mapper=m)
        fine = run_ensemble([replace(c, h=c.h / 2) for c in cfgs], params, region, mapper=m)
        shifted = run_ensemble([replace(c, t0=c.t0 + tau) for c in cfgs], params, region.shifted(tau), mapper=m)
    runs_dir = out / "runs"
    runs_dir.mkdir(exist_ok=True)
    for rec in base:
        rr = rec.rows
        write_csv(
            runs_dir / f"run_{rec.index:03d}.csv",
            ["t", "energy_T", "bulk_K_row", "left", "right"],
            zip(rr["t"], rr["energy_T"], rr["bulk_K_row"], rr["left"], rr["right"]),
        )
    C = max(r.ratio for r in base)
    C_fine = max(r.ratio for r in fine)
    C_shift = max(r.ratio for r in shifted)
    finite = bool(np.isfinite(C) and np.isfinite(C_fine))
    rel_refine = abs(C_fine - C) / C if C > 0 else float("inf")
    rel_shift = abs(C_shift - C) / C if C > 0 else float("inf")
    summary = {
        "alpha": params.alpha,
        "region": {"t1": region.t1, "t2": region.t2, "r1": region.r1, "r2": region.r2},
        "seed": cfg["seed"],
        "C": C,
        "C_refined": C_fine,
        "C_shifted": C_shift,
        "finite": finite,
        "refinement_change": rel_refine,
        "shift_change": rel_shift,
        "stable": bool(rel_refine <= THEOREM1_REFINE_TOL),
        "translation_invariant": bool(rel_shift <= THEOREM1_SHIFT_TOL),
        "runs": [
            {
                "index": r.index,
                "ell": r.ell,
                "ratio": r.ratio,
                "ratio_refined": f.ratio,
                "bulk_controlled": r.bulk,
                "data_energy": r.data_energy,
                "energy_drift": r.energy_drift,
                "identity_residual": r.identity_residual,
                "config": {
                    "psi": [vars(b) for b in c.data.psi],
                    "psi_t": [vars(b) for b in c.data.psi_t],
                    "advect": c.data.advect,
                    "h": c.h,
                },
            }
            for r, f, c in zip(base, fine, cfgs)
        ],
    }
    write_json(out / "ensemble.json", summary)
    ok = finite and summary["stable"] and summary["translation_invariant"]
    return EXIT_OK if ok else EXIT_FAIL


COMMANDS = {
    "verify": cmd_verify,
    "scan-alpha": cmd_scan_alpha,
    "constants": cmd_constants,
    "evolve": cmd_evolve,
    "check-theorem1": cmd_check_theorem1,
}


def build_parser():
    ap = argparse.ArgumentParser(prog="morawetz", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", type=Path, default=None, help="JSON config (defaults if omitted)")
    ap.add_argument("--out", type=Path, default=None, help="output directory (overrides config)")
    ap.add_argument("--threads", type=int, default=None, help=f"worker processes (default ${THREADS_ENV} or 1)")
    ap.add_argument("--seed", type=int, default=None, help="random seed (overrides config)")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = cfgmod.load_config(args.config)
    except cfgmod.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.seed is not None:
        if args.seed < 0:
            print("config error: seed must be non-negative", file=sys.stderr)
            return EXIT_CONFIG
        cfg["seed"] = args.seed
    threads = args.threads
    if threads is None:
        env = os.environ.get(THREADS_ENV)
        try:
            threads = int(env) if env else cfg["threads"]
        except ValueError:
            print(f"config error: {THREADS_ENV}={env!r} is not an integer", file=sys.stderr)
            return EXIT_CONFIG
    if threads < 1:
        print("config error: threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    out = args.out if args.out is not None else Path(cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    try:
        return COMMANDS[args.command](cfg, out, threads)
    except InstabilityError as exc:
        write_json(out / "instability.json", {"error": str(exc), "diagnostics": exc.diagnostics})
        print(f"instability: {exc}", file=sys.stderr)
        return EXIT_UNSTABLE
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
