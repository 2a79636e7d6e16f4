"""Run orchestration: config parsing, mode dispatch, deterministic artifacts.

A run is described by one JSON config document.  Outputs land in the
output directory as ``report.json`` (schema-versioned, with the full
config echo and its hash), ``trace.csv`` / ``trace_plus.csv`` for solver
iteration traces, and ``expansion.csv`` for expansion sweeps.  Identical
configs produce bit-identical outputs (no timestamps, seeded randomness,
deterministic eigensolves).

Exit codes: 0 success, 2 validation failure, 3 solver non-convergence,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from .errors import (
    ConfigurationError,
    DomainError,
    NumericalError,
    ProjectionError,
    ResolutionError,
)
from .functional import (
    ProblemSpec,
    RadialCoefficient,
    constants_report,
    estimate_coercivity,
    estimate_sobolev_constant,
    estimate_companion_constant,
    thresholds,
)
from .geometry import ModelGeometry, build_grid
from .nehari import NMINUS, NPLUS, SolverOptions, solve_both
from .testfn import condition_C, energy_gap, expansion_check, sharp_condition

SCHEMA_VERSION = 1
EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NONCONVERGENCE = 3
EXIT_NUMERICAL = 4

MODES = ("solve", "constants", "expansion", "gap", "sharp-sweep")

_SCHEMA = {
    "mode": None,
    "problem": {
        "geometry": {"kind": None, "n": None, "radius": None},
        "a": {"center": None, "lap_center": None},
        "b": {"center": None, "lap_center": None},
        "f": {"center": None, "lap_center": None},
        "q": None,
        "sigma": None,
        "mu": None,
        "r": None,
        "s": None,
        "lambda": {"mode": None, "value": None},
        "bc": None,
    },
    "grid": {"m": None, "grading": None},
    "solver": {
        "tol": None,
        "grad_atol": None,
        "max_iters": None,
        "distinct_tol": None,
        "seed": None,
        "include_solution": None,
    },
    "constants": {"eps": None},
    "expansion": {"eps_list": None, "delta": None, "log_ratio_threshold": None},
    "gap": {"eps_list": None, "delta": None},
    "sweep": {"points": None, "lambda_fraction": None},
    "output": {"directory": None, "formats": None, "plots": None},
}


class ValidationFailure(Exception):
    def __init__(self, errors):
        super().__init__("; ".join(errors))
        self.errors = errors


def _check_keys(cfg, schema, path, errors):
    for key, val in cfg.items():
        if key not in schema:
            errors.append(f"unknown key {'.'.join(path + [key])!r}")
        elif isinstance(schema[key], dict):
            if not isinstance(val, dict):
                errors.append(f"{'.'.join(path + [key])} must be an object")
            else:
                _check_keys(val, schema[key], path + [key], errors)


def validate_config(cfg: dict) -> dict:
    """Reject unknown keys and out-of-range values; fill defaults."""
    errors: list = []
    if not isinstance(cfg, dict):
        raise ValidationFailure(["config must be a JSON object"])
    _check_keys(cfg, _SCHEMA, [], errors)
    mode = cfg.get("mode")
    if mode not in MODES:
        errors.append(f"mode must be one of {MODES}, got {mode!r}")
    if "problem" not in cfg:
        errors.append("missing 'problem' section")
    if "grid" not in cfg:
        errors.append("missing 'grid' section")
    if errors:
        raise ValidationFailure(errors)
    return cfg


def _coefficient(d: dict | None) -> RadialCoefficient:
    d = d or {}
    return RadialCoefficient(
        center=float(d.get("center", 0.0)), lap_center=float(d.get("lap_center", 0.0))
    )


def build_problem(cfg: dict, lam: float = 0.0) -> ProblemSpec:
    p = cfg["problem"]
    gcfg = p["geometry"]
    geom = ModelGeometry(kind=gcfg["kind"], n=int(gcfg["n"]), radius=float(gcfg["radius"]))
    grid = build_grid(geom, int(cfg["grid"]["m"]), float(cfg["grid"].get("grading", 1.0)))
    return ProblemSpec(
        geom=geom,
        grid=grid,
        a=_coefficient(p.get("a")),
        b=_coefficient(p.get("b")),
        f=_coefficient(p.get("f", {"center": 1.0})),
        q=float(p.get("q", 1.5)),
        sigma=float(p.get("sigma", 1.5)),
        mu=float(p.get("mu", 3.0)),
        lam=lam,
        r=float(p.get("r", 4.0)),
        s=float(p.get("s", 4.0)),
        bc=p.get("bc", "clamped"),
    )


def resolve_lambda(cfg: dict, spec: ProblemSpec, report) -> float:
    lam_cfg = cfg["problem"].get("lambda", {"mode": "absolute", "value": 0.0})
    mode = lam_cfg.get("mode", "absolute")
    value = float(lam_cfg.get("value", 0.0))
    if mode == "absolute":
        return value
    if mode == "frac-lambda0":
        return value * report.lambda0
    if mode == "frac-min":
        return value * min(report.lambda0, report.lambda2)
    raise ValidationFailure([f"unknown lambda mode {mode!r}"])


def solver_options(cfg: dict) -> SolverOptions:
    s = cfg.get("solver", {})
    return SolverOptions(
        tol=float(s.get("tol", 1e-8)),
        grad_atol=float(s.get("grad_atol", 1e-12)),
        max_iters=int(s.get("max_iters", 8000)),
        distinct_tol=float(s.get("distinct_tol", 1e-3)),
    )


def config_hash(cfg: dict) -> str:
    canon = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def _report_skeleton(cfg: dict) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "config": cfg,
        "config_hash": config_hash(cfg),
        "mode": cfg["mode"],
    }


def _write_json(path: Path, payload: dict):
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def _write_trace(path: Path, trace):
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iter", "t_projection", "J", "phi_residual", "grad_residual", "step"])
        for row in trace:
            w.writerow([repr(v) for v in row])


def _write_expansion_csv(path: Path, rep):
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["eps", "int_bilap", "int_fN", "fit_model", "coeff_fit", "coeff_paper", "rel_dev"])
        for row in rep.csv_rows():
            w.writerow(
                [repr(row["eps"]), repr(row["int_bilap"]), repr(row["int_fN"]),
                 row["fit_model"], repr(row["coeff_fit"]), repr(row["coeff_paper"]),
                 repr(row["rel_dev"])]
            )


def _run_constants(cfg: dict, outdir: Path, report: dict) -> int:
    spec = build_problem(cfg)
    eps = float(cfg.get("constants", {}).get("eps", 1e-2))
    seed = int(cfg.get("solver", {}).get("seed", 1234))
    rep = constants_report(spec, eps=eps, seed=seed)
    lam = resolve_lambda(cfg, spec, rep) if rep.coercive else float("nan")
    report["constants"] = rep.to_dict()
    report["resolved_lambda"] = lam
    return EXIT_OK if rep.coercive else EXIT_NUMERICAL


def _run_solve(cfg: dict, outdir: Path, report: dict) -> int:
    spec0 = build_problem(cfg)
    eps = float(cfg.get("constants", {}).get("eps", 1e-2))
    seed = int(cfg.get("solver", {}).get("seed", 1234))
    crep = constants_report(spec0, eps=eps, seed=seed)
    if not crep.coercive:
        report["constants"] = crep.to_dict()
        report["error"] = "operator not coercive on this discretization"
        return EXIT_NUMERICAL
    lam = resolve_lambda(cfg, spec0, crep)
    spec = spec0.with_lam(lam)
    opts = solver_options(cfg)
    rp, rm = solve_both(spec, opts)
    include = bool(cfg.get("solver", {}).get("include_solution", False))
    report["constants"] = crep.to_dict()
    report["resolved_lambda"] = lam
    report["branch_positive"] = rp.to_dict(include_solution=include)
    report["branch_negative"] = rm.to_dict(include_solution=include)
    diff = rp.u.values - rm.u.values
    from .operators import Field, h22_norm

    report["solution_distance_h22"] = h22_norm(Field(diff, spec.grid), spec.geom)
    formats = cfg.get("output", {}).get("formats", ["json", "csv"])
    if "csv" in formats:
        _write_trace(outdir / "trace.csv", rm.step_trace)
        _write_trace(outdir / "trace_plus.csv", rp.step_trace)
    if cfg.get("output", {}).get("plots", False):
        _plot_energy_trace(outdir, rm.step_trace)
    return EXIT_OK if (rp.converged and rm.converged) else EXIT_NONCONVERGENCE


def _run_expansion(cfg: dict, outdir: Path, report: dict) -> int:
    spec = build_problem(cfg)
    e = cfg.get("expansion", {})
    eps_list = e.get("eps_list") or _default_eps_list(spec)
    delta = e.get("delta")
    thresh = float(e.get("log_ratio_threshold", 5.0))
    rep = expansion_check(spec, eps_list, delta=delta, log_ratio_threshold=thresh)
    report["expansion"] = rep.to_dict()
    formats = cfg.get("output", {}).get("formats", ["json", "csv"])
    if "csv" in formats:
        _write_expansion_csv(outdir / "expansion.csv", rep)
    if cfg.get("output", {}).get("plots", False):
        _plot_expansion(outdir, rep)
    return EXIT_OK if rep.fit_ok else EXIT_NUMERICAL


def _default_eps_list(spec: ProblemSpec):
    R = spec.geom.radius
    return [0.08 * R * 0.78**k for k in range(8)]


def _run_gap(cfg: dict, outdir: Path, report: dict) -> int:
    spec = build_problem(cfg)
    crep = None
    lam_cfg = cfg["problem"].get("lambda")
    if lam_cfg and lam_cfg.get("mode", "absolute") != "absolute":
        crep = constants_report(spec)
        spec = spec.with_lam(resolve_lambda(cfg, spec, crep))
    elif lam_cfg:
        spec = spec.with_lam(float(lam_cfg.get("value", 0.0)))
    g = cfg.get("gap", {})
    eps_list = g.get("eps_list") or _default_eps_list(spec)
    delta = g.get("delta")
    holds, margin = condition_C(spec)
    rows = []
    for eps in eps_list:
        sup_J, threshold, verdict = energy_gap(spec, float(eps), delta)
        rows.append(
            {"eps": float(eps), "sup_J": sup_J, "threshold": threshold,
             "verdict": verdict, "margin": threshold - sup_J}
        )
    report["condition_C"] = {"holds": holds, "margin": margin}
    report["gap"] = rows
    return EXIT_OK


def _run_sharp_sweep(cfg: dict, outdir: Path, report: dict) -> int:
    sw = cfg.get("sweep", {})
    points = int(sw.get("points", 8))
    lam_frac = float(sw.get("lambda_fraction", 0.1))
    eps_s = float(cfg.get("constants", {}).get("eps", 1e-2))
    seed = int(cfg.get("solver", {}).get("seed", 1234))
    opts = solver_options(cfg)
    rows = {}
    worst = EXIT_OK
    base = build_problem(cfg)
    k0 = estimate_sobolev_constant(base.n)
    for k in range(1, points + 1):
        sigma = 2.0 - 2.0**-k
        mu = 4.0 - 2.0 ** (-k + 1)
        spec0 = ProblemSpec(
            geom=base.geom, grid=base.grid, a=base.a, b=base.b, f=base.f,
            q=base.q, sigma=sigma, mu=mu, lam=0.0, r=base.r, s=base.s, bc=base.bc,
        )
        Lam = estimate_coercivity(spec0)
        row = {"sigma": sigma, "mu": mu, "Lambda": Lam}
        if Lam <= 0.0:
            row["coercive"] = False
            worst = max(worst, EXIT_NUMERICAL)
        else:
            row["coercive"] = True
            A_eps = estimate_companion_constant(spec0, k0, eps=eps_s, seed=seed)
            trep = thresholds(spec0, Lam, k0, A_eps, eps=eps_s)
            lam = lam_frac * min(trep.lambda0, trep.lambda2)
            spec = spec0.with_lam(lam)
            hold, value = sharp_condition(spec, k0, A_eps, k0, A_eps)
            rp, rm = solve_both(spec, opts)
            row.update(
                {
                    "lambda": lam,
                    "sharp_condition_value": value,
                    "sharp_condition_holds": hold,
                    "J_positive": rp.J_value,
                    "J_negative": rm.J_value,
                    "converged": rp.converged and rm.converged,
                }
            )
            if not (rp.converged and rm.converged):
                worst = max(worst, EXIT_NONCONVERGENCE)
        rows[f"{sigma:.10f},{mu:.10f}"] = row
    report["sweep"] = [rows[key] for key in sorted(rows)]
    first = report["sweep"][0]["Lambda"] if report["sweep"] else float("nan")
    report["coercivity_trend"] = {
        "Lambda_first": first,
        "Lambda_min": min(r["Lambda"] for r in report["sweep"]),
        "stays_above_half_first": all(
            r["Lambda"] >= 0.5 * first for r in report["sweep"]
        ),
    }
    return worst


def _plot_energy_trace(outdir: Path, trace):
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        return
    fig, ax = plt.subplots()
    ax.plot([row[0] for row in trace], [row[2] for row in trace])
    ax.set_xlabel("iteration")
    ax.set_ylabel("energy")
    fig.savefig(outdir / "energy_trace.png", dpi=120)
    plt.close(fig)


def _plot_expansion(outdir: Path, rep):
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        return
    fig, ax = plt.subplots()
    eps = np.asarray(rep.epsilons)
    ax.plot(eps**2, np.asarray(rep.int_bilap) * rep.scale, "o-", label="(Delta u)^2")
    ax.plot(eps**2, np.asarray(rep.int_fN) * rep.scale, "s-", label="f|u|^N")
    ax.set_xlabel("eps^2")
    ax.set_ylabel("normalized integral")
    ax.legend()
    fig.savefig(outdir / "expansion_fit.png", dpi=120)
    plt.close(fig)


_RUNNERS = {
    "constants": _run_constants,
    "solve": _run_solve,
    "expansion": _run_expansion,
    "gap": _run_gap,
    "sharp-sweep": _run_sharp_sweep,
}


def run(cfg: dict, outdir: Path, quiet: bool = False) -> int:
    """Validate, dispatch on mode, write report.json; returns the exit code."""
    try:
        cfg = validate_config(cfg)
    except ValidationFailure as exc:
        record = {"error": "validation", "details": exc.errors}
        print(json.dumps(record, sort_keys=True), file=sys.stderr)
        return EXIT_VALIDATION
    outdir.mkdir(parents=True, exist_ok=True)
    report = _report_skeleton(cfg)
    try:
        code = _RUNNERS[cfg["mode"]](cfg, outdir, report)
    except (DomainError, ConfigurationError, ValidationFailure, ResolutionError) as exc:
        record = {"error": "validation", "details": [str(exc)]}
        print(json.dumps(record, sort_keys=True), file=sys.stderr)
        return EXIT_VALIDATION
    except (NumericalError, ProjectionError, np.linalg.LinAlgError) as exc:
        report["error"] = str(exc)
        _write_json(outdir / "report.json", report)
        print(json.dumps({"error": "numerical", "details": [str(exc)]}, sort_keys=True),
              file=sys.stderr)
        return EXIT_NUMERICAL
    report["exit_code"] = code
    _write_json(outdir / "report.json", report)
    if not quiet:
        print(f"mode={cfg['mode']} exit={code} report={outdir / 'report.json'}")
    return code


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="nehari-radial",
        description="Two-branch constrained minimization runs for the singular "
        "fourth-order radial problem, plus constants/expansion verification.",
    )
    parser.add_argument("--config", required=True, help="path to the JSON run config")
    parser.add_argument("--mode", choices=MODES, help="override the config's mode")
    parser.add_argument("--out", help="output directory (overrides config and environment)")
    parser.add_argument("--quiet", action="store_true")
    args = parser.parse_args(argv)
    try:
        cfg = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        print(json.dumps({"error": "validation", "details": [str(exc)]},
                         sort_keys=True), file=sys.stderr)
        return EXIT_VALIDATION
    if args.mode:
        cfg["mode"] = args.mode
    outdir = (
        args.out
        or os.environ.get("NEHARI_RADIAL_OUT")
        or cfg.get("output", {}).get("directory", "out")
    )
    return run(cfg, Path(outdir), quiet=args.quiet)


if __name__ == "__main__":
    sys.exit(main())
