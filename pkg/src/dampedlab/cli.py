"""Command line entry point: ``lab run|validate|list-media|selftest``.

Configuration files are TOML (``.toml``) or JSON (any other suffix) with
the layout

.. code-block:: toml

    kind = "sweep"          # sweep, evolve, flow, escape, mourre, fourier-check, decay-check
    seed = 0
    workers = 1
    output = "runs/sweep"   # relative paths resolve against $LAB_OUTPUT_ROOT (default: cwd)

    [medium]
    name = "free"           # a builtin name, or "custom" with [medium.metric] / [medium.absorption]
    params = {}             # keyword arguments of the builtin factory

    [grid]
    dimension = 1
    half_width = 6.0
    points = 12

    [sponge]
    enabled = false
    width = 3.0             # optional, default L/4
    strength = 1.0

    [sweep]                 # one section named after the kind; see KIND_DEFAULTS
    regime = "intermediate"
    tau = [0.5, 1.0]

A custom medium gives radial profiles as
``{knots = [...], coefficients = [[...], ...], fill_inner = 1.0, fill_outer = 1.0}``.
Exit status: 0 success, 1 a check failed, 2 invalid input.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np
import scipy

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from . import __version__
from .discretize import Grid, SpongeSpec, assemble_absorption_and_weights, assemble_dilation_generator, assemble_h0
from .errors import ConstructionError, InputError, LabError
from .medium import MediumSpec, RadialProfile, builtin_media, get_medium, radial_medium, verify_symbol_decay

OUTPUT_ROOT_ENV = "LAB_OUTPUT_ROOT"
KINDS = ("sweep", "evolve", "flow", "escape", "mourre", "fourier-check", "decay-check")

TOP_DEFAULTS = {"kind": None, "seed": 0, "workers": 1, "output": None}
MEDIUM_DEFAULTS = {"name": "free", "params": {}, "metric": None, "absorption": None, "rho": 1.0}
GRID_DEFAULTS = {"dimension": 1, "half_width": 6.0, "points": 12}
SPONGE_DEFAULTS = {"enabled": False, "width": None, "strength": 1.0}
KIND_DEFAULTS = {
    "sweep": {"regime": "intermediate", "tau": [0.5, 0.75, 1.0, 1.25, 1.5], "n": 0, "delta1": 0.0,
              "delta2": 0.0, "deriv": None, "mu": None, "mu_factor": 0.05, "method": "auto",
              "tol": 1e-10, "rtol": 1e-3, "fit": True},
    "evolve": {"T": 20.0, "dt": None, "width": 1.0, "center": None, "deltas": [1.0],
               "sample_every": 10, "balance_tol": 1e-4},
    "flow": {"interval": [0.5, 1.5], "count": 1000, "radius": 5.0, "T_max": 200.0, "dt": 0.01,
             "threshold": 1e-8, "x0": None, "xi0": None, "T": 20.0},
    "escape": {"interval": [0.5, 1.5], "count": 1000, "radius": 5.0, "T_max": 100.0, "dt": 0.0025,
               "damping_level": 0.3, "check_seed": None},
    "mourre": {"J": [0.5, 1.5], "beta": [0.0], "commutator": "matrix"},
    "fourier-check": {"tau": 1.0, "mu": 0.5, "dt": 0.05, "T": None, "width": 1.0, "tol": 1e-2,
                      "min_ratio": 3.5},
    "decay-check": {"radii": [2.0, 4.0, 8.0, 16.0, 32.0, 64.0], "growth_factor": 2.0,
                    "directions": 64},
}


# ---------------------------------------------------------------- configuration

def _merge(section: dict | None, defaults: dict, where: str) -> dict:
    section = {} if section is None else section
    if not isinstance(section, dict):
        raise InputError(f"[{where}] must be a table")
    unknown = set(section) - set(defaults)
    if unknown:
        raise InputError(f"unknown key(s) in [{where}]: {', '.join(sorted(unknown))}")
    out = copy.deepcopy(defaults)
    out.update(section)
    return out


def load_config(path) -> dict:
    """Read a TOML or JSON configuration file (no validation)."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc}") from exc
    try:
        if path.suffix == ".toml":
            return tomllib.loads(raw.decode())
        return json.loads(raw)
    except (tomllib.TOMLDecodeError, json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise InputError(f"malformed config {path}: {exc}") from exc


def normalize_config(raw: dict) -> dict:
    """Fill defaults and reject unknown keys; the result is JSON-serialisable."""
    if not isinstance(raw, dict):
        raise InputError("config must be a table")
    kind = raw.get("kind")
    if kind not in KINDS:
        raise InputError(f"unknown experiment kind {kind!r}; expected one of {', '.join(KINDS)}")
    sections = {"medium", "grid", "sponge", kind}
    top = {k: v for k, v in raw.items() if k not in sections}
    cfg = _merge(top, TOP_DEFAULTS, "top level")
    cfg["medium"] = _merge(raw.get("medium"), MEDIUM_DEFAULTS, "medium")
    cfg["grid"] = _merge(raw.get("grid"), GRID_DEFAULTS, "grid")
    cfg["sponge"] = _merge(raw.get("sponge"), SPONGE_DEFAULTS, "sponge")
    cfg[kind] = _merge(raw.get(kind), KIND_DEFAULTS[kind], kind)
    if not isinstance(cfg["seed"], int) or isinstance(cfg["seed"], bool):
        raise InputError("seed must be an integer")
    if not isinstance(cfg["workers"], int) or cfg["workers"] < 1:
        raise InputError("workers must be a positive integer")
    g = cfg["grid"]
    for key in ("dimension", "points"):
        if not isinstance(g[key], int) or isinstance(g[key], bool):
            raise InputError(f"grid.{key} must be an integer")
    if not isinstance(g["half_width"], (int, float)):
        raise InputError("grid.half_width must be a number")
    return cfg


def build_medium(section: dict, d: int) -> MediumSpec:
    if section["name"] == "custom":
        if section["metric"] is None:
            raise InputError("a custom medium needs [medium.metric]")
        metric = RadialProfile.from_dict(section["metric"])
        absorption = None if section["absorption"] is None else RadialProfile.from_dict(section["absorption"])
        return radial_medium(d, metric, absorption, float(section["rho"]), "custom")
    if not isinstance(section["params"], dict):
        raise InputError("medium.params must be a table")
    try:
        return get_medium(section["name"], d, **section["params"])
    except TypeError as exc:
        raise InputError(f"bad parameters for medium {section['name']!r}: {exc}") from exc


def build_grid(section: dict) -> Grid:
    grid = Grid(section["dimension"], float(section["half_width"]), section["points"])
    if grid.points_per_axis < 3:
        raise InputError("grid.points must be at least 3")
    return grid


def build_sponge(section: dict) -> SpongeSpec | None:
    if not section["enabled"]:
        return None
    return SpongeSpec(section["width"], float(section["strength"]))


def validate(cfg: dict) -> tuple:
    """Resolve medium, grid and sponge; raises :class:`InputError` on problems."""
    medium = build_medium(cfg["medium"], cfg["grid"]["dimension"])
    grid = build_grid(cfg["grid"])
    sponge = build_sponge(cfg["sponge"])
    kind = cfg["kind"]
    p = cfg[kind]
    if kind == "sweep":
        _sweep_plan(p).check_grid(grid)
    if kind == "mourre" and p["commutator"] not in ("matrix", "symbol"):
        raise InputError("mourre.commutator must be 'matrix' or 'symbol'")
    if kind in ("flow", "escape"):
        lo, hi = p["interval"]
        if not 0 < lo <= hi:
            raise InputError(f"{kind}.interval must lie in (0, inf)")
    return medium, grid, sponge


def output_dir(cfg: dict, override: str | None = None) -> Path:
    target = override or cfg["output"] or f"lab-output/{cfg['kind']}"
    path = Path(target)
    if not path.is_absolute():
        path = Path(os.environ.get(OUTPUT_ROOT_ENV, ".")) / path
    return path


# ---------------------------------------------------------------- experiments

def _sweep_plan(p: dict):
    from .sweep import SweepPlan

    return SweepPlan(p["regime"], tuple(p["tau"]), p["n"], p["delta1"], p["delta2"], p["deriv"],
                     p["mu"], p["mu_factor"])


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _r(x) -> str:
    return repr(float(x))


def _run_sweep(cfg, medium, grid, sponge, out: Path) -> tuple:
    from .sweep import fit_power_law, predicted_exponent, run_sweep, write_fit_csv, write_sweep_csv

    p = cfg["sweep"]
    plan = _sweep_plan(p)
    result = run_sweep(plan, medium, grid, sponge, workers=cfg["workers"], method=p["method"],
                       tol=p["tol"], seed=cfg["seed"], rtol=p["rtol"])
    write_sweep_csv(result, out / "sweep.csv")
    files = ["sweep.csv"]
    summary = {"points": len(result.points), "failed": len(result.failed())}
    if p["fit"] and len(plan.tau_values) >= 2:
        try:
            fit = fit_power_law(result)
        except LabError as exc:
            summary["fit_error"] = str(exc)
        else:
            write_fit_csv([(plan.regime, fit, predicted_exponent(plan.regime, grid.dimension, plan.n))],
                          out / "fit.csv")
            files.append("fit.csv")
            summary.update(exponent=fit.exponent, r_squared=fit.r_squared)
    return not result.failed(), files, summary


def _run_evolve(cfg, medium, grid, sponge, out: Path) -> tuple:
    from .evolve import gaussian_bump, max_stable_step, run_and_trace, write_trace_csv

    p = cfg["evolve"]
    h0 = assemble_h0(medium, grid)
    a_op = _damping(medium, grid, sponge)
    dt = p["dt"] or 0.5 * max_stable_step(h0)
    u0 = gaussian_bump(grid, p["center"], p["width"])
    trace = run_and_trace(h0, a_op, u0, np.zeros_like(u0), p["T"], dt, tuple(p["deltas"]),
                          p["sample_every"], data_radius=2.0 * p["width"])
    write_trace_csv(trace, out / "trace.csv")
    E = trace.global_energy
    balance = trace.balance_error()
    monotone = bool(np.all(np.diff(E) <= 1e-12 * max(E[0], 1e-300)))
    ok = monotone and balance <= p["balance_tol"]
    return ok, ["trace.csv"], {"dt": dt, "balance_error": balance, "monotone": monotone}


def _damping(medium, grid, sponge):
    from .discretize import sponge_damping

    a_op = assemble_absorption_and_weights(medium, grid)[0]
    if sponge is None:
        return a_op
    # the sponge acts as extra damping in the time domain
    return type(a_op)((a_op.matrix + sponge_damping(sponge, grid).matrix).tocsr(), "Absorption",
                      grid, True)


def _run_flow(cfg, medium, grid, sponge, out: Path) -> tuple:
    from .flow import PhasePoint, geometric_control_check, integrate_flow, write_trajectory_csv

    p = cfg["flow"]
    rep = geometric_control_check(medium, tuple(p["interval"]), p["count"], p["radius"], p["T_max"],
                                  p["dt"], p["threshold"], seed=cfg["seed"])
    _write_rows(out / "control.csv",
                ["samples", "trapped", "semi_trapped", "controlled", "undecided", "worst_margin",
                 "fraction_controlled", "inconclusive", "passed"],
                [[rep.samples, rep.trapped, rep.semi_trapped, rep.controlled, rep.undecided,
                  _r(rep.worst_margin), _r(rep.fraction_controlled), int(rep.inconclusive),
                  int(rep.passed)]])
    files = ["control.csv"]
    if p["x0"] is not None and p["xi0"] is not None:
        traj = integrate_flow(medium, PhasePoint(np.asarray(p["x0"], float), np.asarray(p["xi0"], float)),
                              p["T"], p["dt"])
        write_trajectory_csv(medium, traj, out / "trajectory.csv")
        files.append("trajectory.csv")
    ok = rep.passed or rep.inconclusive
    return ok, files, {"passed": rep.passed, "inconclusive": rep.inconclusive,
                       "trapped": rep.trapped, "failures": len(rep.failures)}


def _run_escape(cfg, medium, grid, sponge, out: Path) -> tuple:
    from .flow import build_escape_function, poisson_bracket_check, sample_energy_shell, write_bracket_csv

    p = cfg["escape"]
    interval = tuple(p["interval"])
    f = build_escape_function(medium, interval, count=p["count"], radius=p["radius"], T_max=p["T_max"],
                              dt=p["dt"], damping_level=p["damping_level"], seed=cfg["seed"])
    check_seed = cfg["seed"] if p["check_seed"] is None else p["check_seed"]
    X, XI = sample_energy_shell(medium, interval, p["count"], p["radius"], check_seed)
    rep = poisson_bracket_check(f, X, XI)
    write_bracket_csv(rep, out / "escape.csv")
    return rep.passed, ["escape.csv"], {"beta": f.beta, "c0": f.c0, "c0_achieved": rep.c0_achieved,
                                        "worst_margin": rep.worst_margin, "bumps": len(f.bumps)}


def _run_mourre(cfg, medium, grid, sponge, out: Path) -> tuple:
    from .flow import mourre_commutator_check, symbol_commutator, write_mourre_csv

    p = cfg["mourre"]
    if grid.size > 4096:
        raise InputError("the commutator check needs at most 4096 unknowns")
    H = assemble_h0(medium, grid)
    A = assemble_dilation_generator(grid)
    a = assemble_absorption_and_weights(medium, grid)[0]
    comm = symbol_commutator(medium, grid) if p["commutator"] == "symbol" else None
    betas = [float(b) for b in p["beta"]]
    reports = mourre_commutator_check(H, A, a, tuple(p["J"]), betas, commutator=comm)
    write_mourre_csv(reports, out / "mourre.csv")
    ok = all(r.positive for r in reports)
    return ok, ["mourre.csv"], {"alpha": [r.alpha_estimate for r in reports],
                                "rank": reports[0].projector_rank}


def _run_fourier(cfg, medium, grid, sponge, out: Path) -> tuple:
    from .evolve import gaussian_bump, laplace_transform_check

    p = cfg["fourier-check"]
    h0 = assemble_h0(medium, grid)
    a_op = _damping(medium, grid, sponge)
    u0 = gaussian_bump(grid, None, p["width"])
    u1 = np.zeros_like(u0)
    rows, errors = [], []
    for dt in (p["dt"], 0.5 * p["dt"]):
        rep = laplace_transform_check(h0, a_op, u0, u1, p["tau"], p["mu"], dt, p["T"])
        errors.append(rep.relative_error)
        rows.append([_r(dt), _r(rep.relative_error), _r(rep.velocity_error)])
    _write_rows(out / "fourier.csv", ["dt", "relative_error", "velocity_error"], rows)
    ratio = errors[0] / max(errors[1], 1e-300)
    ok = errors[0] <= p["tol"] and ratio >= p["min_ratio"]
    return ok, ["fourier.csv"], {"errors": errors, "ratio": ratio}


def _run_decay(cfg, medium, grid, sponge, out: Path) -> tuple:
    p = cfg["decay-check"]
    rep = verify_symbol_decay(medium, p["radii"], p["growth_factor"], p["directions"], cfg["seed"])
    _write_rows(out / "decay.csv", ["radius", *rep.labels],
                [[_r(r), *(_r(c) for c in row)] for r, row in zip(rep.radii, rep.constants)])
    return rep.passed, ["decay.csv"], {"violations": [str(v) for v in rep.violations]}


RUNNERS = {
    "sweep": _run_sweep,
    "evolve": _run_evolve,
    "flow": _run_flow,
    "escape": _run_escape,
    "mourre": _run_mourre,
    "fourier-check": _run_fourier,
    "decay-check": _run_decay,
}


def _versions() -> dict:
    from .flow import BACKEND

    return {"dampedlab": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version(), "flow_backend": BACKEND}


def run_experiment(cfg: dict, output: str | None = None) -> int:
    """Run a normalised config; returns the exit status."""
    medium, grid, sponge = validate(cfg)
    out = output_dir(cfg, output)
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    try:
        ok, files, summary = RUNNERS[cfg["kind"]](cfg, medium, grid, sponge, out)
        error = ""
    except ConstructionError as exc:
        ok, files, summary, error = False, [], {}, str(exc)
    wall = time.perf_counter() - start
    with open(out / "config_echo.json", "w") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True)
    manifest = {"config": cfg, "versions": _versions(), "wall_time_s": wall, "status": "pass" if ok else "fail",
                "files": files + ["config_echo.json"], "summary": summary, "error": error}
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=float)
    print(f"{cfg['kind']}: {'pass' if ok else 'FAIL'} ({wall:.2f} s) -> {out}")
    if error:
        print(error, file=sys.stderr)
    return 0 if ok else 1


# ---------------------------------------------------------------- self test

def selftest() -> int:
    """Quick oracle checks; prints one line each."""
    from .evolve import block_operator, block_resolvent_formula, build_dyadic_partition
    from .flow import PhasePoint, integrate_flow
    from .resolvent import ResolventSolver, derivative_terms

    rng = np.random.default_rng(0)
    checks = []

    def dense_taylor():
        g = Grid(1, 4.0, 10)
        m = get_medium("damped-free", 1)
        H = assemble_h0(m, g).matrix.toarray()
        a = assemble_absorption_and_weights(m, g)[0].matrix.toarray()
        z = 0.7 + 0.3j
        R = np.linalg.inv(H - 1j * z * a - z * z * np.eye(g.size))
        # second derivative: R'' = 2 R (i a + 2 z) R (i a + 2 z) R + 2 R R
        M1 = 1j * a + 2 * z * np.eye(g.size)
        oracle = 2 * R @ M1 @ R @ M1 @ R + 2 * R @ R
        solver = ResolventSolver(assemble_h0(m, g), assemble_absorption_and_weights(m, g)[0])
        from .resolvent import apply_derivative_composite

        v = rng.standard_normal(g.size)
        w = apply_derivative_composite(solver, derivative_terms(2), z, v)
        return np.linalg.norm(w - oracle @ v) / np.linalg.norm(oracle @ v) < 1e-9

    def block_identity():
        g = Grid(1, 3.0, 8)
        m = get_medium("damped-free", 1)
        h0 = assemble_h0(m, g)
        a = assemble_absorption_and_weights(m, g)[0]
        z = 0.4 + 0.6j
        B = block_operator(h0, a)
        direct = np.linalg.inv(B - z * np.eye(B.shape[0]))
        return np.max(np.abs(direct - block_resolvent_formula(h0, a, z))) < 1e-9

    def partition():
        P = build_dyadic_partition(6)
        t = rng.uniform(0, P.upper, 1000)
        return np.max(np.abs(P.evaluate(t).sum(axis=0) - 1.0)) < 1e-12

    def free_flow():
        m = get_medium("free", 2)
        w0 = PhasePoint(np.array([0.3, -0.2]), np.array([0.5, 0.1]))
        tr = integrate_flow(m, w0, 2.0, 0.01)
        return np.allclose(tr.X[-1], w0.x + 2 * tr.times[-1] * w0.xi, atol=1e-12)

    checks = [("derivative expansion vs dense oracle", dense_taylor),
              ("block resolvent identity", block_identity),
              ("dyadic partition of unity", partition),
              ("free flow straight lines", free_flow)]
    failed = 0
    for name, fn in checks:
        try:
            ok = bool(fn())
        except Exception as exc:  # report and continue
            ok = False
            name = f"{name} ({exc})"
        failed += not ok
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
    return 1 if failed else 0


# ---------------------------------------------------------------- entry point

def list_media(d: int) -> int:
    for m in builtin_media(d):
        print(f"{m.name:24s} d={m.dimension} eps={m.eps:.3g} rho={m.rho}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="lab", description="Damped wave laboratory.")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run an experiment config")
    p_run.add_argument("config")
    p_run.add_argument("--output", help="output directory (overrides the config)")
    p_val = sub.add_parser("validate", help="check a config without running it")
    p_val.add_argument("config")
    p_list = sub.add_parser("list-media", help="list builtin media")
    p_list.add_argument("--dimension", type=int, default=2)
    sub.add_parser("selftest", help="run the oracle checks")
    args = parser.parse_args(argv)
    try:
        if args.command == "list-media":
            return list_media(args.dimension)
        if args.command == "selftest":
            return selftest()
        cfg = normalize_config(load_config(args.config))
        if args.command == "validate":
            validate(cfg)
            print(f"{args.config}: ok ({cfg['kind']})")
            return 0
        return run_experiment(cfg, args.output)
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
