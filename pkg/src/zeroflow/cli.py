"""Reproducible experiment runner: `zeroflow <experiment> --config <path>`.

Configs are TOML with nested tables; unknown keys anywhere are rejected.
Every run writes a manifest echoing the fully-resolved configuration plus
deterministic CSV/JSONL artifacts (identical config and seed reproduce the
artifact bytes; only the manifest carries a timestamp).

Exit codes: 0 success, 1 invariant violation or numerical failure,
2 configuration error.
"""

from __future__ import annotations

import argparse
import datetime
import json
import sys
from pathlib import Path
from typing import Callable, Optional

import numpy as np

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib

from . import burgers as bg
from . import ensemble as em
from . import nodal
from .dynamics import Nonlinearity, StepperConfig, evolve, evolve_values, synthetic_trajectory
from .errors import ConfigError, ExpressionError, ZeroflowError
from .expressions import (
    Expression,
    derivative_expression,
    parse_expression,
    polynomial_antiderivative,
    quadrature_antiderivative,
)
from .field import Field, GridSpec, field_to_csv, make_grid, mass, sample

EXPERIMENTS = ("simulate", "balance", "vfamily", "colehopf", "ensemble", "allencahn", "check")

_SCHEMA = {
    "experiment": None,
    "seed": None,
    "grid": {"cells": None, "points_per_cell": None},
    "stepper": {"dt": None, "scheme": None, "cfl_guard": None, "probes": None, "snapshot_stride": None},
    "nonlinearity": {"kind": None, "h": None, "g_hat": None, "g": None, "V": None, "autonomous": None},
    "output": {"dir": None},
    "tolerances": {"fixed_point": None},
    "simulate": {"initial": None, "t0": None, "t1": None},
    "balance": {"u_initial": None, "v_initial": None, "window": None, "synthetic": None},
    "vfamily": {"ys": None, "tol": None, "max_iter": None},
    "colehopf": {"initial": None, "t_end": None},
    "ensemble": {
        "profile": None,
        "count": None,
        "iterates": None,
        "jitter": None,
        "target_y": None,
        "visit_eps": None,
    },
    "allencahn": {"profile": None, "count": None, "horizon": None, "jitter": None},
    "check": {},
}


def _reject_unknown(cfg: dict, schema: dict, path: str = "") -> None:
    for key, val in cfg.items():
        here = f"{path}.{key}" if path else key
        if key not in schema:
            raise ConfigError(f"unknown config key {here!r}")
        sub = schema[key]
        if isinstance(sub, dict):
            if not isinstance(val, dict):
                raise ConfigError(f"config key {here!r} must be a table")
            _reject_unknown(val, sub, here)
        elif isinstance(val, dict):
            raise ConfigError(f"config key {here!r} does not take a table")


def load_config(path: Path) -> dict:
    with open(path, "rb") as fh:
        cfg = tomllib.load(fh)
    _reject_unknown(cfg, _SCHEMA)
    return cfg


def _require(cfg: dict, table: str, key: str, default=None, required: bool = False):
    val = cfg.get(table, {}).get(key, default)
    if required and val is None:
        raise ConfigError(f"missing required config key {table}.{key}")
    return val


def _build_grid(cfg: dict) -> GridSpec:
    L = _require(cfg, "grid", "cells", required=True)
    n = _require(cfg, "grid", "points_per_cell", required=True)
    try:
        return make_grid(int(L), int(n))
    except ZeroflowError as err:
        raise ConfigError(str(err)) from err


def _build_stepper(cfg: dict) -> StepperConfig:
    dt = _require(cfg, "stepper", "dt", required=True)
    try:
        return StepperConfig(
            dt=float(dt),
            scheme=_require(cfg, "stepper", "scheme", "imex"),
            cfl_guard=float(_require(cfg, "stepper", "cfl_guard", 0.5)),
        )
    except ZeroflowError as err:
        raise ConfigError(str(err)) from err


def _expr(src: str, allowed) -> Expression:
    try:
        return parse_expression(src, allowed_vars=allowed)
    except ExpressionError as err:
        raise ConfigError(f"in expression {src!r}: {err}") from err


def _profile_fn(src: str) -> Callable:
    expr = _expr(src, ("x",))
    return lambda x: expr(x=x) * np.ones_like(x)


def _build_nonlinearity(cfg: dict) -> Nonlinearity:
    table = cfg.get("nonlinearity")
    if table is None:
        raise ConfigError("missing [nonlinearity] table")
    kind = table.get("kind")
    autonomous = bool(table.get("autonomous", False))
    if kind == "burgers":
        h_expr = _expr(table.get("h", "u"), ("u",))
        H = polynomial_antiderivative(h_expr, "u")
        if H is None:
            H = quadrature_antiderivative(lambda u: h_expr(u=u))
        g_hat = None
        if table.get("g_hat") is not None:
            gh_expr = _expr(table["g_hat"], ("t", "x"))
            if autonomous and "t" in gh_expr.variables:
                raise ConfigError("autonomous forcing must not reference t")
            g_hat = lambda t, x: gh_expr(t=t, x=x) * np.ones_like(x)
        return Nonlinearity.burgers(
            h=lambda u: h_expr(u=u), H=H, g_hat=g_hat, autonomous=autonomous
        )
    if kind == "reaction":
        g_expr = _expr(_requireval(table, "g", "reaction"), ("t", "x", "u"))
        if autonomous and "t" in g_expr.variables:
            raise ConfigError("autonomous reaction must not reference t")
        return Nonlinearity.reaction(
            lambda t, x, u: g_expr(t=t, x=x, u=u) * np.ones_like(u), autonomous=autonomous
        )
    if kind == "gradient":
        v_expr = _expr(_requireval(table, "V", "gradient"), ("x", "u"))
        dv_expr = derivative_expression(v_expr, "u")
        return Nonlinearity.gradient(
            V=lambda x, u: v_expr(x=x, u=u) * np.ones_like(u),
            dVdu=lambda x, u: dv_expr(x=x, u=u) * np.ones_like(u),
        )
    raise ConfigError(f"unknown nonlinearity kind {kind!r}")


def _requireval(table: dict, key: str, kind: str):
    val = table.get(key)
    if val is None:
        raise ConfigError(f"nonlinearity kind {kind!r} needs key {key!r}")
    return val


class ArtifactWriter:
    """Funnels all artifact writes through one place, collecting a listing."""

    def __init__(self, outdir: Path):
        self.outdir = outdir
        self.written = []
        outdir.mkdir(parents=True, exist_ok=True)

    def write(self, name: str, text: str) -> None:
        (self.outdir / name).write_text(text, encoding="utf-8")
        self.written.append(name)

    def series_csv(self, name: str, header: str, rows) -> None:
        lines = [header] + [",".join(f"{v:.17g}" for v in row) for row in rows]
        self.write(name, "\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------


def _exp_simulate(cfg, grid, stepper, writer, seed):
    nl = _build_nonlinearity(cfg)
    init = _profile_fn(_require(cfg, "simulate", "initial", required=True))
    t0 = float(_require(cfg, "simulate", "t0", 0.0))
    t1 = float(_require(cfg, "simulate", "t1", required=True))
    probes = [float(p) for p in _require(cfg, "stepper", "probes", [])]
    stride = int(_require(cfg, "stepper", "snapshot_stride", 1))
    traj = evolve(sample(init, grid), nl, t0, t1, stepper, probes=probes, snapshot_stride=stride)
    writer.write("final_field.csv", field_to_csv(traj.final_field()))
    writer.series_csv(
        "mass_series.csv",
        "t,mass",
        [(t, mass(f)) for t, f in traj.snapshots],
    )
    for i, x in enumerate(traj.probe_positions):
        writer.series_csv(
            f"probe_{i}.csv",
            "t,value",
            zip(traj.probe_times, traj.probe_values[i]),
        )
    return {"snapshots": len(traj.snapshots), "final_mass": mass(traj.final_field())}


def _exp_balance(cfg, grid, stepper, writer, seed):
    window = _require(cfg, "balance", "window", required=True)
    if len(window) != 4:
        raise ConfigError("balance.window must be [x_left, x_right, t_start, t_end]")
    x_l, x_r, t_s, t_e = (float(v) for v in window)
    probes = sorted({x_l % grid.cells, x_r % grid.cells})
    synthetic = _require(cfg, "balance", "synthetic", None)
    if synthetic:
        expr = _expr(synthetic, ("t", "x"))
        u_traj = synthetic_trajectory(
            lambda x, t: expr(t=t, x=x) * np.ones_like(x),
            grid, t_s, t_e, stepper.dt, probes=probes, snapshot_stride=1,
        )
        v_traj = synthetic_trajectory(
            lambda x, t: np.zeros_like(x), grid, t_s, t_e, stepper.dt,
            probes=probes, snapshot_stride=1,
        )
    else:
        nl = _build_nonlinearity(cfg)
        u0 = sample(_profile_fn(_require(cfg, "balance", "u_initial", required=True)), grid)
        v0 = sample(_profile_fn(_require(cfg, "balance", "v_initial", "0")), grid)
        u_traj = evolve(u0, nl, t_s, t_e, stepper, probes=probes, snapshot_stride=1)
        v_traj = evolve(v0, nl, t_s, t_e, stepper, probes=probes, snapshot_stride=1)
    ledger = nodal.balance_ledger(u_traj, v_traj, (x_l, x_r, t_s, t_e))
    writer.write("ledger.jsonl", ledger.to_json() + "\n")
    w_snaps = [(t, fa - fb) for (t, fa), (_, fb) in zip(u_traj.snapshots, v_traj.snapshots)]
    curves, _ = nodal.match_curves(w_snaps)
    writer.write("curves.csv", nodal.curves_to_csv(curves))
    return json.loads(ledger.to_json())


def _exp_vfamily(cfg, grid, stepper, writer, seed):
    nl = _build_nonlinearity(cfg)
    ys = [float(y) for y in _require(cfg, "vfamily", "ys", required=True)]
    default_tol = float(_require(cfg, "tolerances", "fixed_point", 1e-8))
    tol = float(_require(cfg, "vfamily", "tol", default_tol))
    max_iter = int(_require(cfg, "vfamily", "max_iter", 50))
    orbits = bg.solve_v_family(nl, ys, tol, max_iter, stepper, grid)
    writer.write("family.json", bg.family_archive(orbits) + "\n")
    for o in orbits:
        writer.write(f"orbit_y{o.y:+.6g}.csv", field_to_csv(o.profile))
    pts = [em.projection_pi(o.profile) for o in orbits]
    writer.series_csv("projections.csv", "y,u0,du0", [(o.y, p[0], p[1]) for o, p in zip(orbits, pts)])
    return {
        "ys": ys,
        "residuals": [o.residual for o in orbits],
        "min_gaps": [float(g) for g in bg.family_ordering_gaps(orbits)],
    }


def _exp_colehopf(cfg, grid, stepper, writer, seed):
    nl_table = cfg.get("nonlinearity", {})
    g_hat = None
    if nl_table.get("g_hat") is not None:
        gh_expr = _expr(nl_table["g_hat"], ("t", "x"))
        g_hat = lambda t, x: gh_expr(t=t, x=x) * np.ones_like(x)
    u0 = sample(_profile_fn(_require(cfg, "colehopf", "initial", required=True)), grid)
    t_end = float(_require(cfg, "colehopf", "t_end", required=True))
    rel = bg.cole_hopf_crosscheck(u0, g_hat, t_end, stepper)
    writer.write("colehopf.jsonl", json.dumps({"t_end": t_end, "relative_sup_error": rel}) + "\n")
    return {"relative_sup_error": rel}


def _letters(cfg, table_name, grid):
    src = _require(cfg, table_name, "profile", required=True)
    fn = _profile_fn(src)
    cell = make_grid(1, grid.points_per_cell)
    p1 = sample(fn, cell)
    p0 = Field(cell, -p1.values)
    return p0, p1


def _exp_ensemble(cfg, grid, stepper, writer, seed):
    nl = _build_nonlinearity(cfg)
    count = int(_require(cfg, "ensemble", "count", required=True))
    iterates = int(_require(cfg, "ensemble", "iterates", required=True))
    jitter = float(_require(cfg, "ensemble", "jitter", 1e-3))
    p0, p1 = _letters(cfg, "ensemble", grid)
    ens = em.bernoulli_ensemble(p0, p1, grid.cells, count, seed, jitter=jitter)
    target = None
    target_y = _require(cfg, "ensemble", "target_y", None)
    if target_y is not None:
        cell = make_grid(1, grid.points_per_cell)
        tol = float(_require(cfg, "tolerances", "fixed_point", 1e-8))
        target = bg.solve_v_family(nl, [float(target_y)], tol, 50, stepper, cell)[0]
    visit_eps = float(_require(cfg, "ensemble", "visit_eps", 1e-3))
    report, evolved = em.evolve_ensemble(ens, nl, iterates, stepper, target=target, visit_eps=visit_eps)
    writer.write("ensemble_manifest.jsonl", em.ensemble_manifest(ens) + "\n")
    writer.series_csv("z_mu.csv", "iterate,z_mu", list(enumerate(report.Z_mu)))
    if report.weakstar_dist is not None:
        writer.series_csv("weakstar.csv", "iterate,distance", list(enumerate(report.weakstar_dist)))
    summary = {
        "Z_mu_first": float(report.Z_mu[0]),
        "Z_mu_last": float(report.Z_mu[-1]),
        "zeta_hat": report.zeta_hat,
        "visit_freq": report.visit_freq,
        "monotonicity_violations": report.monotonicity_violations,
    }
    writer.write("report.jsonl", json.dumps(summary) + "\n")
    if report.monotonicity_violations:
        raise ZeroflowError(
            f"zero functional increased at iterates {report.monotonicity_violations}"
        )
    return summary


def _exp_allencahn(cfg, grid, stepper, writer, seed):
    count = int(_require(cfg, "allencahn", "count", required=True))
    horizon = int(_require(cfg, "allencahn", "horizon", required=True))
    jitter = float(_require(cfg, "allencahn", "jitter", 1e-3))
    p0, p1 = _letters(cfg, "allencahn", grid)
    ens = em.bernoulli_ensemble(p0, p1, grid.cells, count, seed, jitter=jitter)
    V = lambda x, u: 0.25 * u**4 - 0.5 * u**2
    nl = Nonlinearity.gradient(V=V, dVdu=lambda x, u: u**3 - u)
    vals = ens.values_matrix()
    energy_rows = []

    def record(k, vals):
        es = [em.gradient_energy(Field(grid, row), V) for row in vals]
        energy_rows.append((k, *es))

    record(0, vals)
    for k in range(1, horizon + 1):
        vals = evolve_values(vals, nl, grid, float(k - 1), float(k), stepper)
        record(k, vals)
    frac_p = float(np.mean(np.abs(vals - 1.0) < 0.1))
    frac_m = float(np.mean(np.abs(vals + 1.0) < 0.1))
    writer.series_csv(
        "energy.csv",
        "iterate," + ",".join(f"member_{i}" for i in range(count)),
        energy_rows,
    )
    E = np.array([row[1:] for row in energy_rows])
    steps_between = round(1.0 / stepper.dt)
    max_rise = float(np.max(np.diff(E, axis=0))) if len(E) > 1 else 0.0
    summary = {
        "fraction_near_plus1": frac_p,
        "fraction_near_minus1": frac_m,
        "settled_fraction": frac_p + frac_m,
        "max_energy_rise": max_rise,
        "energy_monotone": bool(max_rise <= 1e-9 * steps_between),
    }
    writer.write("fractions.jsonl", json.dumps(summary) + "\n")
    if not summary["energy_monotone"]:
        raise ZeroflowError(f"gradient energy rose by {max_rise}")
    return summary


def _exp_check(cfg, grid, stepper, writer, seed):
    from .checks import run_invariant_suite

    results = run_invariant_suite()
    lines = []
    failed = 0
    for name, ok, detail in results:
        ok = bool(ok)
        status = "PASS" if ok else "FAIL"
        line = f"[{status}] {name}: {detail}"
        print(line)
        lines.append(json.dumps({"name": name, "pass": ok, "detail": detail}))
        failed += 0 if ok else 1
    writer.write("suite.jsonl", "\n".join(lines) + "\n")
    if failed:
        raise ZeroflowError(f"{failed} invariant(s) failed")
    return {"invariants": len(results), "failed": failed}


_RUNNERS = {
    "simulate": _exp_simulate,
    "balance": _exp_balance,
    "vfamily": _exp_vfamily,
    "colehopf": _exp_colehopf,
    "ensemble": _exp_ensemble,
    "allencahn": _exp_allencahn,
    "check": _exp_check,
}


def run(
    experiment: str,
    config_path,
    seed: Optional[int] = None,
    out_dir: Optional[str] = None,
) -> int:
    """Execute one experiment; returns the process exit code."""
    try:
        if experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {experiment!r}; choose from {EXPERIMENTS}")
        cfg = load_config(Path(config_path))
        declared = cfg.get("experiment")
        if declared is not None and declared != experiment:
            raise ConfigError(
                f"config declares experiment {declared!r} but {experiment!r} was requested"
            )
        resolved_seed = int(seed if seed is not None else cfg.get("seed", 0))
        outdir = Path(out_dir if out_dir is not None else _require(cfg, "output", "dir", "out"))
        if experiment == "check":
            grid = stepper = None
        else:
            grid = _build_grid(cfg)
            stepper = _build_stepper(cfg)
    except (ConfigError, ExpressionError, tomllib.TOMLDecodeError, OSError, ValueError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2

    writer = ArtifactWriter(outdir)
    try:
        summary = _RUNNERS[experiment](cfg, grid, stepper, writer, resolved_seed)
        status = 0
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except ZeroflowError as err:
        print(f"run failed: {err}", file=sys.stderr)
        summary = {"error": str(err)}
        status = 1

    manifest = {
        "experiment": experiment,
        "seed": resolved_seed,
        "config": cfg,
        "summary": summary,
        "artifacts": writer.written,
        "status": status,
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }
    (writer.outdir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return status


def main(argv=None) -> None:
    parser = argparse.ArgumentParser(
        prog="zeroflow",
        description="Deterministic experiments on periodic scalar parabolic dynamics.",
    )
    parser.add_argument("experiment", choices=EXPERIMENTS)
    parser.add_argument("--config", required=True, help="TOML experiment configuration")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--out", default=None, help="override the output directory")
    args = parser.parse_args(argv)
    sys.exit(run(args.experiment, args.config, seed=args.seed, out_dir=args.out))


if __name__ == "__main__":
    main()
