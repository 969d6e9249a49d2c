"""Shift-invariant ensembles on the L-cell torus.

An ensemble is a weighted set of member fields sharing a grid with at least
two cells. Expectations follow the convention that every member is averaged
over its L cyclic cell shifts, which makes empirical shift invariance exact
by construction; for the pair zero functional this turns into counting
zeroes around the whole circle and dividing by L.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .burgers import PeriodicOrbit
from .dynamics import Nonlinearity, StepperConfig, Trajectory, evolve_values
from .errors import BlowUpError, GridMismatchError
from .field import Field, GridSpec, derivative, derivative_values, require_same_grid, tile


@dataclass
class Ensemble:
    """Weighted members on a shared torus, with a reproducible lineage."""

    grid: GridSpec
    members: List[Field]
    weights: np.ndarray
    seed: int
    lineage: dict

    def __post_init__(self):
        if self.grid.cells < 2:
            raise GridMismatchError("ensembles need a torus with at least 2 cells")
        for f in self.members:
            if f.grid != self.grid:
                raise GridMismatchError("ensemble members must share the grid")
        w = np.asarray(self.weights, dtype=np.float64)
        if w.shape != (len(self.members),) or np.any(w < 0):
            raise ValueError("weights must be a nonnegative vector, one per member")
        if abs(float(w.sum()) - 1.0) > 1e-12:
            raise ValueError(f"weights must sum to 1, got {float(w.sum())!r}")
        object.__setattr__(self, "weights", w)

    def values_matrix(self) -> np.ndarray:
        return np.stack([f.values for f in self.members])


@dataclass
class EnsembleReport:
    """Per-iterate diagnostics of an evolved ensemble.

    Z_mu[k] is the pair zero functional after k maps; zeta_hat is the
    largest pair density of zeroes at the final state (all of them finite on
    a torus); weakstar_dist tracks the weighted mean sup distance to the
    target orbit when one is supplied; visit_freq is the fraction of
    (member, iterate) states inside the visit_eps neighborhood of the target.
    """

    Z_mu: np.ndarray
    zeta_hat: float
    weakstar_dist: Optional[np.ndarray]
    visit_freq: float
    monotonicity_violations: List[Tuple[int, float]]


def bernoulli_ensemble(
    p0: Field,
    p1: Field,
    L: int,
    count: int,
    seed: int,
    jitter: float = 1e-3,
    match_derivatives: bool = False,
) -> Ensemble:
    """Concatenate L i.i.d. letters of two unit-cell profiles, seeded.

    The profiles must agree at the cell junction value (and optionally the
    junction derivative). Each cell receives an independent relative
    amplitude jitter that breaks the exactly tangential junction zeroes the
    mirror construction p1 = -p0 would otherwise pin to the grid.
    """
    if count < 2:
        raise ValueError("an ensemble needs at least 2 members")
    require_same_grid(p0, p1)
    if p0.grid.cells != 1:
        raise GridMismatchError("letter profiles live on a single unit cell")
    if abs(p0.values[0] - p1.values[0]) > 1e-12:
        raise ValueError(
            f"profiles disagree at the junction: {p0.values[0]!r} vs {p1.values[0]!r}"
        )
    if match_derivatives:
        d0 = derivative(p0).values[0]
        d1 = derivative(p1).values[0]
        if abs(d0 - d1) > 1e-9:
            raise ValueError("profile derivatives disagree at the junction")

    n = p0.grid.points_per_cell
    big = GridSpec(L, n)
    rng = np.random.default_rng(seed)
    letters = rng.integers(0, 2, size=(count, L))
    factors = 1.0 + jitter * rng.uniform(-1.0, 1.0, size=(count, L))
    base = np.stack([p0.values, p1.values])
    members = []
    for m in range(count):
        cells = base[letters[m]] * factors[m][:, None]
        members.append(Field(big, cells.reshape(-1)))
    weights = np.full(count, 1.0 / count)
    lineage = {
        "kind": "bernoulli",
        "L": L,
        "count": count,
        "seed": seed,
        "jitter": jitter,
    }
    return Ensemble(grid=big, members=members, weights=weights, seed=seed, lineage=lineage)


# Pairs whose sup difference falls at the numerical-identity scale are
# treated as equal, z(u, u) = 0; counting sign flips of accumulated rounding
# noise would otherwise pollute the measure-level functional once members
# collapse onto the same attractor.
PAIR_EQUALITY_TOL = 1e-13


def _counts_with_equality(diff: np.ndarray, scale: float) -> np.ndarray:
    """Circle sign-change counts along the last axis, zeroing equal pairs."""
    signs = np.where(diff < 0.0, -1, 1)
    counts = (signs != np.roll(signs, -1, axis=-1)).sum(axis=-1)
    equal = np.max(np.abs(diff), axis=-1) <= PAIR_EQUALITY_TOL * max(1.0, scale)
    counts[equal] = 0
    return counts


def _circle_counts_pairwise(values: np.ndarray) -> np.ndarray:
    """(m, m) matrix of full-circle sign-change counts between member pairs."""
    diff = values[:, None, :] - values[None, :, :]
    scale = float(np.max(np.abs(values))) if values.size else 1.0
    return _counts_with_equality(diff, scale)


def density_of_zeroes(u: Field, v: Field) -> float:
    """Average per-cell zero count of u - v along the shift orbit.

    On the torus the average over all L shifts is exactly the full-circle
    count divided by L; it is finite for every pair.
    """
    require_same_grid(u, v)
    if u.grid.cells < 2:
        raise GridMismatchError("the density is a torus quantity; need L >= 2")
    w = u.values - v.values
    signs = np.where(w < 0.0, -1, 1)
    total = int(np.count_nonzero(signs != np.roll(signs, -1)))
    return total / u.grid.cells


def zero_functional(e: Ensemble, other: Union[Ensemble, Field, None] = None) -> float:
    """Pair expectation of the per-cell zero count (ordered pairs, self-pairs in).

    With other=None this is the product-measure value Z(mu) = sum over
    ordered member pairs of w_a w_b times the shift-averaged per-cell count;
    an Ensemble or single Field gives the cross functional. Pairs whose sup
    difference is below PAIR_EQUALITY_TOL (relative) count as equal, with
    zero zeroes, so collapsed members do not contribute rounding noise.
    """
    vals = e.values_matrix()
    L = e.grid.cells
    if other is None:
        counts = _circle_counts_pairwise(vals)
        return float(e.weights @ (counts / L) @ e.weights)
    if isinstance(other, Field):
        if other.grid != e.grid:
            raise GridMismatchError("field grid does not match the ensemble")
        diff = vals - other.values[None, :]
        scale = max(float(np.max(np.abs(vals))), float(np.max(np.abs(other.values))))
        counts = _counts_with_equality(diff, scale)
        return float(e.weights @ (counts / L))
    if other.grid != e.grid:
        raise GridMismatchError("ensembles live on different grids")
    vo = other.values_matrix()
    diff = vals[:, None, :] - vo[None, :, :]
    scale = max(float(np.max(np.abs(vals))), float(np.max(np.abs(vo))))
    counts = _counts_with_equality(diff, scale)
    return float(e.weights @ (counts / L) @ other.weights)


def _tiled_target(e: Ensemble, orbit: PeriodicOrbit) -> np.ndarray:
    prof = orbit.profile
    if prof.grid == e.grid:
        return prof.values
    if prof.grid.cells == 1 and prof.grid.points_per_cell == e.grid.points_per_cell:
        return tile(prof, e.grid.cells).values
    raise GridMismatchError(
        "orbit profile cannot be tiled onto the ensemble grid "
        f"({prof.grid} vs {e.grid})"
    )


def weakstar_distance(e: Ensemble, orbit: PeriodicOrbit) -> float:
    """Weighted mean sup distance of members to the (tiled) target orbit.

    The target is shift invariant, so the shift-averaging convention leaves
    this metric unchanged; it tends to zero exactly when the empirical
    measure collapses onto the orbit.
    """
    target = _tiled_target(e, orbit)
    dists = np.max(np.abs(e.values_matrix() - target[None, :]), axis=-1)
    return float(e.weights @ dists)


def evolve_ensemble(
    e: Ensemble,
    nl: Nonlinearity,
    iterates: int,
    cfg: StepperConfig,
    target: Optional[PeriodicOrbit] = None,
    visit_eps: float = 1e-3,
    monotonicity_tol: float = 1e-12,
) -> Tuple[EnsembleReport, Ensemble]:
    """Apply the time-1 map to every member, tracking the zero functional.

    Any increase of Z_mu beyond monotonicity_tol is recorded as a violation;
    member blow-up is reported with the offending member indices.
    """
    vals = e.values_matrix()
    L = e.grid.cells
    z_series = np.empty(iterates + 1)
    z_series[0] = float(e.weights @ (_circle_counts_pairwise(vals) / L) @ e.weights)
    target_vals = _tiled_target(e, orbit=target) if target is not None else None
    ws_series = [] if target is not None else None
    visits = 0
    if target is not None:
        ws_series.append(
            float(e.weights @ np.max(np.abs(vals - target_vals[None, :]), axis=-1))
        )

    for k in range(1, iterates + 1):
        try:
            vals = evolve_values(vals, nl, e.grid, float(k - 1), float(k), cfg)
        except BlowUpError as err:
            bad = [
                i
                for i, row in enumerate(vals)
                if not np.all(np.isfinite(evolve_safely(row, nl, e.grid, k, cfg)))
            ]
            raise BlowUpError(
                f"members {bad} blew up during iterate {k}: {err}", err.t, err.sup_value
            ) from err
        z_series[k] = float(e.weights @ (_circle_counts_pairwise(vals) / L) @ e.weights)
        if target is not None:
            d = np.max(np.abs(vals - target_vals[None, :]), axis=-1)
            ws_series.append(float(e.weights @ d))
            visits += int(np.count_nonzero(d < visit_eps))

    violations = [
        (k, float(z_series[k] - z_series[k - 1]))
        for k in range(1, iterates + 1)
        if z_series[k] > z_series[k - 1] + monotonicity_tol
    ]
    counts = _circle_counts_pairwise(vals)
    np.fill_diagonal(counts, 0)
    zeta_hat = float(counts.max()) / L if counts.size else 0.0
    visit_freq = (
        visits / (len(e.members) * iterates) if target is not None and iterates else float("nan")
    )
    evolved = Ensemble(
        grid=e.grid,
        members=[Field(e.grid, row) for row in vals],
        weights=e.weights,
        seed=e.seed,
        lineage={**e.lineage, "evolved_iterates": e.lineage.get("evolved_iterates", 0) + iterates},
    )
    report = EnsembleReport(
        Z_mu=z_series,
        zeta_hat=zeta_hat,
        weakstar_dist=np.array(ws_series) if ws_series is not None else None,
        visit_freq=visit_freq,
        monotonicity_violations=violations,
    )
    return report, evolved


def evolve_safely(row, nl, grid, k, cfg):
    """Evolve one member in isolation, returning NaNs instead of raising."""
    try:
        return evolve_values(row, nl, grid, float(k - 1), float(k), cfg)
    except BlowUpError:
        return np.full(grid.total_points, np.nan)


def omega_average_stats(traj: Trajectory, target: Field, epsilon: float) -> float:
    """Fraction of recorded snapshots inside the sup-norm epsilon ball."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    require_same_grid(traj.snapshots[0][1], target)
    hits = sum(
        1
        for _, f in traj.snapshots
        if float(np.max(np.abs(f.values - target.values))) < epsilon
    )
    return hits / len(traj.snapshots)


def gradient_energy(u: Field, V: Callable) -> float:
    """Mean-per-cell energy integral of u_x^2/2 + V(x, u)."""
    ux = derivative_values(u.values, u.grid.dx)
    density = 0.5 * ux * ux + np.asarray(V(u.grid.nodes(), u.values), dtype=np.float64)
    return float(density.sum() * u.grid.dx / u.grid.cells)


def projection_pi(u: Field) -> Tuple[float, float]:
    """The planar projection (u(0), u_x(0))."""
    return float(u.values[0]), float(derivative(u).values[0])


@dataclass
class InjectivityReport:
    """Minimum pairwise distance of planar projections over a family."""

    min_distance: float
    closest_pair: Tuple[int, int]
    projections: List[Tuple[float, float]]


def injectivity_report(fields: Sequence[Field]) -> InjectivityReport:
    pts = [projection_pi(f) for f in fields]
    best = (float("inf"), (-1, -1))
    for i in range(len(pts)):
        for j in range(i + 1, len(pts)):
            d = float(np.hypot(pts[i][0] - pts[j][0], pts[i][1] - pts[j][1]))
            if d < best[0]:
                best = (d, (i, j))
    return InjectivityReport(min_distance=best[0], closest_pair=best[1], projections=pts)


def ensemble_manifest(e: Ensemble) -> str:
    """JSON manifest of the construction (seed, lineage, weights)."""
    return json.dumps(
        {
            "grid": {"cells": e.grid.cells, "points_per_cell": e.grid.points_per_cell},
            "count": len(e.members),
            "seed": e.seed,
            "weights": [float(w) for w in e.weights],
            "lineage": e.lineage,
        }
    )
