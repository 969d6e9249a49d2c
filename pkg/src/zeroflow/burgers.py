"""Mass-conserving advective machinery: invariance checks, the sup-norm
band, the one-parameter family of time-periodic orbits, and the
linearizing-substitution (Cole-Hopf) cross-check.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence

import numpy as np

from .dynamics import (
    Nonlinearity,
    StepperConfig,
    Trajectory,
    evolve_values,
)
from .errors import (
    FamilyOrderingError,
    MassMismatchError,
    NonConvergenceError,
    PositivityLostError,
    ZeroflowError,
)
from .field import Field, GridSpec, derivative_values, field_to_csv, mass


def classical_burgers(g_hat: Optional[Callable] = None, autonomous: bool = False) -> Nonlinearity:
    """h(u) = u with its exact flux antiderivative H(u) = u^2/2."""
    return Nonlinearity.burgers(
        h=lambda u: u, H=lambda u: 0.5 * u * u, g_hat=g_hat, autonomous=autonomous
    )


def standard_forcing(amplitude: float = 0.2) -> Callable:
    """The reference zero-mean, 1-periodic forcing a*sin(2 pi x)*cos(2 pi t)."""
    return lambda t, x: amplitude * np.sin(2 * np.pi * x) * np.cos(2 * np.pi * t)


@dataclass
class PeriodicOrbit:
    """A certified fixed point of the time-1 map on one mass slice.

    residual is the measured sup distance between the profile and its image
    under the time-1 map; iterations counts maps applied beyond the first
    residual check.
    """

    y: float
    profile: Field
    residual: float
    iterations: int


@dataclass
class AprioriBand:
    """Sup-norm band constants for the mass-conserving advective family.

    c0 is the sup of |forcing| over one space-time period; c2p maps the
    integer p to the L^{2p} band radius (p^2/((2p-1) pi^2))^{1/(2p)} * c0,
    which increases monotonically to c0.
    """

    c0: float
    c2p: dict


def check_mass_invariance(traj: Trajectory) -> float:
    """Max drift of the per-cell-averaged mass along a trajectory."""
    nl = traj.nonlinearity
    if nl is None or nl.kind != "burgers":
        raise ZeroflowError(
            "mass invariance is a property of the mass-conserving advective "
            "family; this trajectory was not produced by one"
        )
    m0 = mass(traj.snapshots[0][1])
    return max(abs(mass(f) - m0) for _, f in traj.snapshots)


def band_constant(p: int, c0: float) -> float:
    """Closed form (p^2 / ((2p-1) pi^2))^(1/(2p)) * c0."""
    if p < 1:
        raise ValueError("p must be a positive integer")
    return (p * p / ((2 * p - 1) * np.pi**2)) ** (1.0 / (2 * p)) * c0


def apriori_band(
    nl: Nonlinearity,
    ps: Sequence[int] = tuple(range(1, 9)),
    x_samples: int = 2048,
    t_samples: int = 512,
) -> AprioriBand:
    """Evaluate c0 = sup|forcing| on a space-time sample grid and the band table."""
    if nl.kind != "burgers":
        raise ZeroflowError("the a-priori band applies to the advective family only")
    if nl.g_hat is None:
        c0 = 0.0
    else:
        x = np.arange(x_samples) / x_samples
        ts = [0.0] if nl.autonomous else np.arange(t_samples) / t_samples
        c0 = 0.0
        for t in ts:
            gh = np.asarray(nl.g_hat(float(t), x), dtype=np.float64)
            gh = np.broadcast_to(gh, x.shape)
            c0 = max(c0, float(np.max(np.abs(gh - gh.mean()))))
    table = {int(p): band_constant(int(p), c0) for p in ps}
    vals = [table[p] for p in sorted(table)]
    if any(b > a + 1e-15 for a, b in zip(vals[1:], vals[:-1])):
        raise ZeroflowError("band constants failed to increase toward c0")
    return AprioriBand(c0=c0, c2p=table)


def check_band(traj: Trajectory, y: float, band: AprioriBand, slack: float = 1e-6) -> bool:
    """True iff sup|u(t) - y| <= c0 + slack at every recorded snapshot."""
    bound = band.c0 + slack
    return all(float(np.max(np.abs(f.values - y))) <= bound for _, f in traj.snapshots)


def solve_v_family(
    nl: Nonlinearity,
    ys: Sequence[float],
    tol: float,
    max_iter: int,
    cfg: StepperConfig,
    grid: GridSpec,
    starts: Optional[Sequence[Field]] = None,
    check_ordering: bool = True,
) -> List[PeriodicOrbit]:
    """Solve for the time-periodic orbit on each mass slice by iterating T.

    Starts from the constant profile u == y (or the given start fields),
    iterates the time-1 map until the sup residual drops below tol, and
    certifies each orbit. The returned list is ordered by y; strict
    pointwise ordering between consecutive orbits is verified.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    ys = [float(y) for y in ys]
    order = np.argsort(ys)
    N = grid.total_points
    if starts is None:
        states = np.tile(np.asarray(ys, dtype=np.float64)[:, None], (1, N))
    else:
        if len(starts) != len(ys):
            raise ValueError("one start field per mass value required")
        states = np.stack([f.values for f in starts])
        for y, f in zip(ys, starts):
            if abs(mass(f) - y) > 1e-9:
                raise MassMismatchError(
                    f"start field mass {mass(f):.3e} does not match slice y={y}"
                )

    residuals = np.full(len(ys), np.inf)
    iterations = np.full(len(ys), -1, dtype=int)
    current = states
    for k in range(max_iter + 1):
        nxt = evolve_values(current, nl, grid, 0.0, 1.0, cfg)
        res = np.max(np.abs(nxt - current), axis=-1)
        newly = (res <= tol) & (iterations < 0)
        iterations[newly] = k
        residuals = np.where(iterations >= 0, np.minimum(residuals, res), res)
        if np.all(iterations >= 0):
            break
        current = nxt
    else:
        worst = float(np.max(res))
        raise NonConvergenceError(
            f"time-1 fixed point iteration did not reach tol={tol} within "
            f"{max_iter} maps (worst residual {worst:.3e})",
            residual=worst,
            iterations=max_iter,
        )

    orbits = []
    for i, y in enumerate(ys):
        profile = Field(grid, current[i])
        r = float(np.max(np.abs(nxt[i] - current[i])))
        if abs(mass(profile) - y) > 1e-12:
            raise MassMismatchError(
                f"converged profile drifted off its mass slice: y={y}, "
                f"mass={mass(profile)!r}"
            )
        orbits.append(PeriodicOrbit(y=y, profile=profile, residual=r, iterations=int(iterations[i])))

    orbits = [orbits[i] for i in order]
    if check_ordering and len(orbits) >= 2:
        for a, b in zip(orbits, orbits[1:]):
            gap = float(np.min(b.profile.values - a.profile.values))
            if gap <= 0:
                raise FamilyOrderingError(
                    f"orbits for y={a.y} and y={b.y} are not strictly ordered "
                    f"(min gap {gap:.3e})"
                )
    return orbits


def family_ordering_gaps(orbits: Sequence[PeriodicOrbit]) -> np.ndarray:
    """Min pointwise gap between consecutive orbits (the ordering certificate)."""
    return np.array(
        [
            float(np.min(b.profile.values - a.profile.values))
            for a, b in zip(orbits, orbits[1:])
        ]
    )


def _spectral_antiderivative(values: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Periodic antiderivative (zero-mean input) vanishing at x = 0."""
    N = grid.total_points
    coeffs = np.fft.rfft(values)
    k = np.arange(N // 2 + 1)
    factor = np.zeros(N // 2 + 1, dtype=np.complex128)
    factor[1:] = 1.0 / (1j * 2.0 * np.pi * k[1:] / float(grid.cells))
    anti = np.fft.irfft(coeffs * factor, n=N)
    return anti - anti[0]


def cole_hopf_crosscheck(
    u0: Field,
    g_hat: Optional[Callable],
    t_end: float,
    cfg: StepperConfig,
) -> float:
    """Evolve u nonlinearly and its substitution linearly; compare at t_end.

    The nonlinear side is h(u) = u with forcing g_hat. The linear side
    evolves phi0 = exp(-1/2 * int_0^x u0) under
    phi_t = phi_xx - 1/2 * G(x, t) * phi, where G is the periodic spatial
    antiderivative of the re-centered forcing (the potential whose gradient
    forces u). Returns the relative sup error of -2 phi_x / phi against the
    nonlinear solution.
    """
    grid = u0.grid
    if abs(mass(u0)) > 1e-12:
        raise MassMismatchError(
            f"the substitution needs a mass-0 initial profile, got {mass(u0):.3e}"
        )
    nl_u = classical_burgers(g_hat=g_hat)
    u_nl = evolve_values(u0.values, nl_u, grid, 0.0, t_end, cfg)

    anti_u0 = _spectral_antiderivative(u0.values, grid)
    phi0 = np.exp(-0.5 * anti_u0)

    if g_hat is None:
        nl_phi = Nonlinearity.reaction(lambda t, x, p: 0.0 * p, autonomous=True)
    else:
        x_nodes = grid.nodes()
        cache = {}

        def potential(t):
            vec = cache.get(t)
            if vec is None:
                gh = np.asarray(g_hat(t, x_nodes), dtype=np.float64)
                gh = np.broadcast_to(gh, x_nodes.shape)
                vec = _spectral_antiderivative(gh - gh.mean(), grid)
                if len(cache) > 8:
                    cache.clear()
                cache[t] = vec
            return vec

        def g_phi(t, x, p):
            return -0.5 * potential(t) * p

        nl_phi = Nonlinearity.reaction(g_phi)

    phi = evolve_values(phi0, nl_phi, grid, 0.0, t_end, cfg)
    if float(np.min(phi)) <= 0.0:
        raise PositivityLostError(
            f"substitution lost strict positivity (min phi = {float(np.min(phi)):.3e})"
        )
    u_ch = -2.0 * derivative_values(phi, grid.dx) / phi
    denom = float(np.max(np.abs(u_nl)))
    if denom == 0.0:
        return float(np.max(np.abs(u_nl - u_ch)))
    return float(np.max(np.abs(u_nl - u_ch)) / denom)


@dataclass
class ConvergenceReport:
    """Distance of the iterated state to a target orbit, per iterate."""

    distances: np.ndarray
    first_below: Optional[int]
    threshold: float


def converge_to_vy(
    u0: Field,
    nl: Nonlinearity,
    orbit: PeriodicOrbit,
    max_n: int,
    cfg: StepperConfig,
    threshold: float = 1e-6,
) -> ConvergenceReport:
    """Iterate the time-1 map from u0 and track sup distance to the orbit.

    The initial mass must match the orbit's mass slice to 1e-12; otherwise
    the attraction statement does not apply and the call is rejected.
    """
    if abs(mass(u0) - orbit.y) > 1e-12:
        raise MassMismatchError(
            f"mass {mass(u0)!r} does not match the orbit slice y={orbit.y}"
        )
    target = orbit.profile.values
    grid = u0.grid
    dists = [float(np.max(np.abs(u0.values - target)))]
    first = 0 if dists[0] <= threshold else None
    v = u0.values
    k = 0
    while first is None and k < max_n:
        v = evolve_values(v, nl, grid, float(k), float(k + 1), cfg)
        k += 1
        d = float(np.max(np.abs(v - target)))
        dists.append(d)
        if d <= threshold:
            first = k
    return ConvergenceReport(
        distances=np.array(dists), first_below=first, threshold=threshold
    )


def orbit_archive(orbit: PeriodicOrbit) -> dict:
    """JSON-able record plus the profile CSV for checkpointing an orbit."""
    return {
        "y": orbit.y,
        "residual": orbit.residual,
        "iterations": orbit.iterations,
        "profile_csv": field_to_csv(orbit.profile),
    }


def family_archive(orbits: Sequence[PeriodicOrbit]) -> str:
    """JSON archive of a solved family including the ordering certificate."""
    gaps = family_ordering_gaps(orbits)
    return json.dumps(
        {
            "ys": [o.y for o in orbits],
            "residuals": [o.residual for o in orbits],
            "iterations": [o.iterations for o in orbits],
            "min_pointwise_gaps": [float(g) for g in gaps],
        }
    )
