"""The fast invariant suite behind `zeroflow check`.

Each check is deterministic and desk-scale (the whole suite runs in about a
minute); the acceptance tests exercise the full-size versions.
"""

from __future__ import annotations

from typing import Callable, List, Tuple

import numpy as np

from . import burgers as bg
from . import ensemble as em
from . import nodal
from .dynamics import Nonlinearity, StepperConfig, evolve, evolve_values, synthetic_trajectory
from .field import Field, make_grid, mass, sample, shift_cell

Result = Tuple[str, bool, str]


def _heat() -> Nonlinearity:
    return Nonlinearity.reaction(lambda t, x, u: 0.0 * u, autonomous=True)


def check_derivative_order() -> Result:
    errs = []
    for n in (128, 256):
        g = make_grid(1, n)
        u = sample(lambda x: np.sin(4 * np.pi * x), g)
        from .field import derivative

        exact = 4 * np.pi * np.cos(4 * np.pi * g.nodes())
        errs.append(float(np.max(np.abs(derivative(u).values - exact))))
    rate = float(np.log2(errs[0] / errs[1]))
    return ("derivative-order", rate >= 3.7, f"rate {rate:.2f} on doubling 128->256")


def check_shift_exactness() -> Result:
    g = make_grid(8, 16)
    rng = np.random.default_rng(5)
    u = Field(g, rng.standard_normal(g.total_points))
    s = shift_cell(u, 3)
    ok = (
        np.array_equal(shift_cell(s, -3).values, u.values)
        and np.array_equal(shift_cell(u, 8).values, u.values)
        and mass(s) == mass(u)
        and s.sup_norm() == u.sup_norm()
    )
    return ("shift-exactness", ok, "bijection preserving mass and sup-norm")


def check_quadrature() -> Result:
    g = make_grid(1, 128)
    m1 = abs(mass(sample(lambda x: np.sin(2 * np.pi * x), g)))
    m2 = mass(sample(lambda x: 0.3 + 0 * x, g))
    ok = m1 <= 1e-15 and m2 == 0.3
    return ("quadrature-exactness", ok, f"|mass(sin)|={m1:.2e}, mass(const)={m2!r}")


def check_heat_decay() -> Result:
    g = make_grid(1, 256)
    u0 = sample(lambda x: np.sin(2 * np.pi * x), g)
    traj = evolve(u0, _heat(), 0.0, 0.1, StepperConfig(dt=1e-4), snapshot_stride=1000)
    err = abs(traj.final_field().sup_norm() - np.exp(-4 * np.pi**2 * 0.1))
    return ("heat-decay", err < 1e-4, f"sup error {err:.2e} at t=0.1")


def check_mass_conservation() -> Result:
    g = make_grid(1, 256)
    nl = bg.classical_burgers(g_hat=bg.standard_forcing(0.2))
    u0 = sample(lambda x: 0.3 + 0.1 * np.sin(2 * np.pi * x), g)
    traj = evolve(u0, nl, 0.0, 3.0, StepperConfig(dt=1e-3), snapshot_stride=500)
    drift = bg.check_mass_invariance(traj)
    return ("mass-conservation", drift <= 1e-12, f"max drift {drift:.2e} over 3 units")


def check_comparison_principle() -> Result:
    g = make_grid(1, 128)
    nl = bg.classical_burgers(g_hat=bg.standard_forcing(0.2))
    rng = np.random.default_rng(11)
    worst = -np.inf
    lows, highs = [], []
    for _ in range(10):
        coeffs = rng.uniform(-0.3, 0.3, 3)
        base = sum(
            c * np.sin(2 * np.pi * (k + 1) * g.nodes() + rng.uniform(0, 2 * np.pi))
            for k, c in enumerate(coeffs)
        )
        gap = rng.uniform(0.05, 0.3) * (1.2 + np.sin(2 * np.pi * g.nodes()))
        lows.append(base)
        highs.append(base + gap)
    states = np.vstack([np.array(lows), np.array(highs)])
    out = evolve_values(states, nl, g, 0.0, 0.5, StepperConfig(dt=2e-4))
    worst = float(np.max(out[:10] - out[10:]))
    return ("comparison-principle", worst <= 1e-9, f"max(u - v) = {worst:.2e}")


def check_balance_heat() -> Result:
    g = make_grid(1, 256)
    cfg = StepperConfig(dt=1e-4)
    u0 = sample(lambda x: np.sin(2 * np.pi * x) + 0.6 * np.sin(4 * np.pi * x), g)
    v0 = sample(lambda x: 0 * x, g)
    tu = evolve(u0, _heat(), 0.0, 0.01, cfg, probes=[0.0], snapshot_stride=1)
    tv = evolve(v0, _heat(), 0.0, 0.01, cfg, probes=[0.0], snapshot_stride=1)
    led = nodal.balance_ledger(tu, tv, (0.0, 1.0, 0.0, 0.01))
    ok = led.Z_start == 4 and led.Z_end == 2 and led.D == 2 and led.residual == 0
    return ("balance-heat-circle", ok, f"Z {led.Z_start}->{led.Z_end}, D={led.D}, residual={led.residual}")


def check_balance_translating() -> Result:
    g = make_grid(1, 256)
    c = np.cos(0.35 * np.pi)
    fn = lambda x, t: np.cos(2 * np.pi * (x - t - 0.275)) - c
    tu = synthetic_trajectory(fn, g, 0.0, 0.25, 1 / 1024, probes=[0.0, 0.5], snapshot_stride=1)
    tv = synthetic_trajectory(lambda x, t: 0.0 * x, g, 0.0, 0.25, 1 / 1024, probes=[0.0, 0.5], snapshot_stride=1)
    led = nodal.balance_ledger(tu, tv, (0.0, 0.5, 0.0, 0.25))
    ok = led.residual == 0 and led.D == 0 and (led.F_right - led.F_left) != 0
    return ("balance-translating-window", ok, f"flux {led.F_left}/{led.F_right}, residual={led.residual}")


def check_zero_monotonicity() -> Result:
    g = make_grid(1, 128)
    nl = bg.classical_burgers(g_hat=bg.standard_forcing(0.2))
    rng = np.random.default_rng(23)
    rows = []
    for _ in range(20):
        coeffs = rng.uniform(-0.4, 0.4, 3)
        rows.append(
            rng.uniform(-0.3, 0.3)
            + sum(
                c * np.sin(2 * np.pi * (k + 1) * g.nodes() + rng.uniform(0, 2 * np.pi))
                for k, c in enumerate(coeffs)
            )
        )
    states = np.array(rows)
    counts = []

    def pair_counts(vals):
        w = vals[:10] - vals[10:]
        s = np.where(w < 0, -1, 1)
        return (s != np.roll(s, -1, axis=-1)).sum(axis=-1)

    counts.append(pair_counts(states))
    from .dynamics import iterate_time_one

    for _, states in iterate_time_one(states, nl, g, StepperConfig(dt=2e-4), 5):
        counts.append(pair_counts(states))
    counts = np.array(counts)
    ok = bool(np.all(np.diff(counts, axis=0) <= 0))
    return ("zero-monotonicity", ok, f"10 pairs, 5 iterates, drops only: {ok}")


def check_band() -> Result:
    nl = bg.classical_burgers(g_hat=bg.standard_forcing(0.2))
    band = bg.apriori_band(nl)
    closed = all(
        abs(band.c2p[p] - bg.band_constant(p, band.c0)) <= 1e-14 for p in band.c2p
    )
    g = make_grid(1, 128)
    u0 = sample(lambda x: 0.1 + band.c0 * np.sin(2 * np.pi * x), g)
    traj = evolve(u0, nl, 0.0, 1.0, StepperConfig(dt=2e-4), snapshot_stride=500)
    held = bg.check_band(traj, 0.1, band)
    return ("apriori-band", closed and held, f"c0={band.c0}, holds over 1 unit: {held}")


def check_vfamily() -> Result:
    g = make_grid(1, 128)
    nl = bg.classical_burgers(g_hat=bg.standard_forcing(0.2))
    orbits = bg.solve_v_family(nl, [-0.25, 0.0, 0.25], 1e-8, 30, StepperConfig(dt=2e-4), g)
    gaps = bg.family_ordering_gaps(orbits)
    rep = em.injectivity_report([o.profile for o in orbits])
    firsts = [p[0] for p in rep.projections]
    ok = (
        all(o.residual <= 1e-8 for o in orbits)
        and np.all(gaps > 0)
        and firsts == sorted(firsts)
        and rep.min_distance > 0
    )
    return ("v-family", ok, f"residuals<=1e-8, min gap {float(np.min(gaps)):.3f}, pi injective")


def check_colehopf() -> Result:
    g = make_grid(1, 128)
    u0 = sample(lambda x: np.sin(2 * np.pi * x), g)
    rel = bg.cole_hopf_crosscheck(u0, None, 0.1, StepperConfig(dt=2e-4))
    return ("cole-hopf", rel <= 1e-5, f"relative sup error {rel:.2e} at t=0.1")


def check_ensemble_zmu() -> Result:
    g1 = make_grid(1, 32)
    p1 = sample(lambda x: 0.4 * np.sin(2 * np.pi * x) * np.sin(np.pi * x) ** 2, g1)
    p0 = Field(g1, -p1.values)
    ens = em.bernoulli_ensemble(p0, p1, 8, 16, seed=7)
    nl = bg.classical_burgers(g_hat=bg.standard_forcing(0.2))
    report, _ = em.evolve_ensemble(ens, nl, 5, StepperConfig(dt=1e-3))
    ok = not report.monotonicity_violations
    return ("ensemble-zero-functional", ok, f"Z_mu {report.Z_mu[0]:.3f} -> {report.Z_mu[-1]:.3f}, no rises")


def check_gradient_energy() -> Result:
    g = make_grid(8, 16)
    V = lambda x, u: 0.25 * u**4 - 0.5 * u**2
    nl = Nonlinearity.gradient(V=V, dVdu=lambda x, u: u**3 - u)
    rng = np.random.default_rng(3)
    u = Field(g, 0.5 * np.sin(2 * np.pi * g.nodes() / 8) + 0.1 * rng.standard_normal(g.total_points))
    cfg = StepperConfig(dt=1e-3)
    vals = u.values
    energies = [em.gradient_energy(Field(g, vals), V)]
    for k in range(1, 4):
        vals = evolve_values(vals, nl, g, float(k - 1), float(k), cfg)
        energies.append(em.gradient_energy(Field(g, vals), V))
    rises = np.diff(energies)
    ok = bool(np.all(rises <= 1e-9 * 1000))
    return ("gradient-energy", ok, f"max rise {float(np.max(rises)):.2e} per unit")


def check_reproducibility() -> Result:
    g = make_grid(1, 128)
    nl = bg.classical_burgers(g_hat=bg.standard_forcing(0.2))
    u0 = sample(lambda x: 0.2 + 0.3 * np.sin(2 * np.pi * x), g)
    a = evolve(u0, nl, 0.0, 0.2, StepperConfig(dt=1e-3), probes=[0.0], snapshot_stride=50)
    b = evolve(u0, nl, 0.0, 0.2, StepperConfig(dt=1e-3), probes=[0.0], snapshot_stride=50)
    ok = np.array_equal(a.final_field().values, b.final_field().values) and np.array_equal(
        a.probe_values, b.probe_values
    )
    return ("reproducibility", ok, "identical runs are bit-identical")


ALL_CHECKS: List[Callable[[], Result]] = [
    check_derivative_order,
    check_shift_exactness,
    check_quadrature,
    check_heat_decay,
    check_mass_conservation,
    check_comparison_principle,
    check_balance_heat,
    check_balance_translating,
    check_zero_monotonicity,
    check_band,
    check_vfamily,
    check_colehopf,
    check_ensemble_zmu,
    check_gradient_energy,
    check_reproducibility,
]


def run_invariant_suite() -> List[Result]:
    results = []
    for check in ALL_CHECKS:
        try:
            results.append(check())
        except Exception as err:  # a crash is a failure, not an abort
            results.append((check.__name__, False, f"raised {type(err).__name__}: {err}"))
    return results
