import numpy as np
import pytest

from zeroflow.burgers import classical_burgers, solve_v_family, standard_forcing
from zeroflow.dynamics import Nonlinearity, StepperConfig, evolve
from zeroflow.ensemble import (
    Ensemble,
    PAIR_EQUALITY_TOL,
    bernoulli_ensemble,
    density_of_zeroes,
    ensemble_manifest,
    evolve_ensemble,
    gradient_energy,
    injectivity_report,
    omega_average_stats,
    projection_pi,
    weakstar_distance,
    zero_functional,
)
from zeroflow.errors import GridMismatchError
from zeroflow.field import Field, make_grid, mass, mass_per_cell, sample, shift_cell, tile
from zeroflow.nodal import zero_count


def letter_profiles(n=32):
    g1 = make_grid(1, n)
    p1 = sample(lambda x: 0.4 * np.sin(2 * np.pi * x) * np.sin(np.pi * x) ** 2, g1)
    return Field(g1, -p1.values), p1


class TestBernoulli:
    def test_reproducible_and_patterned(self):
        p0, p1 = letter_profiles()
        a = bernoulli_ensemble(p0, p1, 8, 8, seed=3)
        b = bernoulli_ensemble(p0, p1, 8, 8, seed=3)
        for fa, fb in zip(a.members, b.members):
            assert np.array_equal(fa.values, fb.values)
        assert a.lineage["kind"] == "bernoulli"

    def test_identical_profiles_identical_up_to_jitter(self):
        p0, _ = letter_profiles()
        e = bernoulli_ensemble(p0, p0, 4, 4, seed=9, jitter=1e-3)
        base = e.members[0].values
        for f in e.members[1:]:
            assert np.max(np.abs(f.values - base)) <= 2e-3 * np.max(np.abs(base)) + 1e-15

    def test_single_member_rejected(self):
        p0, p1 = letter_profiles()
        with pytest.raises(ValueError):
            bernoulli_ensemble(p0, p1, 8, 1, seed=0)

    def test_junction_mismatch_rejected(self):
        p0, p1 = letter_profiles()
        shifted = Field(p1.grid, p1.values + 0.5)
        with pytest.raises(ValueError):
            bernoulli_ensemble(p0, shifted, 8, 4, seed=0)

    def test_per_cell_masses_are_letter_masses(self):
        p0, p1 = letter_profiles()
        m0 = mass(p0)  # zero for this antisymmetric letter
        e = bernoulli_ensemble(p0, p1, 8, 4, seed=5)
        for f in e.members:
            assert np.allclose(mass_per_cell(f), m0, atol=1e-15)


class TestZeroFunctional:
    def test_identical_members_zero(self):
        p0, _ = letter_profiles()
        e = bernoulli_ensemble(p0, p0, 4, 4, seed=9, jitter=0.0)
        assert zero_functional(e) == 0.0

    def test_two_member_hand_count(self):
        g1 = make_grid(1, 32)
        u = tile(sample(lambda x: np.sin(2 * np.pi * x), g1), 8)
        z = Field(u.grid, np.zeros(u.grid.total_points))
        e = Ensemble(grid=u.grid, members=[u, z], weights=np.array([0.5, 0.5]), seed=0, lineage={})
        # 4 ordered pairs: two vanish, two carry 16 circle zeroes / 8 cells = 2
        assert zero_functional(e) == 1.0

    def test_matches_bruteforce(self):
        # dyadic weights (count 8, L 8) keep every partial sum exact, so the
        # two evaluation orders agree bitwise
        p0, p1 = letter_profiles()
        e = bernoulli_ensemble(p0, p1, 8, 8, seed=12)
        scale = max(1.0, float(np.max(np.abs(e.values_matrix()))))
        brute = 0.0
        for a, fa in enumerate(e.members):
            for b, fb in enumerate(e.members):
                if np.max(np.abs(fa.values - fb.values)) <= PAIR_EQUALITY_TOL * scale:
                    z = 0.0
                else:
                    z = sum(
                        zero_count(shift_cell(fa, k), shift_cell(fb, k), (0, 1))
                        for k in range(8)
                    ) / 8
                brute += e.weights[a] * e.weights[b] * z
        assert zero_functional(e) == brute

    def test_cross_functional_with_field(self):
        p0, p1 = letter_profiles()
        e = bernoulli_ensemble(p0, p1, 8, 4, seed=2)
        target = Field(e.grid, np.zeros(e.grid.total_points))
        val = zero_functional(e, target)
        brute = sum(
            w * density_of_zeroes(f, target) for w, f in zip(e.weights, e.members)
        )
        assert val == pytest.approx(brute, abs=1e-15)

    def test_shift_invariance_exact(self):
        p0, p1 = letter_profiles()
        e = bernoulli_ensemble(p0, p1, 8, 5, seed=21)
        shifted = Ensemble(
            grid=e.grid,
            members=[shift_cell(f, 3) for f in e.members],
            weights=e.weights,
            seed=e.seed,
            lineage=e.lineage,
        )
        assert zero_functional(shifted) == zero_functional(e)


class TestDensity:
    def test_tiled_sine(self):
        g1 = make_grid(1, 32)
        u = tile(sample(lambda x: np.sin(2 * np.pi * x), g1), 8)
        z = Field(u.grid, np.zeros(u.grid.total_points))
        assert density_of_zeroes(u, z) == 2.0

    def test_equal_fields(self):
        g = make_grid(4, 16)
        u = Field(g, np.random.default_rng(0).standard_normal(64))
        assert density_of_zeroes(u, u) == 0.0

    def test_needs_torus(self):
        g = make_grid(1, 64)
        u = sample(lambda x: np.sin(2 * np.pi * x), g)
        with pytest.raises(GridMismatchError):
            density_of_zeroes(u, u)

    def test_bernoulli_member_count(self):
        p0, p1 = letter_profiles()
        e = bernoulli_ensemble(p0, p1, 8, 4, seed=6)
        z = Field(e.grid, np.zeros(e.grid.total_points))
        for f in e.members:
            d = density_of_zeroes(f, z)
            total = zero_count(f, z, (0, 8))
            assert d == total / 8
            assert 1.0 <= d <= 3.0


class TestEvolveEnsemble:
    def test_constants_have_no_zeroes(self):
        g = make_grid(8, 16)
        members = [Field(g, np.full(128, c)) for c in (0.1, 0.2, 0.3)]
        e = Ensemble(grid=g, members=members, weights=np.full(3, 1 / 3), seed=0, lineage={})
        nl = classical_burgers()
        report, _ = evolve_ensemble(e, nl, 3, StepperConfig(dt=1e-3))
        assert np.all(report.Z_mu == 0.0)

    def test_heat_decreases_functional(self):
        p0, p1 = letter_profiles(16)
        e = bernoulli_ensemble(p0, p1, 8, 8, seed=13)
        nl = Nonlinearity.reaction(lambda t, x, u: 0.0 * u, autonomous=True)
        report, _ = evolve_ensemble(e, nl, 5, StepperConfig(dt=1e-3))
        assert not report.monotonicity_violations
        assert report.Z_mu[1] < report.Z_mu[0]

    def test_tiled_orbit_is_fixed_member(self):
        g1 = make_grid(1, 32)
        nl = classical_burgers(g_hat=standard_forcing(0.2))
        cfg = StepperConfig(dt=1e-3)
        (orbit,) = solve_v_family(nl, [0.0], 1e-8, 30, cfg, g1)
        tiled = tile(orbit.profile, 8)
        e = Ensemble(grid=tiled.grid, members=[tiled], weights=np.array([1.0]), seed=0, lineage={})
        report, evolved = evolve_ensemble(e, nl, 3, cfg)
        assert np.all(report.Z_mu == 0.0)
        moved = np.max(np.abs(evolved.members[0].values - tiled.values))
        assert moved <= 1e-8


class TestWeakstar:
    def test_orbit_ensemble_is_at_distance_zero(self):
        g1 = make_grid(1, 32)
        nl = classical_burgers(g_hat=standard_forcing(0.2))
        cfg = StepperConfig(dt=1e-3)
        (orbit,) = solve_v_family(nl, [0.0], 1e-8, 30, cfg, g1)
        tiled = tile(orbit.profile, 8)
        e = Ensemble(grid=tiled.grid, members=[tiled, tiled], weights=np.array([0.5, 0.5]), seed=0, lineage={})
        assert weakstar_distance(e, orbit) <= 1e-12

    def test_grid_mismatch(self):
        g1 = make_grid(1, 32)
        nl = classical_burgers(g_hat=standard_forcing(0.2))
        (orbit,) = solve_v_family(nl, [0.0], 1e-8, 30, StepperConfig(dt=1e-3), g1)
        other = make_grid(8, 16)
        e = Ensemble(
            grid=other,
            members=[Field(other, np.zeros(128))] * 2,
            weights=np.array([0.5, 0.5]),
            seed=0,
            lineage={},
        )
        with pytest.raises(GridMismatchError):
            weakstar_distance(e, orbit)


class TestOmegaAverage:
    def test_fixed_point_visits_always(self):
        g = make_grid(1, 64)
        nl = classical_burgers()
        u0 = sample(lambda x: 0 * x + 0.3, g)
        traj = evolve(u0, nl, 0.0, 5.0, StepperConfig(dt=1e-2), snapshot_stride=100)
        assert omega_average_stats(traj, u0, 1e-3) == 1.0

    def test_wrong_mass_never_visits(self):
        g = make_grid(1, 64)
        nl = classical_burgers()
        u0 = sample(lambda x: 0 * x + 0.3, g)
        target = sample(lambda x: 0 * x + 0.5, g)
        traj = evolve(u0, nl, 0.0, 5.0, StepperConfig(dt=1e-2), snapshot_stride=100)
        assert omega_average_stats(traj, target, 1e-3) == 0.0


class TestGradientEnergy:
    DOUBLE_WELL = staticmethod(lambda x, u: 0.25 * u**4 - 0.5 * u**2)

    def test_minimizers(self):
        g = make_grid(4, 16)
        for c in (-1.0, 1.0):
            u = Field(g, np.full(64, c))
            assert gradient_energy(u, self.DOUBLE_WELL) == pytest.approx(-0.25, abs=1e-14)

    def test_zero_state(self):
        g = make_grid(4, 16)
        assert gradient_energy(Field(g, np.zeros(64)), self.DOUBLE_WELL) == 0.0

    def test_flow_decreases_energy(self):
        g = make_grid(4, 16)
        nl = Nonlinearity.gradient(V=self.DOUBLE_WELL, dVdu=lambda x, u: u**3 - u)
        rng = np.random.default_rng(30)
        u = Field(g, 0.4 * np.sin(2 * np.pi * g.nodes() / 4) + 0.05 * rng.standard_normal(64))
        traj = evolve(u, nl, 0.0, 2.0, StepperConfig(dt=1e-3), snapshot_stride=500)
        energies = [gradient_energy(f, self.DOUBLE_WELL) for _, f in traj.snapshots]
        slack = 1e-9 * 500
        assert all(b <= a + slack for a, b in zip(energies, energies[1:]))


class TestProjection:
    def test_constant(self):
        g = make_grid(1, 64)
        assert projection_pi(sample(lambda x: 0 * x + 0.7, g)) == (0.7, 0.0)

    def test_injectivity_on_family(self):
        g = make_grid(1, 128)
        nl = classical_burgers(g_hat=standard_forcing(0.2))
        orbits = solve_v_family(nl, [-0.3, 0.0, 0.3], 1e-8, 30, StepperConfig(dt=2e-4), g)
        rep = injectivity_report([o.profile for o in orbits])
        firsts = [p[0] for p in rep.projections]
        assert firsts == sorted(firsts)
        assert rep.min_distance > 0

    def test_flags_locally_equal_fields(self):
        # equal near x=0 but different elsewhere: projections collide
        g = make_grid(1, 128)
        u = sample(lambda x: np.sin(np.pi * x) ** 4, g)
        v = sample(lambda x: 0 * x, g)
        rep = injectivity_report([u, v])
        assert rep.min_distance < 1e-6
        assert rep.closest_pair == (0, 1)


class TestManifest:
    def test_round_trippable_json(self):
        import json

        p0, p1 = letter_profiles()
        e = bernoulli_ensemble(p0, p1, 8, 4, seed=99)
        doc = json.loads(ensemble_manifest(e))
        assert doc["seed"] == 99
        assert doc["lineage"]["count"] == 4
