import numpy as np
import pytest

from zeroflow.dynamics import Nonlinearity, StepperConfig, evolve, synthetic_trajectory
from zeroflow.errors import (
    GridMismatchError,
    UnresolvedMatchingError,
    UnresolvedWindowError,
)
from zeroflow.field import Field, make_grid, sample, shift_cell
from zeroflow.nodal import (
    balance_ledger,
    boundary_flux,
    match_curves,
    subgrid_zeroes,
    tangency_scan,
    zero_count,
)


def heat():
    return Nonlinearity.reaction(lambda t, x, u: 0.0 * u, autonomous=True)


@pytest.fixture(scope="module")
def g256():
    return make_grid(1, 256)


@pytest.fixture(scope="module")
def zero256(g256):
    return sample(lambda x: 0 * x, g256)


# analytic roots of sin(2 pi x)(1 + 1.2 cos(2 pi x)) = sin 2pi x + 0.6 sin 4pi x
FOUR_ZERO_ROOTS = sorted([0.0, 0.5, np.arccos(-5 / 6) / (2 * np.pi), 1 - np.arccos(-5 / 6) / (2 * np.pi)])


class TestZeroCount:
    def test_single_sine(self, g256, zero256):
        u = sample(lambda x: np.sin(2 * np.pi * x), g256)
        assert zero_count(u, zero256, (0, 1)) == 2

    def test_equal_fields_count_zero(self, g256):
        u = sample(lambda x: np.sin(2 * np.pi * x), g256)
        assert zero_count(u, u, (0, 1)) == 0

    def test_two_mode_field(self, g256, zero256):
        u = sample(lambda x: np.sin(2 * np.pi * x) + 0.6 * np.sin(4 * np.pi * x), g256)
        assert zero_count(u, zero256, (0, 1)) == 4

    def test_grid_mismatch(self, g256):
        u = sample(lambda x: 0 * x, g256)
        v = sample(lambda x: 0 * x, make_grid(1, 128))
        with pytest.raises(GridMismatchError):
            zero_count(u, v, (0, 1))

    def test_parity_on_circle(self):
        g = make_grid(1, 64)
        rng = np.random.default_rng(17)
        zero = sample(lambda x: 0 * x, g)
        for _ in range(50):
            u = Field(g, rng.standard_normal(64))
            assert zero_count(u, zero, (0, 1)) % 2 == 0

    def test_shift_equivariance(self):
        g = make_grid(6, 32)
        rng = np.random.default_rng(23)
        u = Field(g, rng.standard_normal(g.total_points))
        v = Field(g, rng.standard_normal(g.total_points))
        for a, b in [(0, 1), (2, 4), (1.5, 3.25)]:
            left = zero_count(shift_cell(u, 1), shift_cell(v, 1), (a, b))
            right = zero_count(u, v, (a - 1, b - 1))
            assert left == right


class TestSubgridZeroes:
    def test_sine_positions(self, g256, zero256):
        u = sample(lambda x: np.sin(2 * np.pi * x), g256)
        pos = np.sort(subgrid_zeroes(u, zero256, (0, 1)))
        assert np.allclose(pos, [0.0, 0.5], atol=g256.dx)

    def test_linear_profile_single_zero(self):
        # field x - 0.25 sampled over one cell of a two-cell grid: no wrap inside
        g = make_grid(2, 128)
        u = sample(lambda x: x - 0.25, g)
        v = sample(lambda x: 0 * x, g)
        pos = subgrid_zeroes(u, v, (0, 1))
        assert len(pos) == 1
        assert abs(pos[0] - 0.25) < 1e-12  # linear interpolation is exact on lines

    def test_four_zero_positions(self, g256, zero256):
        u = sample(lambda x: np.sin(2 * np.pi * x) + 0.6 * np.sin(4 * np.pi * x), g256)
        pos = np.sort(subgrid_zeroes(u, zero256, (0, 1)))
        assert np.allclose(pos, FOUR_ZERO_ROOTS, atol=2 * g256.dx)

    def test_length_matches_count(self, g256, zero256):
        rng = np.random.default_rng(5)
        u = Field(g256, rng.standard_normal(256))
        assert len(subgrid_zeroes(u, zero256, (0, 1))) == zero_count(u, zero256, (0, 1))


class TestTangencyScan:
    def test_transversal_is_empty(self, g256, zero256):
        u = sample(lambda x: np.sin(2 * np.pi * x), g256)
        assert tangency_scan(u, zero256, 1e-8, 1e-8) == []

    def test_double_root_detected(self, g256, zero256):
        u = sample(lambda x: 0.1 * np.sin(np.pi * x) ** 2, g256)
        hits = tangency_scan(u, zero256, 1e-6, 1e-3)
        assert any(x < 2 * g256.dx or x > 1 - 2 * g256.dx for x, _, _ in hits)

    def test_tolerances_validated(self, g256, zero256):
        with pytest.raises(ValueError):
            tangency_scan(g256 and zero256, zero256, -1.0, 1e-3)


class TestBoundaryFlux:
    def test_half_window_up_crossing(self):
        times = np.linspace(0, 1, 2001)
        series = -np.cos(2 * np.pi * times)
        assert boundary_flux(series, times, (0.0, 0.5)) == -1

    def test_full_window_cancels(self):
        times = np.linspace(0, 1, 2001)
        series = -np.cos(2 * np.pi * times)
        assert boundary_flux(series, times, (0.0, 1.0)) == 0

    def test_constant_sign(self):
        times = np.linspace(0, 1, 101)
        assert boundary_flux(np.ones(101), times, (0.0, 1.0)) == 0

    def test_window_outside_range(self):
        times = np.linspace(0, 1, 11)
        with pytest.raises(ValueError):
            boundary_flux(np.ones(11), times, (0.0, 2.0))


class TestMatchCurves:
    def test_translating_sine(self):
        g = make_grid(1, 256)
        traj = synthetic_trajectory(
            lambda x, t: np.sin(2 * np.pi * (x - t)), g, 0.0, 0.25, 1 / 512, snapshot_stride=4
        )
        curves, events = match_curves(traj)
        assert len(curves) == 2 and not events
        for c in curves:
            (t0, x0), (t1, x1) = c.samples[0], c.samples[-1]
            slope = ((x1 - x0) % 1) / (t1 - t0)
            assert abs(slope - 1.0) < 0.02
            assert c.terminal is None

    def test_heat_annihilation_event(self):
        g = make_grid(1, 512)
        u0 = sample(lambda x: np.sin(2 * np.pi * x) + 0.6 * np.sin(4 * np.pi * x), g)
        traj = evolve(u0, heat(), 0.0, 0.01, StepperConfig(dt=1e-4), snapshot_stride=1)
        curves, events = match_curves(traj)
        assert len(events) == 1
        ev = events[0]
        assert ev.multiplicity_drop == 2
        assert abs(ev.x - 0.5) < 0.01
        assert abs(ev.t - np.log(1.2) / (12 * np.pi**2)) < 2e-4
        open_curves = [c for c in curves if c.terminal is None]
        assert len(open_curves) == 2

    def test_constant_nonzero_has_no_curves(self):
        g = make_grid(1, 64)
        traj = synthetic_trajectory(lambda x, t: 0 * x + 1.0, g, 0.0, 0.1, 0.01)
        curves, events = match_curves(traj)
        assert curves == [] and events == []

    def test_count_increase_rejected(self):
        g = make_grid(1, 64)
        snaps = [
            (0.0, sample(lambda x: 0 * x + 1.0, g)),
            (0.1, sample(lambda x: np.sin(2 * np.pi * x), g)),
        ]
        with pytest.raises(UnresolvedMatchingError):
            match_curves(snaps)

    def test_curves_disjoint_at_sampled_times(self):
        g = make_grid(1, 256)
        traj = synthetic_trajectory(
            lambda x, t: np.sin(4 * np.pi * (x - 0.3 * t)) + 0.1, g, 0.0, 0.2, 0.005
        )
        curves, _ = match_curves(traj)
        by_time = {}
        for c in curves:
            for t, x in c.samples:
                by_time.setdefault(t, []).append(x)
        for xs in by_time.values():
            assert len(xs) == len(set(xs))


TRANSLATING_BUMP_SHIFT = 0.275
BUMP_LEVEL = np.cos(0.35 * np.pi)


def bump(x, t):
    # zeros at 0.1 + t and 0.45 + t, positive in between
    return np.cos(2 * np.pi * (x - t - TRANSLATING_BUMP_SHIFT)) - BUMP_LEVEL


def bump_trajectories(n=256, dt=1 / 1024):
    g = make_grid(1, n)
    probes = [0.0, 0.5]
    u = synthetic_trajectory(bump, g, 0.0, 0.25, dt, probes=probes, snapshot_stride=1)
    v = synthetic_trajectory(lambda x, t: 0.0 * x, g, 0.0, 0.25, dt, probes=probes, snapshot_stride=1)
    return u, v


class TestBalanceLedger:
    def test_heat_full_circle(self):
        g = make_grid(1, 512)
        cfg = StepperConfig(dt=1e-4)
        u0 = sample(lambda x: np.sin(2 * np.pi * x) + 0.6 * np.sin(4 * np.pi * x), g)
        v0 = sample(lambda x: 0 * x, g)
        tu = evolve(u0, heat(), 0.0, 0.01, cfg, probes=[0.0], snapshot_stride=1)
        tv = evolve(v0, heat(), 0.0, 0.01, cfg, probes=[0.0], snapshot_stride=1)
        led = balance_ledger(tu, tv, (0.0, 1.0, 0.0, 0.01))
        assert (led.Z_start, led.Z_end, led.D, led.residual) == (4, 2, 2, 0)
        assert led.F_left == led.F_right

    def test_translating_window_flux(self):
        tu, tv = bump_trajectories()
        led = balance_ledger(tu, tv, (0.0, 0.5, 0.0, 0.25))
        assert led.residual == 0 and led.D == 0
        assert (led.F_right - led.F_left) != 0  # Z change balanced by flux alone

    def test_equal_trajectories_all_zero(self):
        g = make_grid(1, 128)
        u0 = sample(lambda x: np.sin(2 * np.pi * x), g)
        cfg = StepperConfig(dt=1e-3)
        tu = evolve(u0, heat(), 0.0, 0.01, cfg, probes=[0.0, 0.5], snapshot_stride=1)
        led = balance_ledger(tu, tu, (0.0, 0.5, 0.0, 0.01))
        assert (led.Z_start, led.Z_end, led.F_left, led.F_right, led.D, led.residual) == (0, 0, 0, 0, 0, 0)

    def test_refinement_stability(self):
        coarse = balance_ledger(*bump_trajectories(n=256, dt=1 / 1024), (0.0, 0.5, 0.0, 0.25))
        fine = balance_ledger(*bump_trajectories(n=512, dt=1 / 2048), (0.0, 0.5, 0.0, 0.25))
        for attr in ("Z_start", "Z_end", "F_left", "F_right", "D", "residual"):
            assert getattr(coarse, attr) == getattr(fine, attr)

    def test_polarity_adverse_window_raises(self):
        # the translating sine pushes zeroes of both polarities through the
        # probes, which the time-series flux cannot orient; the ledger must
        # refuse rather than report a nonzero residual
        g = make_grid(1, 256)
        probes = [0.0, 0.5]
        u = synthetic_trajectory(
            lambda x, t: np.sin(2 * np.pi * (x - t + 0.06)), g, 0.0, 0.25, 1 / 1024,
            probes=probes, snapshot_stride=1,
        )
        v = synthetic_trajectory(lambda x, t: 0.0 * x, g, 0.0, 0.25, 1 / 1024, probes=probes, snapshot_stride=1)
        with pytest.raises(UnresolvedWindowError):
            balance_ledger(u, v, (0.0, 0.5, 0.0, 0.25))
        led = balance_ledger(u, v, (0.0, 0.5, 0.0, 0.25), strict=False)
        assert led.residual != 0

    def test_sturm_monotonicity_with_events(self):
        # zero counts along a heat difference never increase and drops line
        # up with recorded annihilation events
        g = make_grid(1, 512)
        u0 = sample(lambda x: np.sin(2 * np.pi * x) + 0.6 * np.sin(4 * np.pi * x), g)
        v0 = sample(lambda x: 0 * x, g)
        cfg = StepperConfig(dt=1e-4)
        tu = evolve(u0, heat(), 0.0, 0.01, cfg, probes=[0.0], snapshot_stride=1)
        tv = evolve(v0, heat(), 0.0, 0.01, cfg, probes=[0.0], snapshot_stride=1)
        counts = [zero_count(fu, fv, (0, 1)) for (_, fu), (_, fv) in zip(tu.snapshots, tv.snapshots)]
        assert all(b <= a for a, b in zip(counts, counts[1:]))
        _, events = match_curves([(t, fu - fv) for (t, fu), (_, fv) in zip(tu.snapshots, tv.snapshots)])
        drop_times = [t for t, (a, b) in zip(tu.snapshot_times()[1:], zip(counts, counts[1:])) if b < a]
        assert len(drop_times) == len(events) == 1
        assert abs(drop_times[0] - events[0].t) <= 1e-4
