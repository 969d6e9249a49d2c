"""Sign-change bookkeeping: zero counts, nodal curves, boundary flux and the
count/flux/dissipation balance on space-time windows.

Conventions, chosen once so that all integer quantities are mutually
consistent:

* sgn(0) := +1 everywhere (grid nodes and probe samples). A node value of
  exactly zero joins the positive side.
* a spatial window [a, b) in cell units owns the node pairs whose left node
  lies in [a, b); time windows [s, t) own the steps that start in them.
* on a full-circle window the two boundary probes coincide, so the flux
  terms cancel identically.

A window is *resolved* when curve matching succeeds and the integer balance
closes exactly; anything else raises instead of reporting a bogus ledger.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field as dc_field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .dynamics import Trajectory
from .errors import (
    GridMismatchError,
    UnresolvedMatchingError,
    UnresolvedWindowError,
)
from .field import Field, GridSpec, derivative_values, require_same_grid


def _signs(values: np.ndarray) -> np.ndarray:
    """Signs in {-1, +1} with the sgn(0) := +1 tie-break."""
    return np.where(values < 0.0, -1, 1)


def _window_nodes(grid: GridSpec, cell_window: Tuple[float, float]) -> Tuple[int, int]:
    a, b = cell_window
    if not b > a:
        raise ValueError(f"empty window {cell_window}")
    if b - a > grid.cells + 1e-12:
        raise ValueError(f"window {cell_window} exceeds the circumference {grid.cells}")
    n = grid.points_per_cell
    j_lo = int(np.ceil(a * n - 1e-9))
    j_hi = int(np.ceil(b * n - 1e-9))
    return j_lo, j_hi


def zero_count(u: Field, v: Field, cell_window: Tuple[float, float]) -> int:
    """Number of strict sign changes of u - v across node pairs in [a, b).

    For u == v the count is 0 by convention.
    """
    require_same_grid(u, v)
    j_lo, j_hi = _window_nodes(u.grid, cell_window)
    w = u.values - v.values
    s = _signs(w)
    idx = np.arange(j_lo, j_hi + 1) % u.grid.total_points
    sv = s[idx]
    return int(np.count_nonzero(sv[:-1] != sv[1:]))


def _crossing_positions(w: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Interpolated zero positions for every sign-change edge on the circle.

    Edge (j, j+1) maps to x_j + dx * w_j / (w_j - w_{j+1}), which lies in
    [x_j, x_{j+1}]; positions are reduced mod the circumference.
    """
    N = grid.total_points
    s = _signs(w)
    change = s != np.roll(s, -1)
    j = np.nonzero(change)[0]
    if j.size == 0:
        return np.empty(0)
    wj = w[j]
    wj1 = w[(j + 1) % N]
    pos = (j + wj / (wj - wj1)) * grid.dx
    return np.mod(pos, float(grid.cells))


def subgrid_zeroes(u: Field, v: Field, cell_window: Tuple[float, float]) -> np.ndarray:
    """Interpolated crossing locations of u - v inside [a, b), in edge order."""
    require_same_grid(u, v)
    j_lo, j_hi = _window_nodes(u.grid, cell_window)
    N = u.grid.total_points
    w = u.values - v.values
    s = _signs(w)
    out = []
    for j in range(j_lo, j_hi):
        ja, jb = j % N, (j + 1) % N
        if s[ja] != s[jb]:
            frac = w[ja] / (w[ja] - w[jb])
            out.append(((j + frac) * u.grid.dx) % float(u.grid.cells))
    return np.array(out)


def tangency_scan(u: Field, v: Field, tol_v: float, tol_d: float) -> List[Tuple[float, float, float]]:
    """Nodes where |w| < tol_v and |w_x| < tol_d simultaneously.

    These are the numerical candidates for multiple (tangential) zeroes; an
    empty list certifies transversality at the given tolerances.
    """
    if tol_v <= 0 or tol_d <= 0:
        raise ValueError("tolerances must be positive")
    require_same_grid(u, v)
    w = u.values - v.values
    wx = derivative_values(w, u.grid.dx)
    hits = np.nonzero((np.abs(w) < tol_v) & (np.abs(wx) < tol_d))[0]
    x = u.grid.nodes()
    return [(float(x[j]), float(abs(w[j])), float(abs(wx[j]))) for j in hits]


def boundary_flux(series: np.ndarray, times: np.ndarray, window: Tuple[float, float]) -> int:
    """Net signed count of zero-crossings in time of a fixed-location probe.

    Each sign flip of the probe contributes -sgn(w_t) at the crossing:
    +1 when the series goes down through zero, -1 when it goes up. A probe
    value of exactly zero joins the positive side, consistent with
    zero_count. Crossings are attributed to the step on which they occur,
    and steps starting in [s, t) are counted.
    """
    series = np.asarray(series, dtype=np.float64)
    times = np.asarray(times, dtype=np.float64)
    i0 = _time_index(times, window[0])
    i1 = _time_index(times, window[1])
    if i1 < i0:
        raise ValueError("window end precedes window start")
    s = _signs(series[i0 : i1 + 1])
    return int(np.sum((s[:-1] - s[1:]) // 2))


def _time_index(times: np.ndarray, t: float) -> int:
    i = int(np.argmin(np.abs(times - t)))
    if abs(times[i] - t) > 1e-9 * max(1.0, abs(t)):
        raise ValueError(f"time {t} is outside the recorded range")
    return i


# ---------------------------------------------------------------------------
# Nodal curves
# ---------------------------------------------------------------------------


@dataclass
class NodalCurve:
    """A single tracked zero: time-ordered (t, x) samples on the circle.

    terminal is None while the curve is open, or (t_d, x_d) if it ended in
    an annihilation event.
    """

    samples: List[Tuple[float, float]] = dc_field(default_factory=list)
    terminal: Optional[Tuple[float, float]] = None


@dataclass(frozen=True)
class AnnihilationEvent:
    x: float
    t: float
    multiplicity_drop: int


def _circ_dist(a: float, b: float, L: float) -> float:
    d = abs(a - b) % L
    return min(d, L - d)


def _circ_mid(a: float, b: float, L: float) -> float:
    d = (b - a) % L
    if d <= L - d:
        return (a + d / 2.0) % L
    return (b + (L - d) / 2.0) % L


def _match_step(old: np.ndarray, new: np.ndarray, L: float):
    """Order-preserving matching of two sorted circular zero lists.

    Returns (assignment, leftover_pairs): assignment[j] is the old index
    matched to new[j]; leftover_pairs lists (i_a, i_b) of adjacent unmatched
    old indices that annihilated. Raises UnresolvedMatchingError when the
    lists cannot be reconciled at this stride.
    """
    K_old, K_new = old.size, new.size
    if K_new > K_old:
        raise UnresolvedMatchingError(
            f"zero count increased {K_old} -> {K_new}; refine the snapshot stride"
        )
    if (K_old - K_new) % 2 != 0:
        raise UnresolvedMatchingError(
            f"odd count change {K_old} -> {K_new}; refine the snapshot stride"
        )
    if K_new == 0:
        leftovers = list(range(K_old))
    else:
        # Gap from each old zero to its circular neighbours bounds how far a
        # match may claim it without ambiguity.
        if K_old >= 2:
            gaps = np.minimum(
                (old - np.roll(old, 1)) % L, (np.roll(old, -1) - old) % L
            )
        else:
            gaps = np.full(K_old, L)
        assignment = np.full(K_new, -1, dtype=int)
        taken = np.zeros(K_old, dtype=bool)
        for j in range(K_new):
            d = np.abs(old - new[j])
            d = np.minimum(d, L - d)
            i = int(np.argmin(d))
            if d[i] >= 0.5 * gaps[i] and K_old > 1:
                raise UnresolvedMatchingError(
                    f"ambiguous match at x={new[j]:.6g} (moved {d[i]:.3g}, "
                    f"local gap {gaps[i]:.3g}); refine the snapshot stride"
                )
            if taken[i]:
                raise UnresolvedMatchingError(
                    f"two zeroes claim the same ancestor at x={old[i]:.6g}; "
                    "refine the snapshot stride"
                )
            taken[i] = True
            assignment[j] = i
        # cyclic order preservation: matched old indices must be rotationally
        # monotone in the order of the new list
        if K_new >= 2:
            rel = (assignment - assignment[0]) % K_old
            if not np.all(np.diff(rel) > 0):
                raise UnresolvedMatchingError("matching would cross curves; refine stride")
        leftovers = [i for i in range(K_old) if not taken[i]]

    if len(leftovers) % 2 != 0:
        raise UnresolvedMatchingError("unmatched zeroes cannot pair up; refine stride")
    pairs = []
    if leftovers:
        if len(leftovers) == 2:
            pairs = [(leftovers[0], leftovers[1])]
        else:
            # two cyclic pairings of the leftover sequence; pick the tighter
            cand = []
            for off in (0, 1):
                rot = leftovers[off:] + leftovers[:off]
                p = [(rot[k], rot[k + 1]) for k in range(0, len(rot) - 1, 2)]
                width = sum(_circ_dist(old[a], old[b], L) for a, b in p)
                cand.append((width, p))
            pairs = min(cand, key=lambda c: c[0])[1]
    if K_new == 0:
        assignment = np.empty(0, dtype=int)
    return assignment, pairs


def match_curves(
    traj_or_snapshots,
    t_window: Optional[Tuple[float, float]] = None,
) -> Tuple[List[NodalCurve], List[AnnihilationEvent]]:
    """Track the zeroes of a difference trajectory through time.

    Accepts a Trajectory whose snapshots are the difference w, or a list of
    (time, Field). Matching is cyclic-order-preserving; when the count drops
    by 2k the unmatched zeroes are paired adjacently into annihilation
    events of multiplicity 2 each. Curves from one run are pairwise disjoint
    at every sampled time.
    """
    if isinstance(traj_or_snapshots, Trajectory):
        snaps = traj_or_snapshots.snapshots
    else:
        snaps = list(traj_or_snapshots)
    if t_window is not None:
        s, t = t_window
        snaps = [
            (ts, f)
            for ts, f in snaps
            if ts >= s - 1e-12 * max(1.0, abs(s)) and ts <= t + 1e-12 * max(1.0, abs(t))
        ]
    if not snaps:
        raise ValueError("no snapshots in the requested window")

    grid = snaps[0][1].grid
    L = float(grid.cells)
    curves: List[NodalCurve] = []
    events: List[AnnihilationEvent] = []

    t0, f0 = snaps[0]
    pos = np.sort(_crossing_positions(f0.values, grid))
    active = []
    for x in pos:
        c = NodalCurve(samples=[(t0, float(x))])
        curves.append(c)
        active.append(c)

    prev_t, prev_pos = t0, pos
    for ts, f in snaps[1:]:
        new_pos = np.sort(_crossing_positions(f.values, grid))
        assignment, pairs = _match_step(prev_pos, new_pos, L)
        for i_a, i_b in pairs:
            x_e = _circ_mid(float(prev_pos[i_a]), float(prev_pos[i_b]), L)
            t_e = 0.5 * (prev_t + ts)
            for i in (i_a, i_b):
                active[i].terminal = (t_e, x_e)
            events.append(AnnihilationEvent(x=x_e, t=t_e, multiplicity_drop=2))
        next_active = [None] * new_pos.size
        for j in range(new_pos.size):
            c = active[int(assignment[j])]
            c.samples.append((ts, float(new_pos[j])))
            next_active[j] = c
        active = next_active
        prev_t, prev_pos = ts, new_pos
    return curves, events


# ---------------------------------------------------------------------------
# Balance ledger
# ---------------------------------------------------------------------------


@dataclass
class ZeroLedger:
    """Integer accounting of zeroes on a space-time window.

    residual = (Z_end - Z_start) - (F_right - F_left - D); a resolved window
    closes with residual exactly 0.
    """

    window: Tuple[float, float, float, float]
    Z_start: int
    Z_end: int
    F_left: int
    F_right: int
    D: int
    residual: int
    events: List[AnnihilationEvent]

    def to_json(self) -> str:
        return json.dumps(
            {
                "window": list(self.window),
                "Z_start": self.Z_start,
                "Z_end": self.Z_end,
                "F_left": self.F_left,
                "F_right": self.F_right,
                "D": self.D,
                "residual": self.residual,
                "events": [[e.x, e.t, e.multiplicity_drop] for e in self.events],
            }
        )


def _paired_difference_snapshots(u_traj: Trajectory, v_traj: Trajectory):
    if u_traj.grid != v_traj.grid:
        raise GridMismatchError("trajectories live on different grids")
    if len(u_traj.snapshots) != len(v_traj.snapshots):
        raise GridMismatchError("trajectories recorded different snapshot sets")
    if not np.array_equal(u_traj.probe_times, v_traj.probe_times):
        raise GridMismatchError("trajectories recorded different probe step grids")
    out = []
    for (ta, fa), (tb, fb) in zip(u_traj.snapshots, v_traj.snapshots):
        if abs(ta - tb) > 1e-12 * max(1.0, abs(ta)):
            raise GridMismatchError("snapshot times differ between trajectories")
        out.append((ta, fa - fb))
    return out


def balance_ledger(
    u_traj: Trajectory,
    v_traj: Trajectory,
    window: Tuple[float, float, float, float],
    strict: bool = True,
) -> ZeroLedger:
    """Count/flux/dissipation ledger for w = u - v on a space-time window.

    window = (x_left, x_right, t_start, t_end) with x in cell units; the
    full circle is x_right - x_left == circumference, where the two flux
    terms are identical by construction. With strict=True (the default) a
    nonzero residual raises UnresolvedWindowError instead of returning.
    """
    x_l, x_r, t_s, t_e = window
    grid = u_traj.grid
    L = float(grid.cells)
    if not (x_l < x_r <= x_l + L + 1e-12):
        raise ValueError(f"bad spatial window ({x_l}, {x_r})")
    full_circle = abs((x_r - x_l) - L) <= 1e-12

    w_snaps = _paired_difference_snapshots(u_traj, v_traj)
    times = [ts for ts, _ in w_snaps]
    w_by_time = dict(zip(times, (f for _, f in w_snaps)))

    def snap_at(t):
        for ts, f in w_snaps:
            if abs(ts - t) <= 1e-9 * max(1.0, abs(t)):
                return f
        raise ValueError(f"no snapshot at t={t}; record every step over the window")

    w_s = snap_at(t_s)
    w_e = snap_at(t_e)
    zero = Field(grid, np.zeros(grid.total_points))
    Z_start = zero_count(w_s, zero, (x_l, x_r))
    Z_end = zero_count(w_e, zero, (x_l, x_r))

    def probe_diff(x):
        return u_traj.probe_series(x) - v_traj.probe_series(x)

    F_left = boundary_flux(probe_diff(x_l), u_traj.probe_times, (t_s, t_e))
    if full_circle:
        F_right = F_left
    else:
        F_right = boundary_flux(probe_diff(x_r), u_traj.probe_times, (t_s, t_e))

    _, events = match_curves(w_snaps, t_window=(t_s, t_e))
    in_window = [
        e
        for e in events
        if t_s - 1e-12 <= e.t < t_e and (full_circle or _in_cell_window(e.x, x_l, x_r, L))
    ]
    D = sum(e.multiplicity_drop for e in in_window)

    residual = (Z_end - Z_start) - (F_right - F_left - D)
    ledger = ZeroLedger(
        window=(x_l, x_r, t_s, t_e),
        Z_start=Z_start,
        Z_end=Z_end,
        F_left=F_left,
        F_right=F_right,
        D=D,
        residual=residual,
        events=in_window,
    )
    if strict and residual != 0:
        raise UnresolvedWindowError(
            f"balance does not close on this window (residual {residual}); "
            "refine the stride or move the window off degenerate crossings: "
            + ledger.to_json()
        )
    return ledger


def _in_cell_window(x: float, a: float, b: float, L: float) -> bool:
    return (x - a) % L < (b - a) - 1e-12 or abs((x - a) % L) <= 1e-12


def curves_to_csv(curves: Sequence[NodalCurve]) -> str:
    """CSV polylines: curve_id, t, x, terminal flag on the closing sample."""
    buf = io.StringIO()
    buf.write("curve_id,t,x,terminal\n")
    for cid, c in enumerate(curves):
        for t, x in c.samples:
            buf.write(f"{cid},{t:.17g},{x:.17g},open\n")
        if c.terminal is not None:
            t_d, x_d = c.terminal
            buf.write(f"{cid},{t_d:.17g},{x_d:.17g},annihilated\n")
    return buf.getvalue()
