"""zeroflow: a desk-scale laboratory for scalar parabolic dynamics on periodic grids."""

from .field import (
    Field,
    GridSpec,
    derivative,
    make_grid,
    mass,
    mass_per_cell,
    sample,
    shift_cell,
    tile,
)
from .dynamics import (
    Nonlinearity,
    StepperConfig,
    Trajectory,
    evolve,
    evolve_values,
    iterate_time_one,
    step,
    synthetic_trajectory,
    time_one_map,
)
from .nodal import (
    NodalCurve,
    ZeroLedger,
    balance_ledger,
    boundary_flux,
    match_curves,
    subgrid_zeroes,
    tangency_scan,
    zero_count,
)
from .burgers import (
    AprioriBand,
    PeriodicOrbit,
    apriori_band,
    band_constant,
    check_band,
    check_mass_invariance,
    classical_burgers,
    cole_hopf_crosscheck,
    converge_to_vy,
    solve_v_family,
    standard_forcing,
)
from .ensemble import (
    Ensemble,
    EnsembleReport,
    bernoulli_ensemble,
    density_of_zeroes,
    evolve_ensemble,
    gradient_energy,
    injectivity_report,
    omega_average_stats,
    projection_pi,
    weakstar_distance,
    zero_functional,
)
from .expressions import parse_expression

__version__ = "0.1.0"
