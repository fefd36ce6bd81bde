"""Numerical toolkit for impulsive dynamical systems with grazing orbits:
event-located simulation, linearization at grazing points, Floquet-based
orbital-stability verdicts, and small-parameter continuation of cycles."""

from .core import (
    CONTACT,
    TRUNCATION,
    ConditionReport,
    JumpMap,
    PerturbedFamily,
    SampleSpec,
    Surface,
    SurfacePatch,
    SystemDef,
    as_state,
    builtin_names,
    builtin_system,
    finite_difference_jacobian,
    validate_conditions,
)
from .integrate import (
    Arc,
    DiscontinuityEvent,
    SimOptions,
    Trajectory,
    aligned_b_distance,
    b_distance,
    events_csv,
    group_property_check,
    integrate_arc,
    locate_crossing,
    simulate,
    simulate_backward,
    trajectory_csv,
)
from .graze import GrazeReport, axial_flag, classify_point, find_grazing_on_orbit
from .linearize import (
    LinearizeOptions,
    VariationalBranch,
    WJacobianResult,
    assemble_branches,
    b_matrix,
    grad_tau,
    w_jacobian,
    w_jacobian_fd,
    w_map,
)
from .floquet import (
    MonodromyResult,
    StabilityVerdict,
    liouville_defect,
    monodromy,
    stability_verdict,
    transition_matrix,
)
from .continuation import (
    BifurcationTable,
    ContinuationOptions,
    PeriodicOrbit,
    bifurcation_scan,
    builtin_seeds,
    continuation_jacobian,
    find_periodic,
    poincare_residual,
    stability_of,
)

__version__ = "0.1.0"
