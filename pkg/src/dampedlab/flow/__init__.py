"""Classical flow, escape functions and discrete commutator checks."""

from ._backend import BACKEND
from .core import (
    PhasePoint,
    Trajectory,
    ControlReport,
    classify_batch,
    classify_trajectory,
    circular_orbit,
    escape_radius_estimate,
    flow_map,
    flow_paths,
    geometric_control_check,
    hamiltonian,
    integrate_flow,
    sample_energy_shell,
    trace_both,
    write_trajectory_csv,
)
from .escape import (
    Bump,
    BracketReport,
    EscapeFunction,
    build_escape_function,
    f0_bracket,
    poisson_bracket_check,
    write_bracket_csv,
)
from .mourre import (
    CommutatorReport,
    commutator_defect,
    mourre_commutator_check,
    symbol_commutator,
    write_mourre_csv,
)
