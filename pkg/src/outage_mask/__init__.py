"""Masking single-line outages from a PMU residual detector with false load data."""

from .attack import (
    AttackProblem, AttackVector, ResidualModel, assemble_problem, build_residual_model,
    optimal_fk0, solve_attack, terminal_net_injections, verify_attack,
)
from .case import (
    GridCase, Line, PmuPlacement, bridge_lines, build_incidence, bundled_case_path,
    default_candidates, load_case, make_case, parse_case, place_pmus,
)
from .dc import DcModel, Jacobian, build_dc_model, build_jacobian, line_flows, solve_angles
from .detection import (
    DetectionReport, PmuObservation, candidate_residual, identify_outage, simulate_observation,
)
from .errors import *  # noqa: F401,F403
from .estimation import MeasurementSet, bad_data_test, estimate, residual
from .outage import gamma, make_scenario, post_outage_angles_equiv, post_outage_angles_exact, thevenin
from .qp import Polytope, maximize_convex_quadratic

__version__ = "0.1.0"
