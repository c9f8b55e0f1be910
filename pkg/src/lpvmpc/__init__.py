"""LPV-MPC lateral control for high-speed racing.

Error-state single-track model scheduled on speed, curvature and banking,
a condensed Gauss-Newton QP per control step, pure-pursuit fallback, a
nonlinear plant for closed-loop runs and Pacejka tire identification.
"""

from .lpv_model import DiscreteLpv, SchedulingParams, build_horizon_models, discretize
from .mpc import LpvMpc, MpcConfig, MpcWeights
from .qp import DenseQp, QpSolver, QpSolverConfig
from .sysid import PacejkaRegressor, identify
from .tires import (
    FINAL_RUN_FRONT,
    FINAL_RUN_REAR,
    PRACTICE_FRONT,
    PRACTICE_REAR,
    PacejkaAxleParams,
    VehicleParams,
    c_linear,
    pacejka_force,
)
from .track import Raceline, load_raceline, make_oval, project

__all__ = [
    "FINAL_RUN_FRONT", "FINAL_RUN_REAR", "PRACTICE_FRONT", "PRACTICE_REAR",
    "DenseQp", "DiscreteLpv", "LpvMpc", "MpcConfig", "MpcWeights", "PacejkaAxleParams",
    "PacejkaRegressor", "QpSolver", "QpSolverConfig", "Raceline", "SchedulingParams",
    "VehicleParams", "build_horizon_models", "c_linear", "discretize", "identify",
    "load_raceline", "make_oval", "pacejka_force", "project",
]
__version__ = "0.1.0"
