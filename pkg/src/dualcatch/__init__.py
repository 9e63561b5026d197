"""NMPC planning for dual-arm closed-chain ball interception.

Primitive-terminal (PT) and adaptive-terminal (AT) formulations over a
double-integrator joint model, with ballistic prediction, target selection,
a bound-constrained augmented-Lagrangian solver and a simulation harness.
"""

from .geometry import Pose, RigidTransform, UnitQuaternion
from .kinematics import SystemModel, SystemState, default_model, load_model
from .mpc import ConfigError, PlannerConfig, load_planner_config, mpc_step, run_episode
from .ocp import OcpEvaluator, OcpProblem, PlannerWeights, adaptive_weight, profile
from .sim import Scenario, Tracking, load_scenario, monte_carlo
from .solver import NlpSpec, SolverOptions, solve

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "NlpSpec",
    "OcpEvaluator",
    "OcpProblem",
    "PlannerConfig",
    "PlannerWeights",
    "Pose",
    "RigidTransform",
    "Scenario",
    "SolverOptions",
    "SystemModel",
    "SystemState",
    "Tracking",
    "UnitQuaternion",
    "adaptive_weight",
    "default_model",
    "load_model",
    "load_planner_config",
    "load_scenario",
    "monte_carlo",
    "mpc_step",
    "profile",
    "run_episode",
    "solve",
]
