"""Task-space MPC with an adaptive base-motion estimator for a 7-DoF arm on a floating base."""
from ._backend import BACKEND
from .base_motion import BaseState, MotionProfile, sample
from .dynamics import (ArmModel, LinkInertia, PdGains, SimState, SimulationDiverged,
                       default_arm, forward_dynamics, inverse_dynamics, step)
from .estimator import EstimatorGains, EstimatorState
from .harness import RunDiverged, RunMetrics, compare, run_scenario
from .kalman import FilterModel, TargetState
from .kinematics import (JointLimits, KinematicChain, Pose, TaskTwist, default_chain,
                         forward_kinematics, geometric_jacobian, pose_deviation)
from .mission import MissionConfig, MissionState, Phase, ScriptedEvents, mission_step
from .mpc import MpcTracker, ReferenceWindow, TrackerConfig, control_step, traditional_step
from .qp import QpProblem, QpSolution, QpSolver, QpStatus
from .scenario import Scenario, load_scenario

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "BaseState", "MotionProfile", "sample", "ArmModel", "LinkInertia", "PdGains",
    "SimState", "SimulationDiverged", "default_arm", "forward_dynamics", "inverse_dynamics",
    "step", "EstimatorGains", "EstimatorState", "RunDiverged", "RunMetrics", "compare",
    "run_scenario", "FilterModel", "TargetState", "JointLimits", "KinematicChain", "Pose",
    "TaskTwist", "default_chain", "forward_kinematics", "geometric_jacobian", "pose_deviation",
    "MissionConfig", "MissionState", "Phase", "ScriptedEvents", "mission_step", "MpcTracker",
    "ReferenceWindow", "TrackerConfig", "control_step", "traditional_step", "QpProblem",
    "QpSolution", "QpSolver", "QpStatus", "Scenario", "load_scenario",
]
