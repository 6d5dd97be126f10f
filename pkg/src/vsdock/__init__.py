"""Monocular hybrid visual-servoing docking for a nonholonomic robot.

Marker perception, the hybrid feature/depth/orientation prediction model, an
extended state observer, a constrained NMPC with IBVS and position-MPC
baselines, a deterministic closed-loop simulator and the experiment harness.
"""
from .config import CONTROLLERS, ScenarioConfig, paper_grid
from .controller import (
    ChassisCommand,
    ControlSolution,
    NmpcConfig,
    baseline_ibvs,
    baseline_mpc_position,
    camera_to_chassis,
    solve_nmpc,
)
from .errors import TrialAborted, VsDockError
from .geometry import CameraIntrinsics, RigidTransform, RotationVector, Twist
from .harness import TrialMetrics, compare, run_sweep, trial_metrics
from .observation import FeatureObservation, MarkerModel
from .observer import EsoGains, EsoState, ExtendedStateObserver, eso_step, fal
from .perception import GrayImage, PerceptionPipeline, estimate_planar_pose
from .servo_model import ControlInput, HybridState, build_extended_interaction, predict_state
from .simulator import NoiseModel, RobotPose, TrialLog, run_trial

__version__ = "0.1.0"

__all__ = [
    "CONTROLLERS", "ScenarioConfig", "paper_grid",
    "ChassisCommand", "ControlSolution", "NmpcConfig", "baseline_ibvs", "baseline_mpc_position",
    "camera_to_chassis", "solve_nmpc",
    "TrialAborted", "VsDockError",
    "CameraIntrinsics", "RigidTransform", "RotationVector", "Twist",
    "TrialMetrics", "compare", "run_sweep", "trial_metrics",
    "FeatureObservation", "MarkerModel",
    "EsoGains", "EsoState", "ExtendedStateObserver", "eso_step", "fal",
    "GrayImage", "PerceptionPipeline", "estimate_planar_pose",
    "ControlInput", "HybridState", "build_extended_interaction", "predict_state",
    "NoiseModel", "RobotPose", "TrialLog", "run_trial",
]
