"""Scenario configuration: a flat key/value YAML file.

Every key has a default, so an empty file is a valid scenario (the (8, 2)
start of the reference grid with the proposed controller). Angles in the file
are in degrees; everything inside the library is in radians.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .controller import NmpcConfig
from .geometry import CameraIntrinsics, default_camera_mount
from .observation import MarkerModel
from .observer import EsoGains
from .simulator import DisturbanceSegment, NoiseModel, RobotPose

CONTROLLERS = ("ibvs", "mpc", "ours")

PAPER_POSITIONS = ((8.0, 2.0), (7.0, 1.0), (6.0, 0.0), (7.0, -1.0), (8.0, -2.0))  # (z_T, x_T)
PAPER_HEADINGS_DEG = (-35.0, -17.5, 0.0, 17.5, 35.0)


@dataclass
class ScenarioConfig:
    controller: str = "ours"
    # poses in {T}: metres / degrees
    initial_z_T: float = 8.0
    initial_x_T: float = 2.0
    initial_heading_deg: float = 0.0
    desired_z_T: float = 1.5
    desired_x_T: float = 0.0
    # camera and marker
    image_width: int = 1280
    image_height: int = 1024
    hfov_deg: float = 120.0
    camera_offset: list = field(default_factory=lambda: [0.0, 0.0, 0.0])
    camera_height: float = 0.0
    marker_side: float = 0.3
    # sensing
    measurement: str = "ideal"
    noise_feature: float = 0.001
    noise_depth: float = 0.2
    noise_theta_deg: float = 3.0
    seed: int = 0
    threshold: int = 32
    min_blob_area: int = 3
    gate_px: float = 5.0
    dropout_budget: int = 30
    # timing
    duration: float = 30.0
    perception_rate: float = 60.0
    control_rate: float = 20.0
    # disturbance segments: list of {t_start, t_end, v_z, omega_y, state_rate}
    disturbance: list = field(default_factory=lambda: [{"v_z": 0.02, "omega_y": 0.01}])
    # NMPC
    horizon: int = 20
    model_step: float = 0.2  # prediction step in s; 0 means one control period
    feature_weight: float = 50.0
    depth_weight: float = 10.0
    theta_weight: float = 200.0
    control_weight: list = field(default_factory=lambda: [1.0, 1.0])
    v_max: float = 0.8
    omega_max: float = 0.8
    dv_max: float = 0.2
    domega_max: float = 0.2
    z_safe: float = 0.5
    fov_margin_px: float = 0.0
    sqp_iters: int = 50
    sqp_tol: float = 1e-7
    # observer
    eso_bandwidth: list = field(default_factory=lambda: [2.0, 0.5, 0.5])  # features, depth, theta
    eso_alpha1: float = 0.75
    eso_alpha2: float = 0.5
    eso_delta1: float = 0.01
    eso_delta2: float = 0.01
    eso_drift_compensation: bool = True
    # baselines
    ibvs_gain: float = 0.5
    # termination
    stop_on_success: bool = True
    success_hold: float = 0.5
    success_depth: float = 0.02
    success_lateral: float = 0.015
    success_theta_deg: float = 1.0

    def __post_init__(self):
        if self.controller not in CONTROLLERS:
            raise ValueError(f"controller must be one of {CONTROLLERS}")
        if self.measurement not in ("ideal", "raster"):
            raise ValueError("measurement must be 'ideal' or 'raster'")
        ratio = self.perception_rate / self.control_rate
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise ValueError("perception rate must be an integer multiple of the control rate")
        if self.duration <= 0:
            raise ValueError("duration must be positive")

    # ---- derived objects -------------------------------------------------
    @property
    def ticks_per_control(self) -> int:
        return int(round(self.perception_rate / self.control_rate))

    def camera(self) -> CameraIntrinsics:
        return CameraIntrinsics.from_fov(self.image_width, self.image_height, self.hfov_deg)

    def marker(self) -> MarkerModel:
        return MarkerModel.square(self.marker_side)

    def mount(self):
        return default_camera_mount(self.camera_offset)

    def initial_pose(self) -> RobotPose:
        return RobotPose(self.initial_x_T, self.initial_z_T, np.radians(self.initial_heading_deg))

    def desired_pose(self) -> RobotPose:
        return RobotPose(self.desired_x_T, self.desired_z_T, 0.0)

    def noise(self) -> NoiseModel:
        return NoiseModel(self.noise_feature, self.noise_depth, np.radians(self.noise_theta_deg), self.seed)

    def disturbances(self) -> list:
        segs = []
        for d in self.disturbance or []:
            d = dict(d)
            if "state_rate" in d:
                d["state_rate"] = tuple(d["state_rate"])
            segs.append(DisturbanceSegment(**d))
        return segs

    def nmpc(self) -> NmpcConfig:
        K = self.camera()
        s_min, s_max = K.normalized_bounds(self.fov_margin_px)
        return NmpcConfig(
            N_p=self.horizon,
            T_s=self.model_step if self.model_step > 0 else 1.0 / self.control_rate,
            R=np.diag(self.control_weight),
            s_min=s_min,
            s_max=s_max,
            u_min=np.array([-self.v_max, -self.omega_max]),
            u_max=np.array([self.v_max, self.omega_max]),
            du_min=np.array([-self.dv_max, -self.domega_max]),
            du_max=np.array([self.dv_max, self.domega_max]),
            Z_safe=self.z_safe,
            sqp_iters=self.sqp_iters,
            tol=self.sqp_tol,
            feature_weight=self.feature_weight,
            depth_weight=self.depth_weight,
            theta_weight=self.theta_weight,
        )

    def eso_gains(self, size: int) -> EsoGains:
        bw = np.asarray(self.eso_bandwidth, dtype=float).ravel()
        if bw.size == 3:
            # shorthand: (features, depth, theta)
            n = (size - 2) // 2
            bw = np.concatenate([np.full(2 * n, bw[0]), bw[1:]])
        return EsoGains.from_bandwidth(
            size, bw if bw.size > 1 else float(bw[0]),
            alpha1=self.eso_alpha1, alpha2=self.eso_alpha2,
            delta1=self.eso_delta1, delta2=self.eso_delta2,
        )

    # ---- io --------------------------------------------------------------
    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict | None) -> "ScenarioConfig":
        data = dict(data or {})
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        with open(path) as fh:
            return cls.from_dict(yaml.safe_load(fh))

    def dump(self, path) -> None:
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=False))

    def with_(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)


def paper_grid(base: ScenarioConfig, controllers=CONTROLLERS) -> list:
    """All (controller, position, heading) trials of the 25-start simulation study.

    Returns ``(trial_id, config)`` pairs; each trial gets seed ``base.seed + index``
    where the index runs over positions x headings (shared across controllers).
    """
    trials = []
    for controller in controllers:
        index = 0
        for g, (z, x) in enumerate(PAPER_POSITIONS):
            for h, heading in enumerate(PAPER_HEADINGS_DEG):
                cfg = base.with_(
                    controller=controller,
                    initial_z_T=z,
                    initial_x_T=x,
                    initial_heading_deg=heading,
                    seed=base.seed + index,
                )
                trials.append((f"{controller}_g{g + 1}_h{h + 1}", cfg))
                index += 1
    return trials
