"""Deterministic closed-loop docking world.

Truth runs at the perception rate with exact unicycle arcs; controllers are
sampled at the control rate and their chassis command is held in between.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import MarkerBehindCamera, TrackingLost, TrialAborted
from .geometry import (
    CameraIntrinsics,
    RigidTransform,
    default_camera_mount,
    denormalize,
    relative_yaw,
    wrap_angle,
)
from .observation import FeatureObservation, MarkerModel
from .perception import GrayImage, PerceptionPipeline
from .servo_model import ControlInput, HybridState
from .controller import ChassisCommand, camera_to_chassis

SPOT_SIGMA_PX = 1.5


@dataclass(frozen=True)
class RobotPose:
    """Robot position on the {T} ground plane and heading.

    ``theta_R = 0`` faces the marker (forward = -z_T); positive values turn
    left (towards -x_T) as seen from above.
    """

    x_T: float
    z_T: float
    theta_R: float

    def __post_init__(self):
        if not all(np.isfinite([self.x_T, self.z_T, self.theta_R])):
            raise ValueError("pose must be finite")


def step_unicycle(pose: RobotPose, cmd: ChassisCommand, dt: float) -> RobotPose:
    """Exact arc integration of the unicycle over ``dt``."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    v, w = cmd.v_R, cmd.omega_R
    th = pose.theta_R
    # ground-plane axes: X_w = -z_T, Y_w = -x_T
    if abs(w) < 1e-9:
        dX = v * dt * np.cos(th)
        dY = v * dt * np.sin(th)
    else:
        dX = (v / w) * (np.sin(th + w * dt) - np.sin(th))
        dY = -(v / w) * (np.cos(th + w * dt) - np.cos(th))
    return RobotPose(pose.x_T - dY, pose.z_T - dX, th + w * dt)


def robot_in_target(pose: RobotPose, height: float = 0.0) -> RigidTransform:
    c, s = np.cos(pose.theta_R), np.sin(pose.theta_R)
    forward = np.array([-s, 0.0, -c])
    left = np.array([-c, 0.0, s])
    up = np.array([0.0, 1.0, 0.0])
    return RigidTransform(np.column_stack([forward, left, up]), np.array([pose.x_T, height, pose.z_T]))


def camera_in_target(pose: RobotPose, mount: RigidTransform, height: float = 0.0) -> RigidTransform:
    return robot_in_target(pose, height).compose(mount)


def marker_points_camera(pose, model: MarkerModel, mount: RigidTransform, height: float = 0.0) -> np.ndarray:
    return camera_in_target(pose, mount, height).inverse().apply(model.points_target)


def true_state(pose: RobotPose, model: MarkerModel, mount: RigidTransform, height: float = 0.0) -> HybridState:
    """Hybrid state seen from ``pose``: normalized points, mean depth, relative yaw."""
    X_TC = camera_in_target(pose, mount, height)
    Pc = X_TC.inverse().apply(model.points_target)
    if np.any(Pc[:, 2] <= 1e-9):
        raise MarkerBehindCamera("marker behind the camera")
    return HybridState(Pc[:, :2] / Pc[:, 2:3], Pc[:, 2].mean(), relative_yaw(X_TC.rotation))


def desired_state(pose: RobotPose, model: MarkerModel, mount: RigidTransform, height: float = 0.0) -> HybridState:
    """Desired hybrid state from the docking pose; orientation forced to 0."""
    s = true_state(pose, model, mount, height)
    return HybridState(s.features, s.Z, 0.0)


def in_fov(normalized, K: CameraIntrinsics) -> np.ndarray:
    p = denormalize(normalized, K)
    return (p[..., 0] >= 0) & (p[..., 0] <= K.width) & (p[..., 1] >= 0) & (p[..., 1] <= K.height)


def render_markers(
    pose: RobotPose,
    model: MarkerModel,
    K: CameraIntrinsics,
    mode: str = "ideal",
    mount: RigidTransform | None = None,
    height: float = 0.0,
    sigma_px: float = SPOT_SIGMA_PX,
    visibility=1.0,
    timestamp: float = 0.0,
):
    """Project the markers.

    ``ideal`` returns ``(FeatureObservation, out_of_fov_ids)`` holding the
    exact centroids of the visible points; ``raster`` returns a
    :class:`GrayImage` with one Gaussian spot per visible marker.
    """
    mount = default_camera_mount() if mount is None else mount
    Pc = marker_points_camera(pose, model, mount, height)
    if np.any(Pc[:, 2] <= 1e-9):
        raise MarkerBehindCamera("marker behind the camera")
    s = Pc[:, :2] / Pc[:, 2:3]
    visible = in_fov(s, K)
    ids = [i for i in range(model.n) if visible[i]]
    if mode == "ideal":
        obs = FeatureObservation(tuple(ids), denormalize(s[ids], K), s[ids], timestamp)
        return obs, [i for i in range(model.n) if not visible[i]]
    if mode != "raster":
        raise ValueError(f"unknown render mode {mode!r}")
    vis = np.broadcast_to(np.asarray(visibility, dtype=float), (model.n,))
    canvas = np.zeros((K.height, K.width))
    for i in ids:
        u0, v0 = denormalize(s[i], K)
        splat_spot(canvas, u0, v0, sigma_px, 255.0 * vis[i])
    return to_gray(canvas)


def splat_spot(canvas: np.ndarray, u0: float, v0: float, sigma_px: float = SPOT_SIGMA_PX, peak: float = 255.0):
    """Add a Gaussian spot centred at pixel ``(u0, v0)`` to a float canvas, in place.

    Pixel ``(u, v)`` is sampled at its integer coordinates.
    """
    h, w = canvas.shape
    r = int(np.ceil(5 * sigma_px))
    ul, uh = max(int(np.floor(u0)) - r, 0), min(int(np.floor(u0)) + r + 2, w)
    vl, vh = max(int(np.floor(v0)) - r, 0), min(int(np.floor(v0)) + r + 2, h)
    if ul >= uh or vl >= vh:
        return canvas
    uu = np.arange(ul, uh) - u0
    vv = np.arange(vl, vh) - v0
    canvas[vl:vh, ul:uh] += peak * np.exp(-(vv[:, None] ** 2 + uu[None, :] ** 2) / (2 * sigma_px**2))
    return canvas


def to_gray(canvas: np.ndarray) -> GrayImage:
    return GrayImage(np.clip(np.rint(canvas), 0, 255).astype(np.uint8))


@dataclass(frozen=True)
class NoiseModel:
    sigma_feature: float = 0.0
    sigma_Z: float = 0.0
    sigma_theta: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if min(self.sigma_feature, self.sigma_Z, self.sigma_theta) < 0:
            raise ValueError("noise standard deviations must be non-negative")

    @classmethod
    def paper(cls, seed: int = 0) -> "NoiseModel":
        return cls(0.001, 0.2, np.pi / 60.0, seed)

    @property
    def silent(self) -> bool:
        return self.sigma_feature == 0 and self.sigma_Z == 0 and self.sigma_theta == 0


def measure(true: HybridState, noise: NoiseModel, tick: int) -> HybridState:
    """Add Gaussian noise drawn from a stream keyed by ``(seed, tick)``."""
    if noise.silent:
        return true
    rng = np.random.default_rng([int(noise.seed) & 0xFFFFFFFFFFFFFFFF, int(tick)])
    z = rng.standard_normal(2 * true.n + 2)
    f = true.features + noise.sigma_feature * z[:-2].reshape(-1, 2)
    Z = max(true.Z + noise.sigma_Z * z[-2], 0.01)
    th = wrap_angle(true.theta + noise.sigma_theta * z[-1])
    if abs(th) >= np.pi:
        th = np.nextafter(np.pi, 0.0) * np.sign(th)
    return HybridState(f, Z, th)


@dataclass(frozen=True)
class DisturbanceSegment:
    """Piecewise-constant disturbance active on ``[t_start, t_end)``.

    ``v_z``/``omega_y`` bias the executed camera twist; ``state_rate`` is a
    per-channel drift integrated into the measurement offset.
    """

    t_start: float = 0.0
    t_end: float = float("inf")
    v_z: float = 0.0
    omega_y: float = 0.0
    state_rate: tuple = ()


@dataclass
class StepRecord:
    t: float
    pose: RobotPose
    true: HybridState
    measured: HybridState | None
    estimate: np.ndarray | None
    u: ControlInput
    cmd: ChassisCommand
    true_pixels: np.ndarray
    solver_cost: float = float("nan")
    solver_iters: int = 0
    solver_status: str = ""
    fov_violation: bool = False


@dataclass
class TrialLog:
    records: list = field(default_factory=list)
    trial_id: str = ""
    dropouts: int = 0
    wall_time: float = 0.0
    converged: bool = False

    def __len__(self):
        return len(self.records)

    @property
    def final(self) -> StepRecord:
        return self.records[-1]

    @property
    def fov_violations(self) -> int:
        return sum(r.fov_violation for r in self.records)


def disturbance_at(segments, t: float):
    bias = np.zeros(2)
    rate = None
    for seg in segments:
        if seg.t_start <= t < seg.t_end:
            bias += (seg.v_z, seg.omega_y)
            if seg.state_rate:
                r = np.asarray(seg.state_rate, dtype=float)
                rate = r if rate is None else rate + r
    return bias, rate


def run_trial(cfg, trial_id: str = "", progress=None) -> TrialLog:
    """Closed-loop docking trial described by a :class:`vsdock.config.ScenarioConfig`."""
    from .closed_loop import make_controller

    started = time.perf_counter()
    K = cfg.camera()
    model = cfg.marker()
    mount = cfg.mount()
    height = cfg.camera_height
    desired_pose = cfg.desired_pose()
    desired = desired_state(desired_pose, model, mount, height)
    noise = cfg.noise()
    ticks_per_control = cfg.ticks_per_control
    dt = 1.0 / cfg.perception_rate
    n_ticks = int(round(cfg.duration * cfg.perception_rate))
    segments = cfg.disturbances()

    controller = make_controller(cfg, desired, K, mount)
    pipeline = None
    if cfg.measurement == "raster":
        pipeline = PerceptionPipeline(
            model, K, cfg.threshold, cfg.min_blob_area, cfg.gate_px, cfg.perception_rate
        )
    s_lo, s_hi = controller.fov_box

    log = TrialLog(trial_id=trial_id)
    pose = cfg.initial_pose()
    u = ControlInput()
    cmd = ChassisCommand(0.0, 0.0)
    drift_offset = np.zeros(2 * model.n + 2)
    stats = (float("nan"), 0, "")
    consecutive_drop = 0
    hold = 0
    for tick in range(n_ticks + 1):
        t = tick * dt
        try:
            truth = true_state(pose, model, mount, height)
        except MarkerBehindCamera as exc:
            log.wall_time = time.perf_counter() - started
            raise TrialAborted(f"{exc} at t={t:.3f}s", trial_id) from exc
        bias, rate = disturbance_at(segments, t)
        if rate is not None:
            drift_offset = drift_offset + rate * dt

        measured = None
        if pipeline is None:
            obs, missing = render_markers(pose, model, K, "ideal", mount, height)
            if not missing:
                measured = measure(truth, noise, tick)
        else:
            img = render_markers(pose, model, K, "raster", mount, height)
            try:
                obs, Z_m, th_m = pipeline.process(img, u, t)
                if len(obs) == model.n:
                    meas = HybridState(obs.normalized, Z_m, th_m)
                    measured = measure(meas, noise, tick)
            except TrackingLost:
                measured = None
        if measured is not None and rate is not None:
            measured = HybridState.from_vector(measured.to_vector() + drift_offset)

        if measured is None:
            log.dropouts += 1
            consecutive_drop += 1
            if consecutive_drop > cfg.dropout_budget:
                log.wall_time = time.perf_counter() - started
                raise TrialAborted(f"tracking lost for {consecutive_drop} frames at t={t:.3f}s", trial_id)
        else:
            consecutive_drop = 0
        controller.observe(measured, u, t)

        if hold == 0:
            u, stats = controller.command(t)
            cmd = camera_to_chassis(u, mount)
            hold = ticks_per_control
        hold -= 1

        feats = truth.features.ravel()
        fov_bad = bool(np.any(feats < np.tile(s_lo, model.n) - 1e-9) or np.any(feats > np.tile(s_hi, model.n) + 1e-9))
        log.records.append(
            StepRecord(
                t=t,
                pose=pose,
                true=truth,
                measured=measured,
                estimate=controller.estimate(),
                u=u,
                cmd=cmd,
                true_pixels=denormalize(truth.features, K),
                solver_cost=stats[0],
                solver_iters=stats[1],
                solver_status=stats[2],
                fov_violation=fov_bad,
            )
        )
        if progress is not None:
            progress(tick, n_ticks)
        if tick == n_ticks:
            break
        if cfg.stop_on_success and controller.settled(t):
            log.converged = True
            break
        executed = ControlInput(u.v_z + bias[0], u.omega_y + bias[1])
        pose = step_unicycle(pose, camera_to_chassis(executed, mount), dt)
    log.wall_time = time.perf_counter() - started
    return log
