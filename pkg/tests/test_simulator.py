import numpy as np
import pytest
from scipy.integrate import solve_ivp

from vsdock.config import ScenarioConfig, paper_grid
from vsdock.controller import ChassisCommand
from vsdock.errors import MarkerBehindCamera, TrialAborted
from vsdock.geometry import CameraIntrinsics, default_camera_mount
from vsdock.observation import MarkerModel
from vsdock.servo_model import HybridState
from vsdock.simulator import (
    NoiseModel,
    RobotPose,
    disturbance_at,
    DisturbanceSegment,
    measure,
    render_markers,
    run_trial,
    step_unicycle,
    true_state,
)

MODEL = MarkerModel.square(0.3)
NOISE_FREE = dict(noise_feature=0.0, noise_depth=0.0, noise_theta_deg=0.0)


# ---- kinematics ------------------------------------------------------------

def test_unicycle_straight():
    p = step_unicycle(RobotPose(0.0, 5.0, 0.0), ChassisCommand(1.0, 0.0), 1.0)
    assert (p.x_T, p.z_T, p.theta_R) == pytest.approx((0.0, 4.0, 0.0))


def test_unicycle_quarter_turn():
    # left turn of radius 1 from facing -z_T ends facing -x_T
    p = step_unicycle(RobotPose(0.0, 0.0, 0.0), ChassisCommand(1.0, 1.0), np.pi / 2)
    assert (p.x_T, p.z_T, p.theta_R) == pytest.approx((-1.0, -1.0, np.pi / 2))


def test_unicycle_matches_ode(rng):
    for _ in range(50):
        v, w, th, dt = rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-3, 3), rng.uniform(0.01, 2)
        p = step_unicycle(RobotPose(0.3, 4.0, th), ChassisCommand(v, w), dt)
        # robot frame X = -z_T, Y = -x_T
        sol = solve_ivp(lambda t, y: [v * np.cos(y[2]), v * np.sin(y[2]), w], (0, dt), [-4.0, -0.3, th],
                        rtol=1e-12, atol=1e-12)
        X, Y, T = sol.y[:, -1]
        assert (p.x_T, p.z_T, p.theta_R) == pytest.approx((-Y, -X, T), abs=1e-8)


def test_unicycle_circle_closes():
    start = RobotPose(0.5, 3.0, 0.2)
    p = start
    for _ in range(100):
        p = step_unicycle(p, ChassisCommand(0.4, 0.5), 2 * np.pi / 0.5 / 100)
    assert (p.x_T, p.z_T) == pytest.approx((start.x_T, start.z_T), abs=1e-9)
    assert p.theta_R == pytest.approx(start.theta_R + 2 * np.pi, abs=1e-9)


def test_unicycle_zero_command():
    p = RobotPose(0.5, 3.0, 0.2)
    assert step_unicycle(p, ChassisCommand(0.0, 0.0), 0.7) == p
    with pytest.raises(ValueError):
        step_unicycle(p, ChassisCommand(0.0, 0.0), 0.0)


# ---- rendering ----------------------------------------------------------------

def test_true_state_symmetric_on_axis():
    s = true_state(RobotPose(0.0, 3.0, 0.0), MODEL, default_camera_mount())
    assert s.Z == pytest.approx(3.0)
    assert s.theta == pytest.approx(0.0)
    np.testing.assert_allclose(s.features.sum(axis=0), 0.0, atol=1e-15)
    np.testing.assert_allclose(s.features[1], [0.05, -0.05])


def test_heading_sign_convention():
    # turning left moves the marker right in the image
    s = true_state(RobotPose(0.0, 3.0, 0.1), MODEL, default_camera_mount())
    assert s.features[:, 0].mean() > 0
    assert s.theta == pytest.approx(-0.1)


def test_raster_symmetric():
    K = CameraIntrinsics.from_fov()
    img = render_markers(RobotPose(0.0, 3.0, 0.0), MODEL, K, "raster").data.astype(int)
    np.testing.assert_array_equal(img[:, 1:], img[:, 1:][:, ::-1])
    np.testing.assert_array_equal(img[1:, :], img[1:, :][::-1, :])


def test_render_out_of_fov():
    K = CameraIntrinsics.from_fov()
    obs, missing = render_markers(RobotPose(0.0, 3.0, np.radians(65)), MODEL, K)
    assert missing == [0, 1, 2, 3]
    assert len(obs) == 0
    img = render_markers(RobotPose(0.0, 3.0, np.radians(65)), MODEL, K, "raster")
    assert img.data.max() == 0


def test_render_behind_camera():
    K = CameraIntrinsics.from_fov()
    with pytest.raises(MarkerBehindCamera):
        render_markers(RobotPose(0.0, 3.0, np.pi), MODEL, K)
    with pytest.raises(ValueError):
        render_markers(RobotPose(0.0, 3.0, 0.0), MODEL, K, "sketch")


# ---- measurement noise --------------------------------------------------------

def test_measure_silent_is_identity():
    s = HybridState([[0.1, 0.2]], 2.0, 0.1)
    assert measure(s, NoiseModel(), 5) is s


def test_measure_statistics():
    s = HybridState([[0.0, 0.0]], 5.0, 0.0)
    noise = NoiseModel.paper(3)
    draws = np.array([measure(s, noise, k).to_vector() for k in range(100_000)])
    std = draws.std(axis=0)
    for got, want in zip(std, [0.001, 0.001, 0.2, np.radians(3.0)]):
        assert abs(got / want - 1) <= 0.02
    np.testing.assert_allclose(draws.mean(axis=0), s.to_vector(), atol=5e-3)


def test_measure_deterministic():
    s = HybridState([[0.0, 0.0]], 5.0, 0.0)
    a = measure(s, NoiseModel.paper(1), 42).to_vector()
    np.testing.assert_array_equal(a, measure(s, NoiseModel.paper(1), 42).to_vector())
    assert not np.array_equal(a, measure(s, NoiseModel.paper(2), 42).to_vector())
    with pytest.raises(ValueError):
        NoiseModel(-1.0)


def test_disturbance_segments():
    segs = [DisturbanceSegment(0.0, 1.0, v_z=0.1), DisturbanceSegment(0.5, 2.0, omega_y=0.2, state_rate=(1.0, 2.0))]
    bias, rate = disturbance_at(segs, 0.7)
    np.testing.assert_allclose(bias, [0.1, 0.2])
    np.testing.assert_allclose(rate, [1.0, 2.0])
    bias, rate = disturbance_at(segs, 2.0)
    np.testing.assert_allclose(bias, 0.0)
    assert rate is None


# ---- closed loop -----------------------------------------------------------------

def test_noise_free_trial_docks():
    cfg = ScenarioConfig(initial_z_T=6.0, initial_x_T=0.0, **NOISE_FREE)
    log = run_trial(cfg, "straight")
    final = log.final.pose
    assert log.converged
    assert abs(final.z_T - cfg.desired_z_T) <= 0.02
    assert abs(final.x_T) <= 0.02
    assert abs(np.degrees(final.theta_R)) <= 0.5
    assert log.fov_violations == 0


def test_offset_start_turns_then_realigns():
    cfg = ScenarioConfig(**NOISE_FREE)  # (8, 2) start
    log = run_trial(cfg, "offset")
    theta = np.array([r.pose.theta_R for r in log.records])
    # the robot must turn to remove the lateral offset, then straighten out
    assert np.degrees(np.abs(theta).max()) >= 5.0
    assert abs(np.degrees(theta[-1])) <= 1.0
    assert log.converged


def test_trial_reproducible():
    cfg = ScenarioConfig(initial_z_T=6.0, initial_x_T=0.5, duration=5.0, seed=11)
    a, b = run_trial(cfg, "a"), run_trial(cfg, "b")
    assert len(a) == len(b)
    for ra, rb in zip(a.records, b.records):
        assert ra.cmd == rb.cmd
        assert ra.pose == rb.pose


def test_dropout_abort():
    cfg = ScenarioConfig(initial_z_T=3.0, initial_x_T=0.0, initial_heading_deg=80.0, dropout_budget=5)
    with pytest.raises(TrialAborted) as info:
        run_trial(cfg, "lost")
    assert info.value.trial_id == "lost"


# ---- configuration -------------------------------------------------------------

def test_config_yaml_round_trip(tmp_path):
    cfg = ScenarioConfig(controller="mpc", initial_heading_deg=17.5, eso_bandwidth=[1.0, 0.5, 0.5])
    cfg.dump(tmp_path / "c.yaml")
    assert ScenarioConfig.load(tmp_path / "c.yaml") == cfg
    (tmp_path / "empty.yaml").write_text("")
    assert ScenarioConfig.load(tmp_path / "empty.yaml") == ScenarioConfig()


def test_config_validation():
    with pytest.raises(ValueError):
        ScenarioConfig(controller="pid")
    with pytest.raises(ValueError):
        ScenarioConfig(perception_rate=50.0, control_rate=20.0)
    with pytest.raises(ValueError):
        ScenarioConfig.from_dict({"horizonn": 3})


def test_paper_grid_layout():
    trials = paper_grid(ScenarioConfig(seed=100))
    assert len(trials) == 75
    ids = [t for t, _ in trials]
    assert len(set(ids)) == 75
    ours = [c for t, c in trials if c.controller == "ours"]
    assert sorted({(c.initial_z_T, c.initial_x_T) for c in ours}) == sorted(
        {(8.0, 2.0), (7.0, 1.0), (6.0, 0.0), (7.0, -1.0), (8.0, -2.0)})
    assert sorted({c.initial_heading_deg for c in ours}) == [-35.0, -17.5, 0.0, 17.5, 35.0]
    assert [c.seed for c in ours] == list(range(100, 125))
