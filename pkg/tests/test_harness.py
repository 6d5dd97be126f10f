import numpy as np
import pytest

from vsdock.config import ScenarioConfig
from vsdock.errors import EmptyLog, InsufficientData, MissingFeatures, TrialAborted
from vsdock.harness import (
    LogTable,
    TrialMetrics,
    compare,
    compute_position_error,
    compute_smoothness,
    compute_state_error,
    csv_columns,
    run_sweep,
    summarize,
    trial_metrics,
    worker_count,
)
from vsdock.geometry import CameraIntrinsics, denormalize
from vsdock.servo_model import HybridState
from vsdock.simulator import RobotPose, TrialLog, run_trial

SQUARE = [[-0.1, -0.1], [0.1, -0.1], [0.1, 0.1], [-0.1, 0.1]]


def table(rows=2, **cols):
    """Hand-made log table with 4 features; unspecified columns are zero."""
    data = {name: np.zeros(rows) for name in csv_columns(4)}
    for k, v in cols.items():
        data[k] = np.asarray(v, dtype=float)
    return LogTable(data, 4)


def metrics(e_t=0.0, **kw):
    base = dict(e_n=0.0, e_t=e_t, e_Z=0.0, e_theta=0.0, e_p=0.0, M_sm_v=0.0, M_sm_w=0.0, converged=True, T_task=1.0)
    base.update(kw)
    return TrialMetrics(**base)


# ---- metrics ----------------------------------------------------------------

def test_csv_column_order():
    cols = csv_columns(2)
    assert cols[:4] == ["t", "x_T", "z_T", "theta_R"]
    assert cols[-6:] == ["u1", "u2", "v1", "v2", "solver_cost", "solver_iters"]


def test_position_error_example():
    tab = table(z_T=[3.0, 1.52], x_T=[0.5, 0.03])
    e_n, e_t = compute_position_error(tab, RobotPose(0.0, 1.5, 0.0))
    assert (e_n, e_t) == pytest.approx((0.02, 0.03))


def test_state_error_pixel_example():
    K = CameraIntrinsics.from_fov()
    desired = HybridState(SQUARE, 1.5, 0.0)
    p_d = denormalize(desired.features, K) + [3.0, 4.0]
    cols = {f"u{i + 1}": [0.0, p_d[i, 0]] for i in range(4)}
    cols.update({f"v{i + 1}": [0.0, p_d[i, 1]] for i in range(4)})
    tab = table(Z_true=[3.0, 1.53], theta_true=[0.0, -0.01], **cols)
    e_Z, e_theta, e_p = compute_state_error(tab, desired, K)
    assert e_Z == pytest.approx(0.03)
    assert e_theta == pytest.approx(0.01)
    assert e_p == pytest.approx(5.0)


def test_state_error_missing_features():
    K = CameraIntrinsics.from_fov()
    tab = table(u1=[0.0, np.nan])
    with pytest.raises(MissingFeatures):
        compute_state_error(tab, HybridState(SQUARE, 1.5, 0.0), K)


def test_smoothness_example():
    tab = table(t=[0.0, 0.05], v_R=[0.0, 0.1])
    M_v, M_w = compute_smoothness(tab)
    assert M_v == pytest.approx(np.sqrt(0.1 ** 2 / 0.05))
    assert M_v == pytest.approx(0.447, abs=1e-3)
    assert M_w == 0.0


def test_smoothness_needs_data():
    with pytest.raises(InsufficientData):
        compute_smoothness(table(rows=1))
    with pytest.raises(InsufficientData):
        compute_smoothness(table(t=[1.0, 1.0]))


def test_empty_log():
    with pytest.raises(EmptyLog):
        LogTable.from_log(TrialLog())
    with pytest.raises(EmptyLog):
        compute_smoothness(table(rows=0))


def test_csv_round_trip(tmp_path):
    cfg = ScenarioConfig(initial_z_T=6.0, initial_x_T=0.0, duration=2.0)
    tab = LogTable.from_log(run_trial(cfg, "rt"))
    tab.to_csv(tmp_path / "rt.csv")
    back = LogTable.from_csv(tmp_path / "rt.csv")
    assert list(back.columns) == csv_columns(4)
    for k in tab.columns:
        np.testing.assert_allclose(back[k], tab[k], rtol=1e-9, atol=1e-12, equal_nan=True)
    a = trial_metrics(tab, cfg)
    b = trial_metrics(back, cfg)
    for x, y in zip(a.__dict__.values(), b.__dict__.values()):
        assert x == pytest.approx(y, rel=1e-9)


def test_metrics_are_plain_floats():
    cfg = ScenarioConfig(initial_z_T=6.0, initial_x_T=0.0, duration=1.0)
    m = trial_metrics(run_trial(cfg, "f"), cfg)
    assert all(type(v) in (float, bool) for v in m.__dict__.values())


# ---- summaries ---------------------------------------------------------------

def test_summarize_single_identity():
    m = metrics(e_t=0.015, e_n=0.01, e_theta=np.radians(0.5), e_p=2.0, M_sm_v=0.1, M_sm_w=0.2)
    (row,) = summarize([("ours", m)])
    assert row["e_t_cm"] == pytest.approx(1.5)
    assert row["e_n_cm"] == pytest.approx(1.0)
    assert row["e_theta_deg"] == pytest.approx(0.5)
    assert (row["e_p_px"], row["M_sm_v"], row["M_sm_w"]) == pytest.approx((2.0, 0.1, 0.2))


def test_summarize_mean_and_order():
    rows = summarize([("ours", metrics(0.01)), ("ibvs", metrics(0.2)), ("ours", metrics(0.03))])
    assert [r["controller"] for r in rows] == ["ibvs", "ours"]
    assert rows[1]["e_t_cm"] == pytest.approx(2.0)
    assert rows[1]["trials"] == 2


# ---- sweeps ------------------------------------------------------------------

def small_grid():
    base = ScenarioConfig(duration=3.0)
    return base, [
        (f"{c}_a", base.with_(controller=c, initial_z_T=5.0, initial_x_T=0.3, seed=3)) for c in ("ibvs", "ours")
    ]


def test_sweep_writes_logs_and_compare_matches(tmp_path):
    base, trials = small_grid()
    res = run_sweep(base, trials=trials, out_dir=tmp_path, threads=1)
    assert not res.aborted
    for name in ("config.yaml", "trials.csv", "summary.csv", "ibvs_a.csv", "ours_a.csv"):
        assert (tmp_path / name).exists()
    again = compare(tmp_path)
    for r, s in zip(res.summary, again):
        for k in r:
            assert r[k] == pytest.approx(s[k], rel=1e-9)


def test_sweep_strict_abort_names_trial():
    base = ScenarioConfig(duration=3.0)
    trials = [
        ("fine", base.with_(initial_z_T=5.0, initial_x_T=0.0)),
        ("lost", base.with_(initial_z_T=3.0, initial_x_T=0.0, initial_heading_deg=80.0, dropout_budget=5)),
    ]
    with pytest.raises(TrialAborted) as info:
        run_sweep(base, trials=trials, threads=1)
    assert info.value.trial_id == "lost"
    res = run_sweep(base, trials=trials, threads=1, strict=False)
    assert [o.trial_id for o in res.aborted] == ["lost"]
    assert res.summary[0]["trials"] == 1


def test_worker_count(monkeypatch):
    monkeypatch.setenv("VSDOCK_THREADS", "3")
    assert worker_count(10) == 3
    assert worker_count(2) == 2
    assert worker_count(10, threads=1) == 1
    monkeypatch.delenv("VSDOCK_THREADS")
    assert worker_count(1) == 1
    with pytest.raises(ValueError):
        run_sweep(ScenarioConfig(), trials=[])
