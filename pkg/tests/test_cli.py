import pytest

from vsdock.cli import EXIT_ABORTED, EXIT_OK, EXIT_USAGE, build_parser, main, render_check
from vsdock.config import ScenarioConfig


def write_config(path, **fields):
    ScenarioConfig(**fields).dump(path)
    return str(path)


def test_trial_and_compare(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.yaml", initial_z_T=5.0, initial_x_T=0.0, duration=2.0)
    out = tmp_path / "run"
    assert main(["trial", "--config", cfg, "--controller", "ibvs", "--seed", "4", "--out", str(out)]) == EXIT_OK
    assert (out / "ibvs_trial.csv").exists()
    assert main(["compare", "--in", str(out)]) == EXIT_OK
    assert "ibvs" in capsys.readouterr().out


def test_sweep_start_only(tmp_path):
    cfg = write_config(tmp_path / "c.yaml", initial_z_T=5.0, initial_x_T=0.0, duration=1.0)
    out = tmp_path / "sweep"
    code = main(["sweep", "--config", cfg, "--controllers", "mpc,ours", "--threads", "1", "--out", str(out)])
    assert code == EXIT_OK
    assert sorted(p.name for p in out.glob("*_start.csv")) == ["mpc_start.csv", "ours_start.csv"]


def test_trial_abort_exit_code(tmp_path):
    cfg = write_config(tmp_path / "c.yaml", initial_z_T=3.0, initial_x_T=0.0, initial_heading_deg=80.0,
                       dropout_budget=5)
    assert main(["trial", "--config", cfg, "--out", str(tmp_path / "x")]) == EXIT_ABORTED


def test_bad_controllers(tmp_path):
    assert main(["sweep", "--controllers", "pid", "--out", str(tmp_path)]) == EXIT_USAGE
    bad = tmp_path / "bad.yaml"
    bad.write_text("no_such_key: 1\n")
    assert main(["trial", "--config", str(bad), "--out", str(tmp_path)]) == EXIT_USAGE


def test_usage_errors():
    with pytest.raises(SystemExit) as info:
        build_parser().parse_args(["trial"])
    assert info.value.code == 2


def test_render_check(tmp_path, capsys):
    assert main(["render-check", "--out", str(tmp_path)]) == EXIT_OK
    assert (tmp_path / "render_check.pgm").exists()
    assert "PASS" in capsys.readouterr().out
    res = render_check(ScenarioConfig(initial_z_T=6.0, initial_x_T=0.0))
    assert res["centroid_err_px"] <= 0.1


def test_render_check_markers_outside(tmp_path):
    cfg = write_config(tmp_path / "c.yaml", initial_z_T=3.0, initial_x_T=0.0, initial_heading_deg=80.0)
    assert main(["render-check", "--config", cfg]) == 3
