"""Docking metrics, CSV logs, parameter sweeps and the comparison table.

Every metric is a pure function of a :class:`LogTable`, the column view of a
trial that is also what the CSV files store, so metrics recomputed from a
written log match the in-memory ones.
"""
from __future__ import annotations

import csv
import os
from dataclasses import asdict, dataclass
from multiprocessing import get_context
from pathlib import Path

import numpy as np

from .config import CONTROLLERS, ScenarioConfig, paper_grid
from .errors import EmptyLog, InsufficientData, MissingFeatures, TrialAborted
from .geometry import denormalize, wrap_angle
from .simulator import RobotPose, TrialLog, desired_state, run_trial

BASE_COLUMNS = (
    "t", "x_T", "z_T", "theta_R",
    "Z_true", "theta_true", "Z_meas", "theta_meas", "Z_est", "theta_est",
    "v_z", "omega_y", "v_R", "omega_R",
)
TAIL_COLUMNS = ("solver_cost", "solver_iters")


def csv_columns(n: int) -> list:
    return [*BASE_COLUMNS, *(f"u{i}" for i in range(1, n + 1)), *(f"v{i}" for i in range(1, n + 1)), *TAIL_COLUMNS]


@dataclass
class LogTable:
    """Column arrays of one trial; pixel columns hold the true feature pixels."""

    columns: dict
    n: int

    def __len__(self):
        return len(self.columns["t"])

    def __getitem__(self, name) -> np.ndarray:
        return self.columns[name]

    @property
    def pixels(self) -> np.ndarray:
        """``(rows, n, 2)`` true feature pixels."""
        u = np.column_stack([self.columns[f"u{i}"] for i in range(1, self.n + 1)])
        v = np.column_stack([self.columns[f"v{i}"] for i in range(1, self.n + 1)])
        return np.stack([u, v], axis=-1)

    @classmethod
    def from_log(cls, log: TrialLog) -> "LogTable":
        if not log.records:
            raise EmptyLog("trial log has no records")
        n = log.records[0].true.n
        rows = {name: [] for name in csv_columns(n)}
        nan = float("nan")
        for r in log.records:
            meas = r.measured
            est = r.estimate
            values = {
                "t": r.t, "x_T": r.pose.x_T, "z_T": r.pose.z_T, "theta_R": r.pose.theta_R,
                "Z_true": r.true.Z, "theta_true": r.true.theta,
                "Z_meas": nan if meas is None else meas.Z,
                "theta_meas": nan if meas is None else meas.theta,
                "Z_est": nan if est is None else est[-2],
                "theta_est": nan if est is None else est[-1],
                "v_z": r.u.v_z, "omega_y": r.u.omega_y, "v_R": r.cmd.v_R, "omega_R": r.cmd.omega_R,
                "solver_cost": r.solver_cost, "solver_iters": r.solver_iters,
            }
            for i, (pu, pv) in enumerate(r.true_pixels, start=1):
                values[f"u{i}"] = pu
                values[f"v{i}"] = pv
            for k, v in values.items():
                rows[k].append(float(v))
        return cls({k: np.asarray(v, dtype=float) for k, v in rows.items()}, n)

    def to_csv(self, path) -> None:
        names = csv_columns(self.n)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(names)
            for i in range(len(self)):
                row = []
                for k in names:
                    x = self.columns[k][i]
                    row.append(str(int(x)) if k == "solver_iters" else repr(float(x)))
                w.writerow(row)

    @classmethod
    def from_csv(cls, path) -> "LogTable":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None:
                raise EmptyLog(f"{path} is empty")
            data = [[float(x) for x in row] for row in reader]
        n = sum(1 for h in header if h.startswith("u") and h[1:].isdigit())
        if header != csv_columns(n):
            raise ValueError(f"{path}: unexpected column layout")
        if not data:
            raise EmptyLog(f"{path} has no records")
        arr = np.asarray(data, dtype=float)
        return cls({name: arr[:, j].copy() for j, name in enumerate(header)}, n)


def _table(log) -> LogTable:
    if isinstance(log, LogTable):
        if len(log) == 0:
            raise EmptyLog("trial log has no records")
        return log
    return LogTable.from_log(log)


@dataclass(frozen=True)
class TrialMetrics:
    e_n: float
    e_t: float
    e_Z: float
    e_theta: float
    e_p: float
    M_sm_v: float
    M_sm_w: float
    converged: bool
    T_task: float


def compute_position_error(log, desired_pose: RobotPose) -> tuple:
    """Normal and tangential terminal docking error in metres."""
    tab = _table(log)
    return float(abs(tab["z_T"][-1] - desired_pose.z_T)), float(abs(tab["x_T"][-1] - desired_pose.x_T))


def compute_state_error(log, desired, K) -> tuple:
    """Terminal depth error (m), orientation error (rad) and RMS pixel error."""
    tab = _table(log)
    end = tab.pixels[-1]
    p_d = denormalize(desired.features, K)
    if end.shape != p_d.shape or not np.all(np.isfinite(end)):
        raise MissingFeatures("terminal record does not hold every feature")
    e_Z = float(abs(tab["Z_true"][-1] - desired.Z))
    e_theta = float(abs(wrap_angle(tab["theta_true"][-1] - desired.theta)))
    e_p = float(np.sqrt(np.sum((end - p_d) ** 2) / desired.n))
    return e_Z, e_theta, e_p


def compute_smoothness(log) -> tuple:
    """RMS rate of the executed chassis command over the task duration."""
    tab = _table(log)
    if len(tab) < 2:
        raise InsufficientData("smoothness needs at least two records")
    T_task = tab["t"][-1] - tab["t"][0]
    if T_task <= 0:
        raise InsufficientData("task duration must be positive")
    dv = np.diff(tab["v_R"])
    dw = np.diff(tab["omega_R"])
    return float(np.sqrt(np.sum(dv * dv) / T_task)), float(np.sqrt(np.sum(dw * dw) / T_task))


def trial_metrics(log, cfg: ScenarioConfig) -> TrialMetrics:
    tab = _table(log)
    desired_pose = cfg.desired_pose()
    desired = desired_state(desired_pose, cfg.marker(), cfg.mount(), cfg.camera_height)
    e_n, e_t = compute_position_error(tab, desired_pose)
    e_Z, e_theta, e_p = compute_state_error(tab, desired, cfg.camera())
    M_v, M_w = compute_smoothness(tab)
    T_task = float(tab["t"][-1] - tab["t"][0])
    # a trial that ends before the cap was stopped by the success test
    converged = bool(tab["t"][-1] < cfg.duration - 0.5 / cfg.perception_rate)
    return TrialMetrics(e_n, e_t, e_Z, e_theta, e_p, M_v, M_w, converged, T_task)


# ---- summaries -------------------------------------------------------------

SUMMARY_FIELDS = (
    "controller", "trials", "e_n_cm", "e_t_cm", "e_Z_cm", "e_theta_deg", "e_p_px", "M_sm_v", "M_sm_w", "converged",
)


def summarize(results) -> list:
    """Mean metrics per controller (absolute errors averaged over all trials).

    ``results`` is an iterable of ``(controller, TrialMetrics)``; rows follow
    the canonical controller order.
    """
    groups = {}
    for controller, m in results:
        groups.setdefault(controller, []).append(m)
    order = [c for c in CONTROLLERS if c in groups] + sorted(c for c in groups if c not in CONTROLLERS)
    rows = []
    for c in order:
        ms = groups[c]
        mean = lambda key: float(np.mean([getattr(m, key) for m in ms]))
        rows.append({
            "controller": c,
            "trials": len(ms),
            "e_n_cm": 100 * mean("e_n"),
            "e_t_cm": 100 * mean("e_t"),
            "e_Z_cm": 100 * mean("e_Z"),
            "e_theta_deg": float(np.degrees(mean("e_theta"))),
            "e_p_px": mean("e_p"),
            "M_sm_v": mean("M_sm_v"),
            "M_sm_w": mean("M_sm_w"),
            "converged": sum(m.converged for m in ms),
        })
    return rows


def format_summary(rows) -> str:
    head = f"{'method':<8}{'n':>4}{'e_n[cm]':>10}{'e_t[cm]':>10}{'e_Z[cm]':>10}{'e_th[deg]':>11}{'e_p[px]':>10}{'v[m/s]':>9}{'w[rad/s]':>10}"
    lines = [head, "-" * len(head)]
    for r in rows:
        lines.append(
            f"{r['controller']:<8}{r['trials']:>4}{r['e_n_cm']:>10.3f}{r['e_t_cm']:>10.3f}{r['e_Z_cm']:>10.3f}"
            f"{r['e_theta_deg']:>11.3f}{r['e_p_px']:>10.3f}{r['M_sm_v']:>9.3f}{r['M_sm_w']:>10.3f}"
        )
    return "\n".join(lines)


def write_summary(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SUMMARY_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


# ---- trials and sweeps -----------------------------------------------------

MANIFEST_FIELDS = ("trial_id", "controller", "initial_z_T", "initial_x_T", "initial_heading_deg", "seed", "log")


@dataclass
class TrialOutcome:
    trial_id: str
    controller: str
    metrics: TrialMetrics | None
    error: str = ""
    wall_time: float = 0.0


def _run_one(job) -> TrialOutcome:
    trial_id, cfg, out_dir = job
    try:
        log = run_trial(cfg, trial_id)
    except TrialAborted as exc:
        return TrialOutcome(trial_id, cfg.controller, None, str(exc))
    tab = LogTable.from_log(log)
    if out_dir is not None:
        tab.to_csv(Path(out_dir) / f"{trial_id}.csv")
    return TrialOutcome(trial_id, cfg.controller, trial_metrics(tab, cfg), wall_time=log.wall_time)


def worker_count(n_jobs: int, threads: int | None = None) -> int:
    """Parallel workers: explicit value, else ``VSDOCK_THREADS``, else CPU count."""
    if threads is None:
        env = os.environ.get("VSDOCK_THREADS", "").strip()
        threads = int(env) if env else (os.cpu_count() or 1)
    return max(1, min(int(threads), n_jobs))


@dataclass
class SweepResult:
    outcomes: list
    summary: list

    @property
    def aborted(self) -> list:
        return [o for o in self.outcomes if o.metrics is None]


def run_trials(trials, out_dir=None, threads: int | None = None) -> list:
    """Run ``(trial_id, config)`` pairs, in parallel when allowed; order is preserved."""
    jobs = [(tid, cfg, None if out_dir is None else str(out_dir)) for tid, cfg in trials]
    workers = worker_count(len(jobs), threads)
    if workers == 1:
        return [_run_one(j) for j in jobs]
    with get_context("spawn").Pool(workers) as pool:
        return pool.map(_run_one, jobs, chunksize=1)


def write_manifest(trials, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_FIELDS)
        for tid, cfg in trials:
            w.writerow([tid, cfg.controller, repr(cfg.initial_z_T), repr(cfg.initial_x_T),
                        repr(cfg.initial_heading_deg), cfg.seed, f"{tid}.csv"])


def run_sweep(base: ScenarioConfig, controllers=CONTROLLERS, trials=None, out_dir=None,
              threads: int | None = None, strict: bool = True) -> SweepResult:
    """Run a grid of trials and aggregate Table-I style means.

    ``trials`` defaults to the 25-start reference grid for each controller. With
    ``out_dir`` the per-trial CSVs, a manifest, the summary and the base
    configuration are written there. When ``strict`` is set an aborted trial
    raises :class:`TrialAborted` after all other trials have finished.
    """
    if trials is None:
        trials = paper_grid(base, controllers)
    trials = list(trials)
    if not trials:
        raise ValueError("empty trial grid")
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        base.dump(out_dir / "config.yaml")
        write_manifest(trials, out_dir / "trials.csv")
    outcomes = run_trials(trials, out_dir, threads)
    summary = summarize((o.controller, o.metrics) for o in outcomes if o.metrics is not None)
    if out_dir is not None:
        write_summary(summary, out_dir / "summary.csv")
    result = SweepResult(outcomes, summary)
    if strict and result.aborted:
        first = result.aborted[0]
        raise TrialAborted(
            f"{len(result.aborted)} trial(s) aborted; first: {first.trial_id}: {first.error}", first.trial_id
        )
    return result


def compare(in_dir) -> list:
    """Recompute the summary from the logs and configuration written by a sweep."""
    in_dir = Path(in_dir)
    base = ScenarioConfig.load(in_dir / "config.yaml")
    results = []
    with open(in_dir / "trials.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            path = in_dir / row["log"]
            if not path.exists():
                continue  # aborted trials leave no log
            cfg = base.with_(controller=row["controller"])
            results.append((row["controller"], trial_metrics(LogTable.from_csv(path), cfg)))
    return summarize(results)


def metrics_dict(m: TrialMetrics) -> dict:
    return asdict(m)
