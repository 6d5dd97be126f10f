"""Sampled-data wrappers that put each control law in the simulation loop.

All wrappers share one protocol: ``observe`` at every perception tick,
``command`` at every control tick, ``estimate`` for logging.
"""
from __future__ import annotations

from dataclasses import replace

import numpy as np

from .controller import (
    NmpcConfig,
    baseline_ibvs,
    shift_warm_start,
    solve_nmpc,
)
from .errors import RankDeficient
from .geometry import wrap_angle
from .observer import ExtendedStateObserver
from .servo_model import ControlInput, HybridState, interaction_point


def lateral_proxy(x) -> float:
    """Camera offset along the target x axis implied by a hybrid state vector.

    The marker centre sits at depth Z and normalized abscissa mean(x_i);
    rotating that camera-frame point back by the orientation state gives the
    camera position in the target frame.
    """
    Z, theta = x[-2], x[-1]
    X_c = Z * np.mean(x[:-2:2])
    return float(-X_c * np.cos(theta) - Z * np.sin(theta))


class _Base:
    def __init__(self, cfg, desired: HybridState, K, mount):
        self.scenario = cfg
        self.desired = desired
        self.K = K
        self.mount = mount
        self.nmpc_cfg: NmpcConfig = cfg.nmpc()
        self.fov_box = (self.nmpc_cfg.s_min, self.nmpc_cfg.s_max)
        self.last_measurement: HybridState | None = None
        self.u_prev = ControlInput()
        self._settled_since = None

    def observe(self, measured, u_applied, t):
        if measured is not None:
            self.last_measurement = measured

    def estimate(self):
        if self.last_measurement is None:
            return None
        return self.last_measurement.to_vector()

    def settled(self, t) -> bool:
        """Success proxy on the controller's own state estimate, held for ``success_hold`` s.

        Depth and orientation errors come straight from the estimate; the
        lateral error is recovered from the marker centre seen at that depth.
        """
        x = self.estimate()
        if x is None:
            return False
        sc = self.scenario
        xd = self.desired.to_vector()
        ok = (
            abs(x[-2] - xd[-2]) <= sc.success_depth
            and abs(lateral_proxy(x) - lateral_proxy(xd)) <= sc.success_lateral
            and abs(wrap_angle(x[-1] - xd[-1])) <= np.radians(sc.success_theta_deg)
        )
        if not ok:
            self._settled_since = None
            return False
        if self._settled_since is None:
            self._settled_since = t
        return t - self._settled_since >= sc.success_hold - 1e-9


class PredictiveController(_Base):
    """ESO-filtered hybrid state fed to the constrained NMPC."""

    def __init__(self, cfg, desired, K, mount):
        super().__init__(cfg, desired, K, mount)
        size = 2 * desired.n + 2
        self.observer = ExtendedStateObserver(cfg.eso_gains(size), 1.0 / cfg.perception_rate)
        self.use_drift = cfg.eso_drift_compensation
        self.warm = None

    def observe(self, measured, u_applied, t):
        super().observe(measured, u_applied, t)
        if self.observer.state is None and measured is None:
            return
        meas = None if measured is None else measured.to_vector()
        if meas is not None and self.observer.state is not None:
            # keep the orientation innovation on the short arc
            meas = meas.copy()
            xi = self.observer.state.xi1
            meas[-1] = xi[-1] + wrap_angle(meas[-1] - xi[-1])
        self.observer.update(meas, u_applied.as_array())

    def estimate(self):
        if self.observer.state is None:
            return None
        return self.observer.state.xi1.copy()

    def initial_state(self) -> HybridState:
        x = self.observer.state.xi1.copy()
        x[-2] = max(x[-2], self.nmpc_cfg.Z_safe + 0.05)
        x[-1] = wrap_angle(x[-1])
        return HybridState.from_vector(x)

    def command(self, t):
        if self.observer.state is None:
            return ControlInput(), (float("nan"), 0, "no_measurement")
        drift = self.observer.state.xi2 if self.use_drift else None
        warm = None if self.warm is None else shift_warm_start(self.warm)
        sol = solve_nmpc(self.initial_state(), self.desired, self.u_prev, self.nmpc_cfg, warm, drift=drift)
        self.warm = sol.u_sequence
        self.u_prev = sol.first
        return self.u_prev, (sol.cost, sol.iterations, sol.status)


class PositionMpcController(_Base):
    """Baseline NMPC on raw measurements without the orientation state."""

    def __init__(self, cfg, desired, K, mount):
        super().__init__(cfg, desired, K, mount)
        P = self.nmpc_cfg.terminal_matrix(desired.n).copy()
        P[-1, :] = 0.0
        P[:, -1] = 0.0
        self.nmpc_cfg = replace(self.nmpc_cfg, P=P)
        self.warm = None

    def command(self, t):
        if self.last_measurement is None:
            return ControlInput(), (float("nan"), 0, "no_measurement")
        m = self.last_measurement
        x0 = HybridState(m.features, max(m.Z, self.nmpc_cfg.Z_safe + 0.05), m.theta)
        warm = None if self.warm is None else shift_warm_start(self.warm)
        sol = solve_nmpc(x0, self.desired, self.u_prev, self.nmpc_cfg, warm)
        self.warm = sol.u_sequence
        self.u_prev = sol.first
        return self.u_prev, (sol.cost, sol.iterations, sol.status)


class IbvsController(_Base):
    """Proportional image-based law on the raw feature measurements."""

    def command(self, t):
        if self.last_measurement is None:
            return ControlInput(), (float("nan"), 0, "no_measurement")
        m = self.last_measurement
        e = (m.features - self.desired.features).ravel()
        L = np.vstack([interaction_point(s, m.Z) for s in m.features])
        cfg = self.nmpc_cfg
        try:
            u = baseline_ibvs(e, L, self.scenario.ibvs_gain, cfg.u_min, cfg.u_max)
        except RankDeficient:
            u = ControlInput()
        self.u_prev = u
        return u, (float("nan"), 0, "")


def make_controller(cfg, desired, K, mount):
    kinds = {"ours": PredictiveController, "mpc": PositionMpcController, "ibvs": IbvsController}
    return kinds[cfg.controller](cfg, desired, K, mount)
