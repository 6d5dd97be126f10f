"""Constrained NMPC for docking, command mapping and baseline controllers.

The NMPC is a direct single-shooting problem over the input sequence. Each
Gauss-Newton iteration linearizes the shooting residuals with forward
sensitivities and solves a small dense QP in which the input box and the
input-rate chain (anchored at the previously executed input) are exact
linear constraints. Field-of-view and minimum-depth limits on the predicted
states enter as squared hinge penalties on a slightly tightened set; their
weight is escalated until the tightened set is met or the weight cap is hit.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
import quadprog

from . import _kernels as _k
from .errors import Infeasible, NonPlanarMount, RankDeficient
from .geometry import RigidTransform, Twist, twist_adjoint
from .servo_model import ControlInput, HybridState


@dataclass(frozen=True)
class ChassisCommand:
    v_R: float
    omega_R: float

    def __post_init__(self):
        if not (np.isfinite(self.v_R) and np.isfinite(self.omega_R)):
            raise ValueError("chassis command must be finite")


def terminal_weight(n: int, feature: float = 50.0, depth: float = 10.0, theta: float = 100.0) -> np.ndarray:
    return np.diag(np.concatenate([np.full(2 * n, feature), [depth, theta]]))


@dataclass(frozen=True)
class NmpcConfig:
    N_p: int = 20
    T_s: float = 0.05
    P: np.ndarray | None = None
    R: np.ndarray = field(default_factory=lambda: np.eye(2))
    s_min: np.ndarray = field(default_factory=lambda: np.array([-1.7, -1.35]))
    s_max: np.ndarray = field(default_factory=lambda: np.array([1.7, 1.35]))
    u_min: np.ndarray = field(default_factory=lambda: np.array([-0.8, -0.8]))
    u_max: np.ndarray = field(default_factory=lambda: np.array([0.8, 0.8]))
    du_min: np.ndarray = field(default_factory=lambda: np.array([-0.2, -0.2]))
    du_max: np.ndarray = field(default_factory=lambda: np.array([0.2, 0.2]))
    Z_safe: float = 0.5
    z_margin: float = 1e-3
    fov_margin: float = 1e-4
    sqp_iters: int = 50
    tol: float = 1e-7
    penalty_init: float = 1e3
    penalty_growth: float = 10.0
    penalty_max: float = 1e9
    feature_weight: float = 50.0
    depth_weight: float = 10.0
    theta_weight: float = 100.0
    multistart: bool = True

    def __post_init__(self):
        for name in ("R", "s_min", "s_max", "u_min", "u_max", "du_min", "du_max"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if self.P is not None:
            object.__setattr__(self, "P", np.asarray(self.P, dtype=float))
        if self.N_p < 1:
            raise ValueError("N_p must be >= 1")
        if self.T_s <= 0 or self.Z_safe <= 0:
            raise ValueError("T_s and Z_safe must be positive")
        for lo, hi in (("s_min", "s_max"), ("u_min", "u_max"), ("du_min", "du_max")):
            if np.any(getattr(self, lo) > getattr(self, hi)):
                raise ValueError(f"{lo} must not exceed {hi}")
        if np.any(np.linalg.eigvalsh(self.R) <= 0):
            raise ValueError("R must be positive definite")
        if self.P is not None and np.any(np.linalg.eigvalsh(self.P) < -1e-12):
            raise ValueError("P must be positive semidefinite")

    def terminal_matrix(self, n: int) -> np.ndarray:
        if self.P is not None:
            if self.P.shape != (2 * n + 2, 2 * n + 2):
                raise ValueError(f"P must be {(2 * n + 2,) * 2} for {n} features")
            return self.P
        return terminal_weight(n, self.feature_weight, self.depth_weight, self.theta_weight)


@dataclass
class ControlSolution:
    u_sequence: np.ndarray
    predicted_states: np.ndarray
    cost: float
    kkt_residual: float
    iterations: int
    status: str = "optimal"
    max_violation: float = 0.0

    @property
    def first(self) -> ControlInput:
        return ControlInput.from_array(self.u_sequence[0])

    def predicted(self) -> list:
        return [HybridState.from_vector(x) for x in self.predicted_states]


def _psd_sqrt(M: np.ndarray) -> np.ndarray:
    """Matrix L with L.T @ L == M for symmetric PSD M."""
    if np.count_nonzero(M - np.diag(np.diag(M))) == 0:
        return np.diag(np.sqrt(np.clip(np.diag(M), 0.0, None)))
    w, V = np.linalg.eigh(M)
    return np.diag(np.sqrt(np.clip(w, 0.0, None))) @ V.T


@lru_cache(maxsize=32)
def _rate_box_matrix(N: int) -> np.ndarray:
    """Constraint matrix C (columns = constraints) for quadprog: C.T d >= b.

    Order per channel c: box lower, box upper, rate lower, rate upper.
    """
    nv = 2 * N
    cols = []
    for c in range(2):
        for i in range(N):
            e = np.zeros(nv)
            e[2 * i + c] = 1.0
            cols.append(e)
        for i in range(N):
            e = np.zeros(nv)
            e[2 * i + c] = -1.0
            cols.append(e)
        for i in range(N):
            e = np.zeros(nv)
            e[2 * i + c] = 1.0
            if i > 0:
                e[2 * (i - 1) + c] = -1.0
            cols.append(e)
        for i in range(N):
            e = np.zeros(nv)
            e[2 * i + c] = -1.0
            if i > 0:
                e[2 * (i - 1) + c] = 1.0
            cols.append(e)
    return np.array(cols).T


def _rate_box_rhs(U: np.ndarray, u_prev: np.ndarray, cfg: NmpcConfig) -> np.ndarray:
    N = len(U)
    diffs = np.diff(np.vstack([u_prev, U]), axis=0)
    parts = []
    for c in range(2):
        parts.append(cfg.u_min[c] - U[:, c])
        parts.append(U[:, c] - cfg.u_max[c])
        parts.append(cfg.du_min[c] - diffs[:, c])
        parts.append(diffs[:, c] - cfg.du_max[c])
    return np.concatenate(parts)


def project_inputs(U, u_prev, cfg: NmpcConfig) -> np.ndarray:
    """Forward clamp onto the input box and the rate chain anchored at ``u_prev``."""
    U = np.array(U, dtype=float).reshape(-1, 2)
    prev = np.asarray(u_prev, dtype=float)
    out = np.empty_like(U)
    for i in range(len(U)):
        lo = np.maximum(cfg.u_min, prev + cfg.du_min)
        hi = np.minimum(cfg.u_max, prev + cfg.du_max)
        out[i] = np.minimum(np.maximum(U[i], lo), hi)
        prev = out[i]
    return out


def cold_start_seeds(u_prev, cfg: NmpcConfig) -> list:
    """Input sequences that hold ``u_prev`` or ramp each channel at its rate limit.

    Nine seeds: per channel {hold, ramp up, ramp down}, hold/hold first. They
    are projected onto the input box inside the solver.
    """
    u_prev = np.asarray(u_prev, dtype=float)
    k = np.arange(1, cfg.N_p + 1)[:, None]
    seeds = []
    for a in (0.0, cfg.du_max[0], cfg.du_min[0]):
        for b in (0.0, cfg.du_max[1], cfg.du_min[1]):
            seeds.append(u_prev + k * np.array([a, b]))
    return seeds


def shift_warm_start(U) -> np.ndarray:
    U = np.asarray(U, dtype=float)
    return np.vstack([U[1:], U[-1:]])


class _Problem:
    """Residuals, rollout and sensitivities of one NMPC instance."""

    def __init__(self, x0, xd, u_prev, cfg: NmpcConfig, drift=None):
        self.x0 = np.asarray(x0, dtype=float)
        self.xd = np.asarray(xd, dtype=float)
        self.u_prev = np.asarray(u_prev, dtype=float)
        self.cfg = cfg
        self.m = self.x0.size
        self.n = (self.m - 2) // 2
        self.N = cfg.N_p
        self.drift = np.zeros(self.m) if drift is None else np.asarray(drift, dtype=float)
        self.Lp = np.ascontiguousarray(_psd_sqrt(cfg.terminal_matrix(self.n)))
        self.RtR = np.ascontiguousarray(cfg.R, dtype=float)
        self.s_lo = np.tile(cfg.s_min + cfg.fov_margin, self.n)
        self.s_hi = np.tile(cfg.s_max - cfg.fov_margin, self.n)
        self.z_lo = cfg.Z_safe + cfg.z_margin

    def rollout(self, U, sensitivities=False):
        # the model is evaluated with depth clamped at 1e-6; infeasible depths are penalized
        U = np.ascontiguousarray(U, dtype=float)
        X = _k.rollout(self.x0, U, self.cfg.T_s, self.drift)
        S = _k.sensitivities(X, U, self.cfg.T_s) if sensitivities else None
        return X, S

    def terminal_error(self, xN):
        return _k.terminal_error(np.array(xN, dtype=float), self.xd)

    def violations(self, X):
        """Hinge residuals of the tightened state constraints at steps 1..N."""
        feats = X[1:, :-2]
        lo = np.maximum(0.0, self.s_lo - feats)
        hi = np.maximum(0.0, feats - self.s_hi)
        z = np.maximum(0.0, self.z_lo - X[1:, -2])
        return lo, hi, z

    def objective(self, U, X):
        return float(_k.objective(X, np.ascontiguousarray(U, dtype=float), self.xd, self.Lp, self.RtR))

    def penalty(self, X):
        return float(_k.penalty(X, self.s_lo, self.s_hi, self.z_lo))

    def merit(self, U, mu):
        X, _ = self.rollout(U)
        return self.objective(U, X) + mu * self.penalty(X), X

    def gauss_newton(self, U, mu):
        """Return (H, g, X) of the GN model of the merit around U."""
        U = np.ascontiguousarray(U, dtype=float)
        X, S = self.rollout(U, sensitivities=True)
        H, g = _k.gauss_newton(X, S, U, self.xd, self.Lp, self.RtR, self.s_lo, self.s_hi, self.z_lo, mu)
        return H, g, X


def solve_nmpc(
    initial: HybridState,
    desired: HybridState,
    previous_u: ControlInput,
    cfg: NmpcConfig,
    warm_start=None,
    drift=None,
    strict: bool = False,
) -> ControlSolution:
    """Solve the docking NMPC from ``initial`` towards ``desired``.

    ``drift`` adds a constant rate to the prediction model (observer
    disturbance compensation). Without a warm start the problem is solved
    from every :func:`cold_start_seeds` sequence and the best result is kept.
    ``strict`` raises :class:`Infeasible` instead of returning a flagged
    solution.
    """
    if initial.n != desired.n:
        raise ValueError("initial and desired states must have the same number of features")
    x0 = initial.to_vector() if isinstance(initial, HybridState) else np.asarray(initial, float)
    xd = desired.to_vector() if isinstance(desired, HybridState) else np.asarray(desired, float)
    u_prev = previous_u.as_array() if isinstance(previous_u, ControlInput) else np.asarray(previous_u, float)
    if warm_start is not None or not cfg.multistart:
        sol = _solve(x0, xd, u_prev, cfg, warm_start, drift)
    else:
        # the problem is non-convex; a cold solve keeps the best of a few deterministic seeds
        sols = [_solve(x0, xd, u_prev, cfg, seed, drift) for seed in cold_start_seeds(u_prev, cfg)]
        sol = min(sols, key=lambda s: (s.status == "infeasible", s.cost))
    if strict and sol.status == "infeasible":
        raise Infeasible(f"state constraints violated by {sol.max_violation:.3g}")
    return sol


def _solve(x0, xd, u_prev, cfg: NmpcConfig, warm_start, drift) -> ControlSolution:
    prob = _Problem(x0, xd, u_prev, cfg, drift)
    N = cfg.N_p
    if warm_start is None:
        U = np.tile(u_prev, (N, 1))
    else:
        U = np.asarray(warm_start, dtype=float).reshape(N, 2)
    U = project_inputs(U, u_prev, cfg)
    C = _rate_box_matrix(N)

    mu = cfg.penalty_init
    f, X = prob.merit(U, mu)
    if not np.isfinite(f):
        # a warm start can diverge under the Euler model; fall back to holding the last input
        U = project_inputs(np.tile(u_prev, (N, 1)), u_prev, cfg)
        f, X = prob.merit(U, mu)
        if not np.isfinite(f):
            U = project_inputs(np.zeros((N, 2)), u_prev, cfg)
            f, X = prob.merit(U, mu)
    best = (f, U, X, mu)
    iterations = 0
    kkt = np.inf
    converged = False
    while iterations < cfg.sqp_iters:
        iterations += 1
        H, g, X = prob.gauss_newton(U, mu)
        if not (np.all(np.isfinite(H)) and np.all(np.isfinite(g))):
            break
        H = H + 1e-9 * np.eye(2 * N)
        b = _rate_box_rhs(U, u_prev, cfg)
        try:
            d = quadprog.solve_qp(H, -g, C, b)[0]
        except ValueError:
            # numerically infeasible QP: fall back to a projected gradient step
            d = project_inputs(U - g.reshape(N, 2) / np.trace(H), u_prev, cfg).ravel() - U.ravel()
        kkt = float(np.max(np.abs(d))) if d.size else 0.0
        slope = float(g @ d)
        step_taken = False
        if kkt > cfg.tol and slope < 0:
            alpha = 1.0
            while alpha > 1e-6:
                U_try = U + alpha * d.reshape(N, 2)
                f_try, X_try = prob.merit(U_try, mu)
                if f_try <= f + 1e-4 * alpha * slope:
                    U, f, X = U_try, f_try, X_try
                    step_taken = True
                    break
                alpha *= 0.5
        if f < best[0] or best[3] != mu:
            best = (f, U, X, mu)
        if not step_taken or alpha * kkt <= cfg.tol:
            # inner loop converged: escalate the penalty if the tightened set is violated
            if prob.penalty(X) > 0 and mu < cfg.penalty_max:
                lo, hi, z = prob.violations(X)
                if max(lo.max(initial=0), hi.max(initial=0), z.max(initial=0)) > 1e-9:
                    mu = min(mu * cfg.penalty_growth, cfg.penalty_max)
                    f, X = prob.merit(U, mu)
                    best = (f, U, X, mu)
                    continue
            converged = True
            break

    _, U, X, mu = best
    U = project_inputs(U, u_prev, cfg)
    X, _ = prob.rollout(U)
    feats = X[1:, :-2]
    s_lo = np.tile(cfg.s_min, prob.n)
    s_hi = np.tile(cfg.s_max, prob.n)
    viol = max(
        float(np.max(s_lo - feats, initial=0.0)),
        float(np.max(feats - s_hi, initial=0.0)),
        float(np.max(cfg.Z_safe - X[1:, -2], initial=0.0)),
    )
    if viol > 1e-6:
        status = "infeasible"
    elif converged:
        status = "optimal"
    else:
        status = "max_iterations"
    return ControlSolution(
        u_sequence=U,
        predicted_states=X,
        cost=prob.objective(U, X),
        kkt_residual=kkt,
        iterations=iterations,
        status=status,
        max_violation=viol,
    )


def baseline_mpc_position(
    initial: HybridState,
    desired: HybridState,
    cfg: NmpcConfig,
    previous_u: ControlInput = ControlInput(),
    warm_start=None,
) -> ControlSolution:
    """Same solver with orientation dropped from the terminal cost."""
    n = initial.n
    P = cfg.terminal_matrix(n).copy()
    P[-1, :] = 0.0
    P[:, -1] = 0.0
    return solve_nmpc(initial, desired, previous_u, replace(cfg, P=P), warm_start=warm_start)


def camera_to_chassis(u: ControlInput, X_RC: RigidTransform, return_twist: bool = False):
    """Map a reduced camera twist ``(v_z, omega_y)`` to unicycle commands.

    The full robot twist is available with ``return_twist``; its lateral
    component is what a camera offset along the robot X axis would require
    and a unicycle cannot execute.
    """
    R = X_RC.rotation
    if abs(abs(R[2, 1]) - 1.0) > 1e-6:
        raise NonPlanarMount("camera Y axis must be parallel to the robot Z axis")
    nu_R = twist_adjoint(X_RC, Twist([0.0, 0.0, u.v_z], [0.0, u.omega_y, 0.0]))
    cmd = ChassisCommand(float(nu_R.linear[0]), float(nu_R.angular[2]))
    if return_twist:
        return cmd, nu_R
    return cmd


def chassis_to_camera(cmd: ChassisCommand, X_RC: RigidTransform) -> ControlInput:
    """Camera (v_z, omega_y) produced by executing ``cmd``."""
    nu_C = twist_adjoint(X_RC.inverse(), Twist([cmd.v_R, 0.0, 0.0], [0.0, 0.0, cmd.omega_R]))
    return ControlInput(float(nu_C.linear[2]), float(nu_C.angular[1]))


def baseline_ibvs(e, L_stack, lam: float, u_min=None, u_max=None) -> ControlInput:
    """Classical IBVS law ``u = -lambda pinv(L) e`` clamped to the input box."""
    L_stack = np.asarray(L_stack, dtype=float)
    sv = np.linalg.svd(L_stack, compute_uv=False)
    if sv.size < 2 or sv[-1] <= 1e-12 * max(sv[0], 1.0):
        raise RankDeficient("stacked interaction matrix is rank deficient")
    u = -lam * (np.linalg.pinv(L_stack) @ np.asarray(e, dtype=float))
    if u_min is not None:
        u = np.maximum(u, u_min)
    if u_max is not None:
        u = np.minimum(u, u_max)
    return ControlInput.from_array(u)
