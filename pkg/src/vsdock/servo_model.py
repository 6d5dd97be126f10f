"""Hybrid visual-servoing state and its discrete-time prediction model.

The state vector is laid out as ``[x1, y1, ..., xn, yn, Z, theta]`` with
normalized image coordinates, a shared depth ``Z`` (metres) and the signed
relative yaw ``theta``. The camera input is ``u = (v_z, omega_y)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DepthUnderflow, DimensionMismatch, NonPositiveDepth
from .geometry import CameraIntrinsics, denormalize, wrap_angle
from .observation import FeatureObservation


@dataclass(frozen=True)
class ControlInput:
    v_z: float = 0.0
    omega_y: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.v_z) and np.isfinite(self.omega_y)):
            raise ValueError("control input must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.v_z, self.omega_y], dtype=float)

    @classmethod
    def from_array(cls, u) -> "ControlInput":
        return cls(float(u[0]), float(u[1]))


@dataclass(frozen=True)
class HybridState:
    features: np.ndarray
    Z: float
    theta: float

    def __post_init__(self):
        f = np.asarray(self.features, dtype=float).reshape(-1, 2)
        object.__setattr__(self, "features", f)
        object.__setattr__(self, "Z", float(self.Z))
        object.__setattr__(self, "theta", float(self.theta))
        if len(f) < 1:
            raise ValueError("at least one feature is required")
        if not (np.all(np.isfinite(f)) and np.isfinite(self.Z) and np.isfinite(self.theta)):
            raise ValueError("state components must be finite")
        if self.Z <= 0:
            raise NonPositiveDepth(f"depth {self.Z} must be positive")
        if abs(self.theta) >= np.pi:
            raise ValueError("theta must lie in (-pi, pi)")

    @property
    def n(self) -> int:
        return len(self.features)

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.features.ravel(), [self.Z, self.theta]])

    @classmethod
    def from_vector(cls, x) -> "HybridState":
        x = np.asarray(x, dtype=float)
        return cls(x[:-2].reshape(-1, 2), x[-2], x[-1])


def interaction_point(s, Z: float) -> np.ndarray:
    """Reduced 2x2 interaction matrix of one normalized point under (v_z, omega_y)."""
    if Z <= 0:
        raise NonPositiveDepth(f"depth {Z} must be positive")
    x, y = float(s[0]), float(s[1])
    return np.array([[x / Z, -(1.0 + x * x)], [y / Z, -x * y]])


def depth_rate(x_hat: float, Z: float, u: ControlInput) -> float:
    if Z <= 0:
        raise NonPositiveDepth(f"depth {Z} must be positive")
    return -u.v_z + u.omega_y * x_hat * Z


def extended_interaction(x: np.ndarray) -> np.ndarray:
    """(2n+2)x2 extended interaction matrix of a raw state vector."""
    feats = x[:-2].reshape(-1, 2)
    Z = x[-2]
    if Z <= 0:
        raise NonPositiveDepth(f"depth {Z} must be positive")
    xs, ys = feats[:, 0], feats[:, 1]
    L = np.empty((x.size, 2))
    L[0:-2:2, 0] = xs / Z
    L[0:-2:2, 1] = -(1.0 + xs * xs)
    L[1:-2:2, 0] = ys / Z
    L[1:-2:2, 1] = -xs * ys
    L[-2] = (-1.0, xs.mean() * Z)
    L[-1] = (0.0, 1.0)
    return L


def build_extended_interaction(state: HybridState) -> np.ndarray:
    return extended_interaction(state.to_vector())


def dynamics_jacobian(x: np.ndarray, u: np.ndarray) -> np.ndarray:
    """d(L'(x) u)/dx for the raw state vector ``x``."""
    m = x.size
    n = (m - 2) // 2
    feats = x[:-2].reshape(-1, 2)
    Z = x[-2]
    v, w = u[0], u[1]
    xs, ys = feats[:, 0], feats[:, 1]
    J = np.zeros((m, m))
    ix = np.arange(0, 2 * n, 2)
    iy = ix + 1
    J[ix, ix] = v / Z - 2.0 * xs * w
    J[ix, m - 2] = -xs * v / (Z * Z)
    J[iy, ix] = -ys * w
    J[iy, iy] = v / Z - xs * w
    J[iy, m - 2] = -ys * v / (Z * Z)
    J[m - 2, ix] = w * Z / n
    J[m - 2, m - 2] = w * xs.mean()
    return J


def step_vector(x: np.ndarray, u: np.ndarray, T_s: float, drift=None) -> np.ndarray:
    """One forward-Euler step of the raw state, L' frozen at ``x``."""
    x_next = x + T_s * (extended_interaction(x) @ u)
    if drift is not None:
        x_next = x_next + T_s * drift
    return x_next


def predict_state(state: HybridState, u: ControlInput, T_s: float, drift=None) -> HybridState:
    """Euler prediction; ``drift`` is an optional additive rate (e.g. an ESO disturbance estimate)."""
    if T_s <= 0:
        raise ValueError("T_s must be positive")
    x_next = step_vector(state.to_vector(), u.as_array(), T_s, drift)
    if x_next[-2] <= 0:
        raise DepthUnderflow(f"predicted depth {x_next[-2]:.4g} is not positive")
    if abs(x_next[-1]) >= np.pi:
        x_next[-1] = wrap_angle(x_next[-1])
    return HybridState.from_vector(x_next)


def predict_features(
    obs: FeatureObservation,
    u: ControlInput,
    f_c: float,
    Z: float,
    theta: float,
    K: CameraIntrinsics,
) -> FeatureObservation:
    """One-frame feature prediction ``s + L u / f_c`` in pixel space."""
    if f_c <= 0:
        raise ValueError("frame rate must be positive")
    if len(obs) == 0:
        return obs
    # theta does not enter the point rows of the reduced model
    s = obs.normalized
    xs, ys = s[:, 0], s[:, 1]
    ds = np.stack([xs / Z * u.v_z - (1.0 + xs * xs) * u.omega_y, ys / Z * u.v_z - xs * ys * u.omega_y], axis=1)
    s_next = s + ds / f_c
    return FeatureObservation(obs.ids, denormalize(s_next, K), s_next, obs.timestamp + 1.0 / f_c)


def state_error(state: HybridState, desired: HybridState) -> np.ndarray:
    if state.n != desired.n:
        raise DimensionMismatch(f"state has {state.n} features, desired has {desired.n}")
    e = state.to_vector() - desired.to_vector()
    e[-1] = wrap_angle(e[-1])
    return e
