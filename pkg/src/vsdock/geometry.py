"""Frames, pinhole projection and velocity-space transforms.

Axis conventions used throughout the package:

* camera {C}: Z along the optical axis, X right, Y down;
* robot {R}: X forward, Y left, Z up;
* target {T}: origin at the marker array centre, markers in the z_T = 0 plane,
  y_T up, the robot approaches from z_T > 0.

With the default mount the camera optical axis coincides with the robot
forward axis, so a camera forward speed ``v_z`` is the chassis speed and a
camera yaw rate ``omega_y`` (about camera Y, pointing down) equals minus the
chassis yaw rate.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NonPositiveDepth

_MIN_DEPTH = 1e-9
_SINC_TAYLOR = 1e-4


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @classmethod
    def from_fov(cls, width: int = 1280, height: int = 1024, hfov_deg: float = 120.0):
        """Square-pixel intrinsics from the horizontal field of view."""
        f = 0.5 * width / np.tan(np.radians(hfov_deg) / 2.0)
        return cls(fx=f, fy=f, cx=width / 2.0, cy=height / 2.0, width=width, height=height)

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def normalized_bounds(self, margin_px: float = 0.0):
        """Image rectangle (shrunk by ``margin_px``) in normalized coordinates."""
        lo = normalize_pixel(np.array([margin_px, margin_px]), self)
        hi = normalize_pixel(np.array([self.width - margin_px, self.height - margin_px]), self)
        return lo, hi


def skew(v) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


@dataclass(frozen=True)
class RigidTransform:
    """Pose of a child frame in a parent frame: p_parent = R p_child + t."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-9) or abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise ValueError("rotation must be a proper orthonormal matrix")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    def apply(self, points) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.rotation.T + self.translation

    def inverse(self) -> "RigidTransform":
        Rt = self.rotation.T
        return RigidTransform(Rt, -Rt @ self.translation)

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """``self ∘ other``: apply ``other`` first, then ``self``."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def adjoint(self) -> np.ndarray:
        R = self.rotation
        X = np.zeros((6, 6))
        X[:3, :3] = R
        X[:3, 3:] = skew(self.translation) @ R
        X[3:, 3:] = R
        return X


@dataclass(frozen=True)
class Twist:
    linear: np.ndarray
    angular: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.linear, dtype=float).reshape(3)
        w = np.asarray(self.angular, dtype=float).reshape(3)
        if not (np.all(np.isfinite(v)) and np.all(np.isfinite(w))):
            raise ValueError("twist components must be finite")
        object.__setattr__(self, "linear", v)
        object.__setattr__(self, "angular", w)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.linear, self.angular])

    @classmethod
    def from_vector(cls, nu) -> "Twist":
        nu = np.asarray(nu, dtype=float)
        return cls(nu[:3], nu[3:])


@dataclass(frozen=True)
class RotationVector:
    axis: np.ndarray
    angle: float

    def __post_init__(self):
        n = np.asarray(self.axis, dtype=float).reshape(3)
        if abs(np.linalg.norm(n) - 1.0) > 1e-9:
            raise ValueError("rotation axis must be a unit vector")
        if not (0.0 <= self.angle <= np.pi):
            raise ValueError("rotation angle must lie in [0, pi]")
        object.__setattr__(self, "axis", n)
        object.__setattr__(self, "angle", float(self.angle))

    @classmethod
    def from_vector(cls, rv) -> "RotationVector":
        rv = np.asarray(rv, dtype=float)
        angle = float(np.linalg.norm(rv))
        if angle < 1e-12:
            return cls(np.array([0.0, 0.0, 1.0]), 0.0)
        axis = rv / angle
        if angle > np.pi:
            # same rotation, angle folded back into [0, pi]
            angle = 2.0 * np.pi - angle
            axis = -axis
        return cls(axis, angle)

    def as_vector(self) -> np.ndarray:
        return self.axis * self.angle


def project_point(P_cam, K: CameraIntrinsics, return_normalized: bool = False):
    """Pinhole projection of a camera-frame point to pixels.

    With ``return_normalized`` the normalized image coordinates ``(X/Z, Y/Z)``
    are returned as a second value.
    """
    X, Y, Z = np.asarray(P_cam, dtype=float)
    if Z <= _MIN_DEPTH:
        raise NonPositiveDepth(f"point depth {Z} is not in front of the camera")
    s = np.array([X / Z, Y / Z])
    p = np.array([K.fx * s[0] + K.cx, K.fy * s[1] + K.cy])
    if return_normalized:
        return p, s
    return p


def normalize_pixel(p, K: CameraIntrinsics) -> np.ndarray:
    """Pixel coordinates to normalized image coordinates. Works on (..., 2) arrays."""
    p = np.asarray(p, dtype=float)
    return np.stack([(p[..., 0] - K.cx) / K.fx, (p[..., 1] - K.cy) / K.fy], axis=-1)


def denormalize(s, K: CameraIntrinsics) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    return np.stack([K.fx * s[..., 0] + K.cx, K.fy * s[..., 1] + K.cy], axis=-1)


def twist_adjoint(X_RC: RigidTransform, v_cam: Twist) -> Twist:
    """Express a camera body twist in the robot frame."""
    return Twist.from_vector(X_RC.adjoint() @ v_cam.as_vector())


def sinc(x: float) -> float:
    if abs(x) < _SINC_TAYLOR:
        x2 = x * x
        return 1.0 - x2 / 6.0 + x2 * x2 / 120.0
    return np.sin(x) / x


def rotvec_rate(rv: RotationVector, omega) -> np.ndarray:
    """Time derivative of the rotation vector ``n*theta``.

    ``omega`` is the angular velocity under which the rotation evolves as
    ``dR/dt = [omega]x R``.
    """
    omega = np.asarray(omega, dtype=float)
    theta = rv.angle
    if theta < 1e-8:
        return omega.copy()
    N = skew(rv.axis)
    coef = 1.0 - sinc(theta) / sinc(theta / 2.0) ** 2
    return (np.eye(3) - 0.5 * theta * N + coef * (N @ N)) @ omega


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    w = np.mod(np.asarray(a, dtype=float) + np.pi, 2.0 * np.pi) - np.pi
    w = np.where(w == -np.pi, np.pi, w)
    if np.ndim(w) == 0:
        return float(w)
    return w


def rot_y(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


# Camera axes expressed in the robot frame: camera Z = robot X, camera X = -robot Y,
# camera Y = -robot Z.
DEFAULT_CAMERA_ROTATION = np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])

# Camera axes expressed in {T} when the robot faces the marker squarely.
ALIGNED_CAMERA_IN_TARGET = np.diag([1.0, -1.0, -1.0])


def default_camera_mount(translation=(0.0, 0.0, 0.0)) -> RigidTransform:
    return RigidTransform(DEFAULT_CAMERA_ROTATION, np.asarray(translation, dtype=float))


def relative_yaw(R_target_camera: np.ndarray) -> float:
    """Signed camera rotation about its own Y axis relative to the aligned pose.

    ``R_target_camera`` holds the camera axes expressed in {T}. Zero means the
    optical axis is anti-parallel to the marker normal.
    """
    M = ALIGNED_CAMERA_IN_TARGET.T @ np.asarray(R_target_camera)
    return float(np.arctan2(M[0, 2], M[0, 0]))
