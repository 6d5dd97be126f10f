"""Value types shared by perception, the prediction model and the simulator."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import CameraIntrinsics, normalize_pixel


@dataclass(frozen=True)
class MarkerModel:
    """Coplanar marker points in {T} (metres), ordered by id."""

    points_target: np.ndarray

    def __post_init__(self):
        P = np.asarray(self.points_target, dtype=float).reshape(-1, 3)
        if len(P) < 4:
            raise ValueError("a marker model needs at least 4 points")
        centred = P - P.mean(axis=0)
        sv = np.linalg.svd(centred, compute_uv=False)
        if sv[1] < 1e-9:
            raise ValueError("marker points are collinear")
        if sv[2] > 1e-9:
            raise ValueError("marker points are not coplanar")
        object.__setattr__(self, "points_target", P)

    @property
    def n(self) -> int:
        return len(self.points_target)

    @classmethod
    def square(cls, side: float = 0.3) -> "MarkerModel":
        """Four LEDs on the corners of a square in the z_T = 0 plane.

        Ids run top-left, top-right, bottom-right, bottom-left as seen by a
        camera facing the array (camera X = x_T, y_T up).
        """
        h = side / 2.0
        return cls(np.array([[-h, h, 0.0], [h, h, 0.0], [h, -h, 0.0], [-h, -h, 0.0]]))

    def plane_coordinates(self) -> np.ndarray:
        """2D coordinates of the points in their own plane plus the plane frame.

        Returns ``(uv, origin, basis)`` with ``points = origin + uv @ basis[:2]``.
        """
        P = self.points_target
        origin = P.mean(axis=0)
        _, _, Vt = np.linalg.svd(P - origin)
        basis = Vt.copy()
        if np.linalg.det(basis) < 0:
            basis[2] *= -1
        uv = (P - origin) @ basis[:2].T
        return uv, origin, basis


@dataclass(frozen=True)
class FeatureObservation:
    ids: tuple
    pixels: np.ndarray
    normalized: np.ndarray
    timestamp: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "ids", tuple(int(i) for i in self.ids))
        object.__setattr__(self, "pixels", np.asarray(self.pixels, dtype=float).reshape(-1, 2))
        object.__setattr__(self, "normalized", np.asarray(self.normalized, dtype=float).reshape(-1, 2))
        if len(set(self.ids)) != len(self.ids):
            raise ValueError("duplicate feature ids")
        if not (len(self.ids) == len(self.pixels) == len(self.normalized)):
            raise ValueError("ids, pixels and normalized must have equal length")

    @classmethod
    def from_pixels(cls, ids, pixels, K: CameraIntrinsics, timestamp: float = 0.0):
        pixels = np.asarray(pixels, dtype=float).reshape(-1, 2)
        return cls(tuple(ids), pixels, normalize_pixel(pixels, K), timestamp)

    def __len__(self):
        return len(self.ids)

    def subset(self, ids) -> "FeatureObservation":
        index = {i: k for k, i in enumerate(self.ids)}
        rows = [index[i] for i in ids]
        return FeatureObservation(tuple(ids), self.pixels[rows], self.normalized[rows], self.timestamp)
