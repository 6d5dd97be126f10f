"""IR marker perception: thresholding, blob centroids, tracking and planar pose."""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import (
    BehindCamera,
    DegenerateConfiguration,
    NoConsistentAssignment,
    TrackingLost,
)
from .geometry import CameraIntrinsics, RigidTransform, denormalize, normalize_pixel, relative_yaw
from .observation import FeatureObservation, MarkerModel
from .servo_model import ControlInput, predict_features

DEFAULT_THRESHOLD = 32  # keeps the centroid bias of a sigma=1.5 px spot under 0.1 px
DEFAULT_MIN_AREA = 3
DEFAULT_GATE_PX = 5.0

_EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class GrayImage:
    """8-bit image stored as an (height, width) uint8 array."""

    data: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.data)
        if a.ndim != 2:
            raise ValueError("image data must be 2-D")
        object.__setattr__(self, "data", a.astype(np.uint8, copy=False))

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @classmethod
    def blank(cls, width: int, height: int) -> "GrayImage":
        return cls(np.zeros((height, width), dtype=np.uint8))


@dataclass(frozen=True)
class Blob:
    pixels: np.ndarray  # (k, 2) integer (u, v)
    M00: float
    M10: float
    M01: float

    @property
    def centroid(self) -> np.ndarray:
        return np.array([self.M10 / self.M00, self.M01 / self.M00])

    @property
    def area(self) -> int:
        return len(self.pixels)


def threshold_image(img: GrayImage, lambda_I: float = DEFAULT_THRESHOLD) -> GrayImage:
    if not 0 < lambda_I < 255:
        raise ValueError("threshold must lie in (0, 255)")
    d = img.data
    return GrayImage(np.where(d > lambda_I, d, 0).astype(np.uint8))


def detect_blobs(img: GrayImage, min_area: int = DEFAULT_MIN_AREA) -> list:
    """8-connected components of non-zero pixels with intensity-weighted moments."""
    d = img.data
    labels, count = ndimage.label(d > 0, structure=_EIGHT_CONNECTED)
    if count == 0:
        return []
    blobs = []
    for k, sl in enumerate(ndimage.find_objects(labels), start=1):
        mask = labels[sl] == k
        vv, uu = np.nonzero(mask)
        if len(vv) < min_area:
            continue
        vv = vv + sl[0].start
        uu = uu + sl[1].start
        w = d[vv, uu].astype(float)
        M00 = w.sum()
        if M00 <= 0:
            continue
        blobs.append(Blob(np.stack([uu, vv], axis=1), M00, float(w @ uu), float(w @ vv)))
    blobs.sort(key=lambda b: (b.centroid[1], b.centroid[0]))
    return blobs


def blob_centroids(img: GrayImage, lambda_I=DEFAULT_THRESHOLD, min_area=DEFAULT_MIN_AREA) -> np.ndarray:
    blobs = detect_blobs(threshold_image(img, lambda_I), min_area)
    return np.array([b.centroid for b in blobs]).reshape(-1, 2)


def match_features(
    candidates,
    previous: FeatureObservation,
    predicted: FeatureObservation,
    gate_px: float = DEFAULT_GATE_PX,
    K: CameraIntrinsics | None = None,
    min_matches: int = 4,
    timestamp: float | None = None,
) -> FeatureObservation:
    """Give each candidate the id of the predicted point it falls next to.

    Pairs are accepted in order of increasing distance so that every id and
    every candidate is used at most once. Candidates outside every gate are
    treated as interference and dropped.
    """
    cand = np.asarray(candidates, dtype=float).reshape(-1, 2)
    pred = predicted.pixels
    ids, pix = [], []
    if len(cand) and len(pred):
        dist = np.linalg.norm(cand[:, None, :] - pred[None, :, :], axis=2)
        pairs = np.argwhere(dist < gate_px)
        order = np.argsort(dist[pairs[:, 0], pairs[:, 1]], kind="stable")
        used_c, used_p = set(), set()
        for ci, pi in pairs[order]:
            if ci in used_c or pi in used_p:
                continue
            used_c.add(ci)
            used_p.add(pi)
            ids.append(predicted.ids[pi])
            pix.append(cand[ci])
    if len(ids) < min_matches:
        raise TrackingLost(f"only {len(ids)} features matched")
    order = np.argsort(ids)
    ids = [ids[i] for i in order]
    pix = np.array([pix[i] for i in order])
    t = previous.timestamp if timestamp is None else timestamp
    if K is not None:
        return FeatureObservation.from_pixels(ids, pix, K, t)
    # without intrinsics, recover the pixel->normalized map from the prediction
    norm = np.empty_like(pix)
    for ax in range(2):
        A = np.c_[predicted.pixels[:, ax], np.ones(len(predicted))]
        coef = np.linalg.lstsq(A, predicted.normalized[:, ax], rcond=None)[0]
        norm[:, ax] = pix[:, ax] * coef[0] + coef[1]
    return FeatureObservation(tuple(ids), pix, norm, t)


# --------------------------------------------------------------------------
# planar pose

def _normalize_points(p):
    c = p.mean(axis=0)
    d = np.sqrt(((p - c) ** 2).sum(axis=1)).mean()
    s = np.sqrt(2.0) / d if d > 0 else 1.0
    T = np.array([[s, 0.0, -s * c[0]], [0.0, s, -s * c[1]], [0.0, 0.0, 1.0]])
    return T


def homography_dlt(src, dst) -> np.ndarray:
    """Normalized DLT homography with ``dst ~ H src`` for 2D point arrays."""
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    Ts, Td = _normalize_points(src), _normalize_points(dst)
    hs = np.c_[src, np.ones(len(src))] @ Ts.T
    hd = np.c_[dst, np.ones(len(dst))] @ Td.T
    A = []
    for (x, y, w), (u, v, z) in zip(hs, hd):
        A.append([0, 0, 0, -z * x, -z * y, -z * w, v * x, v * y, v * w])
        A.append([z * x, z * y, z * w, 0, 0, 0, -u * x, -u * y, -u * w])
    _, sv, Vt = np.linalg.svd(np.array(A))
    H = Vt[-1].reshape(3, 3)
    H = np.linalg.inv(Td) @ H @ Ts
    return H / H[2, 2] if abs(H[2, 2]) > 1e-12 else H


def _exp_so3(w):
    th = np.linalg.norm(w)
    if th < 1e-12:
        return np.eye(3)
    k = w / th
    Kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + np.sin(th) * Kx + (1 - np.cos(th)) * Kx @ Kx


def _reprojection_residual(R, t, Pm, s):
    Pc = Pm @ R.T + t
    return (Pc[:, :2] / Pc[:, 2:3] - s).ravel(), Pc


def _refine_pose(R, t, Pm, s, iters=20):
    """Gauss-Newton on normalized-image reprojection error, left-multiplied rotation update."""
    r, Pc = _reprojection_residual(R, t, Pm, s)
    cost = r @ r
    for _ in range(iters):
        if np.any(Pc[:, 2] <= 1e-9):
            break
        J = np.zeros((2 * len(Pm), 6))
        for i, (X, Y, Z) in enumerate(Pc):
            dproj = np.array([[1 / Z, 0, -X / Z**2], [0, 1 / Z, -Y / Z**2]])
            q = Pc[i] - t
            skew_q = np.array([[0, -q[2], q[1]], [q[2], 0, -q[0]], [-q[1], q[0], 0]])
            J[2 * i:2 * i + 2, :3] = dproj @ (-skew_q)
            J[2 * i:2 * i + 2, 3:] = dproj
        try:
            delta = np.linalg.lstsq(J, -r, rcond=None)[0]
        except np.linalg.LinAlgError:
            break
        R_new = _exp_so3(delta[:3]) @ R
        t_new = t + delta[3:]
        r_new, Pc_new = _reprojection_residual(R_new, t_new, Pm, s)
        c_new = r_new @ r_new
        if c_new >= cost:
            break
        R, t, r, Pc, cost = R_new, t_new, r_new, Pc_new, c_new
        if np.max(np.abs(delta)) < 1e-14:
            break
    U, _, Vt = np.linalg.svd(R)
    R = U @ Vt
    return R, t, cost


def _pose_candidates_from_homography(H):
    """Two planar poses (R, t) from a plane-to-normalized-image homography."""
    h1, h2, h3 = H[:, 0], H[:, 1], H[:, 2]
    lam = 2.0 / (np.linalg.norm(h1) + np.linalg.norm(h2))
    if h3[2] * lam < 0:
        lam = -lam
    r1, r2 = lam * h1, lam * h2
    r3 = np.cross(r1, r2)
    U, _, Vt = np.linalg.svd(np.column_stack([r1, r2, r3]))
    R1 = U @ Vt
    if np.linalg.det(R1) < 0:
        R1 = U @ np.diag([1, 1, -1]) @ Vt
    t1 = lam * h3
    # mirror solution: reflect the plane normal about the line of sight to the plane origin
    v = t1 / np.linalg.norm(t1)
    n1 = R1[:, 2]
    n2 = 2.0 * (n1 @ v) * v - n1
    axis = np.cross(n1, n2)
    sa = np.linalg.norm(axis)
    if sa < 1e-12:
        return [(R1, t1)]
    ang = np.arctan2(sa, n1 @ n2)
    R2 = _exp_so3(axis / sa * ang) @ R1
    return [(R1, t1), (R2, t1.copy())]


def estimate_planar_pose(obs: FeatureObservation, model: MarkerModel, K: CameraIntrinsics = None, refine=True):
    """Pose of {T} in {C} from >= 4 coplanar correspondences.

    Returns ``(Z, theta, pose)`` where ``Z`` is the mean camera-frame depth of
    the observed marker points, ``theta`` the signed relative yaw about camera
    Y, and ``pose`` maps target to camera coordinates.
    """
    s = obs.normalized
    if np.any(~np.isfinite(s)):
        if K is None:
            raise ValueError("intrinsics needed to normalize pixel observations")
        s = normalize_pixel(obs.pixels, K)
    if len(obs) < 4:
        raise DegenerateConfiguration("at least 4 points are required")
    Pm = model.points_target[list(obs.ids)]
    sc = s - s.mean(axis=0)
    sv = np.linalg.svd(sc, compute_uv=False)
    if sv[1] < 1e-9 * max(sv[0], 1e-12):
        raise DegenerateConfiguration("image points are collinear")

    _, origin, basis = model.plane_coordinates()
    uv = (Pm - origin) @ basis[:2].T
    H = homography_dlt(uv, s)
    # plane frame: P_plane = basis (P_T - origin)
    solutions = []
    for Rp, tp in _pose_candidates_from_homography(H):
        R = Rp @ basis
        t = tp - R @ origin
        if refine:
            R, t, cost = _refine_pose(R, t, Pm, s)
        else:
            r, _ = _reprojection_residual(R, t, Pm, s)
            cost = float(r @ r)
        solutions.append((cost, abs(relative_yaw(R.T)), R, t))
    lowest = min(c for c, *_ in solutions)
    near = [sol for sol in solutions if sol[0] <= lowest + 1e-18 + 1e-9 * lowest]
    _, _, R, t = min(near, key=lambda sol: (sol[1], sol[0]))
    theta = relative_yaw(R.T)
    Pc = Pm @ R.T + t
    if np.any(Pc[:, 2] <= 0):
        raise BehindCamera("recovered marker depth is not positive")
    Z = float(Pc[:, 2].mean())
    return Z, float(theta), RigidTransform(R, t)


def reprojection_rms(obs: FeatureObservation, model: MarkerModel, pose: RigidTransform) -> float:
    Pc = pose.apply(model.points_target[list(obs.ids)])
    r = Pc[:, :2] / Pc[:, 2:3] - obs.normalized
    return float(np.sqrt(np.mean(np.sum(r * r, axis=1))))


def _ordering_consistent(model: MarkerModel, ids, pix, eps=1e-9) -> bool:
    """Left/right and top/bottom order of image points agrees with the model."""
    P = model.points_target[list(ids)]
    for a, b in itertools.combinations(range(len(ids)), 2):
        dx = P[b, 0] - P[a, 0]
        if abs(dx) > eps and np.sign(pix[b, 0] - pix[a, 0]) != np.sign(dx):
            return False
        dy = P[b, 1] - P[a, 1]
        # y_T up, image v down
        if abs(dy) > eps and np.sign(pix[b, 1] - pix[a, 1]) != -np.sign(dy):
            return False
    return True


def initialize_correspondence(
    candidates,
    model: MarkerModel,
    K: CameraIntrinsics,
    max_rms_px: float = 2.0,
    use_ordering: bool = True,
    timestamp: float = 0.0,
) -> FeatureObservation:
    """Pick the candidate subset and id assignment that best fits a rigid marker pose.

    Assignments violating the array's left/right and top/bottom ordering are
    skipped. The winner minimizes planar-pose reprojection RMS; ties go to the
    lexicographically smallest candidate tuple.
    """
    cand = np.asarray(candidates, dtype=float).reshape(-1, 2)
    n = model.n
    if len(cand) < n:
        raise NoConsistentAssignment(f"{len(cand)} candidates for {n} markers")
    ids = tuple(range(n))
    best = None
    for combo in itertools.combinations(range(len(cand)), n):
        for perm in itertools.permutations(combo):
            pix = cand[list(perm)]
            if use_ordering and not _ordering_consistent(model, ids, pix):
                continue
            obs = FeatureObservation.from_pixels(ids, pix, K, timestamp)
            try:
                _, _, pose = estimate_planar_pose(obs, model, K)
            except (DegenerateConfiguration, BehindCamera):
                continue
            rms = reprojection_rms(obs, model, pose) * K.fx
            key = (rms, perm)
            if best is None or key < best[0]:
                best = (key, obs)
    if best is None or best[0][0] > max_rms_px:
        raise NoConsistentAssignment("no assignment fits the marker geometry")
    return best[1]


class PerceptionPipeline:
    """Frame-to-frame marker tracker with pose recovery.

    Owns only the last observation; one instance per camera stream.
    """

    def __init__(
        self,
        model: MarkerModel,
        K: CameraIntrinsics,
        lambda_I: float = DEFAULT_THRESHOLD,
        min_area: int = DEFAULT_MIN_AREA,
        gate_px: float = DEFAULT_GATE_PX,
        frame_rate: float = 60.0,
        max_init_rms_px: float = 2.0,
    ):
        self.model = model
        self.K = K
        self.lambda_I = lambda_I
        self.min_area = min_area
        self.gate_px = gate_px
        self.frame_rate = frame_rate
        self.max_init_rms_px = max_init_rms_px
        self.last: FeatureObservation | None = None
        self.last_Z: float | None = None
        self.last_theta: float = 0.0

    def process(self, img: GrayImage, u_last=None, timestamp: float = 0.0):
        """Return ``(observation, Z, theta)``; raises :class:`TrackingLost` on failure."""
        cand = blob_centroids(img, self.lambda_I, self.min_area)
        obs = None
        if self.last is not None and self.last_Z is not None:
            u = u_last if u_last is not None else ControlInput()
            pred = predict_features(self.last, u, self.frame_rate, self.last_Z, self.last_theta, self.K)
            try:
                obs = match_features(cand, self.last, pred, self.gate_px, self.K, min_matches=self.model.n,
                                     timestamp=timestamp)
            except TrackingLost:
                obs = None
        if obs is None:
            try:
                obs = initialize_correspondence(cand, self.model, self.K, self.max_init_rms_px, timestamp=timestamp)
            except NoConsistentAssignment as err:
                self.last = None
                raise TrackingLost(str(err)) from err
        Z, theta, _ = estimate_planar_pose(obs, self.model, self.K)
        self.last, self.last_Z, self.last_theta = obs, Z, theta
        return obs, Z, theta


# --------------------------------------------------------------------------
# binary PGM (P5) fixtures

def write_pgm(path, img: GrayImage) -> None:
    header = f"P5\n{img.width} {img.height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + np.ascontiguousarray(img.data).tobytes())


def read_pgm(path) -> GrayImage:
    raw = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while raw[pos:pos + 1] not in (b"\n", b""):
                pos += 1
            continue
        start = pos
        while not raw[pos:pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    pos += 1  # single whitespace after maxval
    if tokens[0] != b"P5":
        raise ValueError("only binary P5 PGM files are supported")
    w, h, maxval = (int(x) for x in tokens[1:])
    if maxval > 255:
        raise ValueError("only 8-bit PGM files are supported")
    data = np.frombuffer(raw, dtype=np.uint8, count=w * h, offset=pos).reshape(h, w)
    return GrayImage(data.copy())


def pixels_of(obs: FeatureObservation, K: CameraIntrinsics) -> np.ndarray:
    return denormalize(obs.normalized, K)
