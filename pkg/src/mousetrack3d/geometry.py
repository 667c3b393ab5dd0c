"""Homogeneous projective geometry: projection, decomposition, rigid-transform
algebra, spatial resection, and triangulation.

Conventions
-----------
* World/model coordinates are millimeters, image coordinates pixels.
* A camera maps global points through ``x ~ K [I|0] H`` where ``H`` is the
  rigid transform from global to camera coordinates.
* Rotations are exchanged with 3-vector axis-angle (Rodrigues) encodings;
  the canonical branch keeps the angle in ``[0, pi]`` and, at exactly pi,
  picks the axis whose first nonzero component is positive.

All values are immutable after construction and every function is pure, so
everything here is safe to share across threads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.optimize

from .errors import (
    DegenerateConfiguration,
    InsufficientPoints,
    NonPositiveDepth,
    ParallelRays,
    SchemaError,
    SingularCamera,
)

EPS_DEPTH = 1e-9  # mm; depths at or below this are rejected
_EPS_ANGLE = 1e-12


# ---------------------------------------------------------------------------
# Rodrigues encoding
# ---------------------------------------------------------------------------

def rodrigues_to_matrix(r):
    """Rotation matrix for an axis-angle 3-vector (vectorized over leading dims).

    Accepts shape (3,) or (N, 3); returns (3, 3) or (N, 3, 3).
    """
    r = np.asarray(r, dtype=float)
    single = r.ndim == 1
    rv = np.atleast_2d(r)
    theta = np.linalg.norm(rv, axis=1)
    n = rv.shape[0]
    R = np.broadcast_to(np.eye(3), (n, 3, 3)).copy()

    small = theta < 1e-12
    if np.any(~small):
        th = theta[~small]
        axis = rv[~small] / th[:, None]
        K = _skew_many(axis)
        s = np.sin(th)[:, None, None]
        c = np.cos(th)[:, None, None]
        R[~small] = np.eye(3) + s * K + (1.0 - c) * (K @ K)
    if np.any(small):
        # first-order: I + [r]x is accurate to O(theta^2)
        R[small] = np.eye(3) + _skew_many(rv[small])
    return R[0] if single else R


def matrix_to_rodrigues(R):
    """Axis-angle 3-vector for a rotation matrix, on the canonical branch.

    Angle lies in [0, pi]; at pi the axis sign is fixed so its first nonzero
    component is positive (deterministic serialization).
    """
    R = np.asarray(R, dtype=float)
    tr = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arccos(tr)
    v = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if theta < 1e-7:
        return 0.5 * v
    if np.pi - theta < 1e-6:
        # near pi the skew part vanishes; recover axis from R + I
        A = (R + np.eye(3)) / 2.0
        axis = np.sqrt(np.clip(np.diag(A), 0.0, None))
        k = int(np.argmax(axis))
        signs = np.ones(3)
        for i in range(3):
            if i != k:
                signs[i] = 1.0 if A[k, i] >= 0 else -1.0
        axis = axis * signs
        axis /= np.linalg.norm(axis)
        # canonical sign at the branch boundary
        for c in axis:
            if abs(c) > 1e-12:
                if c < 0:
                    axis = -axis
                break
        return theta * axis
    return (theta / (2.0 * np.sin(theta))) * v


def _skew(a):
    return np.array([[0.0, -a[2], a[1]],
                     [a[2], 0.0, -a[0]],
                     [-a[1], a[0], 0.0]])


def _skew_many(a):
    n = a.shape[0]
    K = np.zeros((n, 3, 3))
    K[:, 0, 1] = -a[:, 2]
    K[:, 0, 2] = a[:, 1]
    K[:, 1, 0] = a[:, 2]
    K[:, 1, 2] = -a[:, 0]
    K[:, 2, 0] = -a[:, 1]
    K[:, 2, 1] = a[:, 0]
    return K


def rotation_point_jacobian(r, x):
    """d(R(r) x)/dr, shape (3, 3); column i is the derivative w.r.t. r[i].

    Uses the closed form in terms of R itself; falls back to the exact
    r -> 0 limit (columns e_i x x) for tiny angles.
    """
    r = np.asarray(r, dtype=float)
    x = np.asarray(x, dtype=float)
    J = rotation_point_jacobians(r[None, :], x[None, :])
    return J[0]


def rotation_point_jacobians(rv, pts):
    """Vectorized d(R(r_j) x_j)/dr for stacked rotations and points.

    Parameters
    ----------
    rv : (N, 3) axis-angle vectors
    pts : (N, 3) points rotated by the matching vector

    Returns
    -------
    (N, 3, 3) array; [j, :, i] is d(R(r_j) x_j)/dr_i.
    """
    rv = np.asarray(rv, dtype=float)
    pts = np.asarray(pts, dtype=float)
    n = rv.shape[0]
    R = rodrigues_to_matrix(rv)
    v = np.einsum("nij,nj->ni", R, pts)
    J = np.zeros((n, 3, 3))
    theta2 = np.einsum("ni,ni->n", rv, rv)
    small = theta2 < 1e-16

    big = ~small
    if np.any(big):
        r = rv[big]
        vb = v[big]
        t2 = theta2[big][:, None]
        rxv = np.cross(r, vb)
        for i in range(3):
            ei = np.zeros(3)
            ei[i] = 1.0
            u = np.cross(r, ei - R[big][:, :, i])
            col = (r[:, i : i + 1] * rxv + np.cross(u, vb)) / t2
            J[big, :, i] = col
    if np.any(small):
        vs = v[small]
        for i in range(3):
            ei = np.zeros(3)
            ei[i] = 1.0
            J[small, :, i] = np.cross(ei, vs)
    return J


# ---------------------------------------------------------------------------
# Rigid transforms and pose vectors
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RigidTransform:
    """6-DoF rigid transform: x -> R x + t (t in mm)."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.array(self.rotation, dtype=float))
        object.__setattr__(self, "translation",
                           np.array(self.translation, dtype=float).reshape(3))
        self.rotation.setflags(write=False)
        self.translation.setflags(write=False)

    @staticmethod
    def identity():
        return RigidTransform(np.eye(3), np.zeros(3))

    def matrix(self):
        """4x4 homogeneous matrix."""
        H = np.eye(4)
        H[:3, :3] = self.rotation
        H[:3, 3] = self.translation
        return H


@dataclass(frozen=True)
class PoseVector:
    """Six pose parameters: Rodrigues rotation vector plus translation (mm)."""

    rodrigues: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rodrigues",
                           np.array(self.rodrigues, dtype=float).reshape(3))
        object.__setattr__(self, "translation",
                           np.array(self.translation, dtype=float).reshape(3))
        self.rodrigues.setflags(write=False)
        self.translation.setflags(write=False)

    def as_array(self):
        return np.concatenate([self.rodrigues, self.translation])

    @staticmethod
    def from_array(p):
        p = np.asarray(p, dtype=float).reshape(6)
        return PoseVector(p[:3], p[3:])


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Transform equal to applying b first, then a."""
    return RigidTransform(a.rotation @ b.rotation,
                          a.rotation @ b.translation + a.translation)


def invert(t: RigidTransform) -> RigidTransform:
    return RigidTransform(t.rotation.T, -t.rotation.T @ t.translation)


def apply(t: RigidTransform, x):
    """Map one point (3,) or many points (N, 3) through the transform."""
    x = np.asarray(x, dtype=float)
    return x @ t.rotation.T + t.translation


def pose_to_transform(p: PoseVector) -> RigidTransform:
    return RigidTransform(rodrigues_to_matrix(p.rodrigues), p.translation)


def transform_to_pose(t: RigidTransform) -> PoseVector:
    return PoseVector(matrix_to_rodrigues(t.rotation), t.translation)


# ---------------------------------------------------------------------------
# Cameras
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CameraModel:
    """Calibrated camera: intrinsics K plus the fixed global->camera pose."""

    calibration: np.ndarray
    pose_global: RigidTransform
    id: int = 0
    image_size: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "calibration",
                           np.array(self.calibration, dtype=float))
        self.calibration.setflags(write=False)

    def projection_matrix(self):
        """3x4 matrix P = K [R | t]."""
        H = self.pose_global
        return self.calibration @ np.hstack([H.rotation,
                                             H.translation[:, None]])

    def center(self):
        """Camera center in global coordinates."""
        H = self.pose_global
        return -H.rotation.T @ H.translation


def project(camera: CameraModel, point):
    """Project one global 3D point (mm) to pixels.

    Raises NonPositiveDepth when the point sits on or behind the camera's
    principal plane (depth <= EPS_DEPTH).
    """
    pc = apply(camera.pose_global, np.asarray(point, dtype=float))
    if pc[2] <= EPS_DEPTH:
        raise NonPositiveDepth(f"depth {pc[2]:.3g} mm <= {EPS_DEPTH} mm")
    q = camera.calibration @ pc
    return q[:2] / q[2]


def project_many(camera: CameraModel, points):
    """Project (N, 3) points; returns ((N, 2) pixels, (N,) depths).

    Does not raise on bad depth; callers filter on the returned depths.
    """
    pts = np.asarray(points, dtype=float)
    pc = apply(camera.pose_global, pts)
    q = pc @ camera.calibration.T
    depth = pc[:, 2]
    safe = np.where(np.abs(q[:, 2]) > EPS_DEPTH, q[:, 2], 1.0)
    return q[:, :2] / safe[:, None], depth


def decompose_projection(P) -> CameraModel:
    """Factor a 3x4 projection matrix into K (positive diagonal, K22 = 1)
    and a proper rigid transform, resolving homogeneous sign so the
    reassembled matrix matches the input up to positive scale.
    """
    P = np.asarray(P, dtype=float)
    if P.shape != (3, 4):
        raise ValueError(f"projection matrix must be 3x4, got {P.shape}")
    M = P[:, :3]
    if abs(np.linalg.det(M)) < 1e-12 * max(np.linalg.norm(M), 1.0) ** 3:
        raise SingularCamera("left 3x3 block is rank-deficient")

    K, R = scipy.linalg.rq(M)
    # force positive K diagonal
    D = np.diag(np.sign(np.diag(K)))
    K = K @ D
    R = D @ R
    if np.linalg.det(R) < 0:
        # input scale was negative; flip the whole homogeneous matrix
        R = -R
        t = np.linalg.solve(K, -P[:, 3])
    else:
        t = np.linalg.solve(K, P[:, 3])
    K = K / K[2, 2]
    return CameraModel(K, RigidTransform(R, t))


# ---------------------------------------------------------------------------
# Resection (camera pose from 3D-2D correspondences)
# ---------------------------------------------------------------------------

def _hartley_normalization_2d(x):
    c = x.mean(axis=0)
    d = np.sqrt(((x - c) ** 2).sum(axis=1)).mean()
    s = np.sqrt(2.0) / max(d, 1e-12)
    T = np.array([[s, 0, -s * c[0]], [0, s, -s * c[1]], [0, 0, 1.0]])
    return T


def _hartley_normalization_3d(X):
    c = X.mean(axis=0)
    d = np.sqrt(((X - c) ** 2).sum(axis=1)).mean()
    s = np.sqrt(3.0) / max(d, 1e-12)
    U = np.eye(4)
    U[:3, :3] *= s
    U[:3, 3] = -s * c
    return U


def _dlt_projection(X, x):
    """Linear 11-parameter camera fit with Hartley isotropic normalization."""
    T = _hartley_normalization_2d(x)
    U = _hartley_normalization_3d(X)
    Xh = np.hstack([X, np.ones((len(X), 1))]) @ U.T
    xh = np.hstack([x, np.ones((len(x), 1))]) @ T.T
    A = []
    for Xi, xi in zip(Xh, xh):
        u, v = xi[0], xi[1]
        A.append(np.concatenate([np.zeros(4), -Xi, v * Xi]))
        A.append(np.concatenate([Xi, np.zeros(4), -u * Xi]))
    A = np.asarray(A)
    _, _, Vt = np.linalg.svd(A)
    Pn = Vt[-1].reshape(3, 4)
    P = np.linalg.inv(T) @ Pn @ U
    return P / np.linalg.norm(P)


def _coplanarity_score(X):
    Xc = X - X.mean(axis=0)
    s = np.linalg.svd(Xc, compute_uv=False)
    return s[-1] / max(s[0], 1e-12)


def _reprojection_residuals(params, K, X, x):
    R = rodrigues_to_matrix(params[:3])
    t = params[3:6]
    pc = X @ R.T + t
    z = np.where(np.abs(pc[:, 2]) > EPS_DEPTH, pc[:, 2], EPS_DEPTH)
    q = pc @ K.T
    proj = q[:, :2] / z[:, None]
    return (proj - x).ravel()


def _refine_pose(K, X, x, r0, t0):
    res = scipy.optimize.least_squares(
        _reprojection_residuals, np.concatenate([r0, t0]),
        args=(K, X, x), method="lm", xtol=1e-14, ftol=1e-14, gtol=1e-14)
    return res.x[:3], res.x[3:6], res.fun


def resect(correspondences, known_K=None):
    """Camera pose (and optionally calibration) from 3D-2D correspondences.

    Parameters
    ----------
    correspondences : sequence of (3-vector global mm, 2-vector pixel)
    known_K : optional 3x3 calibration. With unknown K a full DLT needs
        >= 6 non-coplanar points; with known K >= 4 points suffice (planar
        configurations allowed) via direct reprojection minimization.

    Returns
    -------
    (CameraModel, mean reprojection error in px)
    """
    X = np.asarray([c[0] for c in correspondences], dtype=float)
    x = np.asarray([c[1] for c in correspondences], dtype=float)
    n = len(X)

    if known_K is None:
        if n < 6:
            raise InsufficientPoints(f"DLT with unknown K needs >= 6 points, got {n}")
        if _coplanarity_score(X) < 1e-8:
            raise DegenerateConfiguration("points are coplanar; unknown-K DLT is degenerate")
        P = _dlt_projection(X, x)
        cam = decompose_projection(P)
        # check cheirality; flip if the DLT solution put points behind the camera
        pc = apply(cam.pose_global, X)
        if np.median(pc[:, 2]) < 0:
            cam = decompose_projection(-P)
        K = cam.calibration
        r0 = matrix_to_rodrigues(cam.pose_global.rotation)
        t0 = cam.pose_global.translation
        r, t, fun = _refine_pose(K, X, x, r0, t0)
    else:
        K = np.asarray(known_K, dtype=float)
        if n < 4:
            raise InsufficientPoints(f"known-K resection needs >= 4 points, got {n}")
        r, t, fun = _resect_known_k(K, X, x)

    cam = CameraModel(K / K[2, 2], RigidTransform(rodrigues_to_matrix(r), t))
    mean_err = float(np.sqrt((fun.reshape(-1, 2) ** 2).sum(axis=1)).mean())
    return cam, mean_err


def _resect_known_k(K, X, x):
    """Known-calibration pose: DLT start when possible, else multi-start LM."""
    starts = []
    if len(X) >= 6 and _coplanarity_score(X) >= 1e-8:
        try:
            cam = decompose_projection(_dlt_projection(X, x))
            starts.append((matrix_to_rodrigues(cam.pose_global.rotation),
                           cam.pose_global.translation))
        except SingularCamera:
            pass
    # deterministic coarse starts: axis-aligned viewing directions at a
    # depth guessed from the point spread
    centroid = X.mean(axis=0)
    spread = max(np.linalg.norm(X - centroid, axis=1).max(), 1.0)
    f = 0.5 * (K[0, 0] + K[1, 1])
    px_spread = max(np.linalg.norm(x - x.mean(axis=0), axis=1).max(), 1.0)
    depth = f * spread / px_spread
    for rv in _COARSE_ROTATIONS:
        R = rodrigues_to_matrix(rv)
        t = np.array([0.0, 0.0, depth]) - R @ centroid
        starts.append((rv, t))

    best = None
    for r0, t0 in starts:
        try:
            r, t, fun = _refine_pose(K, X, x, np.asarray(r0, float), np.asarray(t0, float))
        except Exception:
            continue
        cost = float(fun @ fun)
        pc = X @ rodrigues_to_matrix(r).T + t
        if np.min(pc[:, 2]) <= 0:
            cost += 1e12  # reject mirror solutions behind the camera
        if best is None or cost < best[0]:
            best = (cost, r, t, fun)
    if best is None:
        raise DegenerateConfiguration("known-K resection failed from every start")
    return best[1], best[2], best[3]


_COARSE_ROTATIONS = [
    np.zeros(3),
    np.array([np.pi / 2, 0, 0]), np.array([-np.pi / 2, 0, 0]),
    np.array([0, np.pi / 2, 0]), np.array([0, -np.pi / 2, 0]),
    np.array([np.pi, 0, 0]), np.array([0, np.pi, 0]),
    np.array([np.pi / 4, np.pi / 4, 0]), np.array([-np.pi / 4, 0, np.pi / 4]),
]


# ---------------------------------------------------------------------------
# Triangulation
# ---------------------------------------------------------------------------

MIN_TRIANGULATION_ANGLE_DEG = 0.1


def triangulate(observations):
    """Intersect viewing rays from >= 2 cameras.

    Parameters
    ----------
    observations : sequence of (CameraModel, 2-vector pixel)

    Returns
    -------
    (3-vector global mm, per-camera residual array in px)

    Raises ParallelRays when fewer than two cameras are given or every ray
    pair subtends less than 0.1 degrees.
    """
    if len(observations) < 2:
        raise ParallelRays(f"triangulation needs >= 2 cameras, got {len(observations)}")
    centers, dirs = [], []
    for cam, px in observations:
        H = cam.pose_global
        d = H.rotation.T @ np.linalg.solve(cam.calibration,
                                           np.array([px[0], px[1], 1.0]))
        dirs.append(d / np.linalg.norm(d))
        centers.append(cam.center())
    dirs = np.asarray(dirs)
    max_angle = 0.0
    for i in range(len(dirs)):
        for j in range(i + 1, len(dirs)):
            c = np.clip(abs(dirs[i] @ dirs[j]), -1.0, 1.0)
            max_angle = max(max_angle, np.degrees(np.arccos(c)))
    if max_angle < MIN_TRIANGULATION_ANGLE_DEG:
        raise ParallelRays(f"max triangulation angle {max_angle:.4f} deg < "
                           f"{MIN_TRIANGULATION_ANGLE_DEG} deg")

    # linear DLT on normalized image coordinates
    A = []
    for cam, px in observations:
        P = np.linalg.solve(cam.calibration, cam.projection_matrix())
        m = np.linalg.solve(cam.calibration, np.array([px[0], px[1], 1.0]))
        A.append(m[0] * P[2] - m[2] * P[0])
        A.append(m[1] * P[2] - m[2] * P[1])
    A = np.asarray(A)
    _, _, Vt = np.linalg.svd(A)
    Xh = Vt[-1]
    if abs(Xh[3]) < 1e-14:
        raise ParallelRays("point at infinity; rays effectively parallel")
    X0 = Xh[:3] / Xh[3]

    def residuals(X):
        out = []
        for cam, px in observations:
            pc = apply(cam.pose_global, X)
            z = pc[2] if abs(pc[2]) > EPS_DEPTH else EPS_DEPTH
            q = cam.calibration @ pc
            out.extend(q[:2] / z - px)
        return np.asarray(out)

    res = scipy.optimize.least_squares(residuals, X0, method="lm",
                                       xtol=1e-14, ftol=1e-14, gtol=1e-14)
    per_cam = np.sqrt((res.fun.reshape(-1, 2) ** 2).sum(axis=1))
    return res.x, per_cam


def triangulate_linear(observations, min_angle_deg=MIN_TRIANGULATION_ANGLE_DEG):
    """DLT-only triangulation (no iterative refinement); returns the point or
    None for parallel/degenerate ray bundles. Fast path for initialization."""
    if len(observations) < 2:
        return None
    dirs = []
    for cam, px in observations:
        d = cam.pose_global.rotation.T @ np.linalg.solve(
            cam.calibration, np.array([px[0], px[1], 1.0]))
        dirs.append(d / np.linalg.norm(d))
    ok = False
    for i in range(len(dirs)):
        for j in range(i + 1, len(dirs)):
            c = np.clip(abs(dirs[i] @ dirs[j]), -1.0, 1.0)
            if np.degrees(np.arccos(c)) >= min_angle_deg:
                ok = True
    if not ok:
        return None
    A = []
    for cam, px in observations:
        P = np.linalg.solve(cam.calibration, cam.projection_matrix())
        m = np.linalg.solve(cam.calibration, np.array([px[0], px[1], 1.0]))
        A.append(m[0] * P[2] - m[2] * P[0])
        A.append(m[1] * P[2] - m[2] * P[1])
    _, _, Vt = np.linalg.svd(np.asarray(A))
    Xh = Vt[-1]
    if abs(Xh[3]) < 1e-14:
        return None
    return Xh[:3] / Xh[3]


# ---------------------------------------------------------------------------
# Camera file IO
# ---------------------------------------------------------------------------

def camera_to_dict(cam: CameraModel) -> dict:
    d = {
        "id": int(cam.id),
        "K": [float(v) for v in cam.calibration.ravel()],
        "R": [float(v) for v in cam.pose_global.rotation.ravel()],
        "t": [float(v) for v in cam.pose_global.translation],
    }
    if cam.image_size is not None:
        d["image_size"] = [int(cam.image_size[0]), int(cam.image_size[1])]
    return d


def camera_from_dict(d: dict) -> CameraModel:
    for key, length in (("id", None), ("K", 9), ("R", 9), ("t", 3)):
        if key not in d:
            raise SchemaError(f"camera record missing field '{key}'")
        if length is not None and len(d[key]) != length:
            raise SchemaError(f"camera field '{key}' must have {length} numbers")
    size = tuple(d["image_size"]) if "image_size" in d else None
    return CameraModel(np.array(d["K"], dtype=float).reshape(3, 3),
                       RigidTransform(np.array(d["R"], dtype=float).reshape(3, 3),
                                      np.array(d["t"], dtype=float)),
                       id=int(d["id"]), image_size=size)


def save_cameras(cams, path):
    with open(path, "w") as f:
        json.dump([camera_to_dict(c) for c in cams], f, indent=1, sort_keys=True)


def load_cameras(path):
    try:
        with open(path) as f:
            data = json.load(f)
    except FileNotFoundError:
        raise SchemaError(f"camera file not found: {path}")
    except json.JSONDecodeError as e:
        raise SchemaError(f"{path}: invalid JSON: {e.msg}")
    if not isinstance(data, list):
        raise SchemaError("camera file must be a JSON list of camera records")
    return [camera_from_dict(d) for d in data]
