"""Global nonlinear least-squares estimation of the per-epoch 6-DoF body
trajectory from all cameras and epochs.

The cost combines per-observation reprojection residuals (rigid body parts,
or deformation-predicted parts) with per-epoch motion-track smoothness
residuals. Unknowns are six pose parameters per epoch; the smoothness window
couples five consecutive epochs, so the normal matrix is block-banded and
the system is solved sparsely. Camera poses are fixed throughout.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse
import scipy.sparse.linalg

from . import deform_predictor, geometry, mouse_model, track_constraint
from .errors import (
    EpochMismatch,
    InconsistentCameraIds,
    NonFiniteCost,
    NoSolvableEpoch,
    ParallelRays,
    SchemaError,
)
from .geometry import PoseVector


@dataclass(frozen=True)
class StochasticConfig:
    """Two-tier observation weights plus the smoothness weight.

    sigma_px_geometric reflects pure body-part localization accuracy
    (deformation modeled explicitly); sigma_px_deformation additionally
    absorbs unmodeled body deformation as inflated noise.
    smoothness_weight converts grid displacements (mm) into residual units.
    """

    sigma_px_geometric: float = 0.5
    sigma_px_deformation: float = 3.0
    smoothness_weight: float = 1e-3

    def __post_init__(self):
        if self.sigma_px_geometric <= 0 or self.sigma_px_deformation <= 0:
            raise ValueError("sigmas must be > 0")


@dataclass
class MouseStateTrack:
    """Per-epoch pose estimates with provenance flags."""

    poses: list                       # PoseVector per epoch
    solved_from: list                 # 'local' | 'interpolated' | 'adjusted'
    residual_rms: np.ndarray | None = None

    @property
    def n_epochs(self):
        return len(self.poses)

    def as_array(self):
        return np.array([p.as_array() for p in self.poses])

    @staticmethod
    def from_array(x, solved_from=None):
        x = np.asarray(x, dtype=float).reshape(-1, 6)
        flags = solved_from or ["adjusted"] * len(x)
        return MouseStateTrack([PoseVector.from_array(row) for row in x],
                               list(flags))


@dataclass
class SolveReport:
    initial_cost: float
    final_cost: float
    iterations: int
    converged: bool
    status: str
    reprojection_rms_px: float
    smoothness_rms_mm: float


# ---------------------------------------------------------------------------
# Rigid registration (model -> world) for initialization
# ---------------------------------------------------------------------------

def fit_rigid(model_pts, world_pts):
    """Closed-form least-squares rigid transform mapping model points onto
    world points (cross-covariance SVD with reflection guard)."""
    A = np.asarray(model_pts, dtype=float)
    B = np.asarray(world_pts, dtype=float)
    ca, cb = A.mean(axis=0), B.mean(axis=0)
    Hm = (A - ca).T @ (B - cb)
    U, _, Vt = np.linalg.svd(Hm)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    R = Vt.T @ np.diag([1.0, 1.0, d]) @ U.T
    t = cb - R @ ca
    return geometry.RigidTransform(R, t)


def initialize(dataset, cameras=None, min_parts=3) -> MouseStateTrack:
    """Per-epoch initialization from local observations.

    Parts visible in >= 2 cameras are triangulated; epochs with at least
    `min_parts` non-collinear triangulated parts get a closed-form rigid fit
    of the model. Remaining epochs are linearly interpolated between solved
    neighbors (nearest solved state at the track ends).
    """
    cameras = cameras if cameras is not None else dataset.cameras
    model_pts = mouse_model.RigidMouseModel().rigid_part_positions()
    T = dataset.n_epochs
    poses = [None] * T
    flags = ["interpolated"] * T
    for t in range(T):
        tri_model, tri_world = [], []
        for i in range(8):
            views = [(cameras[k], dataset.observations[t, k, i])
                     for k in range(len(cameras)) if dataset.visible[t, k, i]]
            if len(views) < 2:
                continue
            X = geometry.triangulate_linear(views)
            if X is None:
                continue
            tri_model.append(model_pts[i])
            tri_world.append(X)
        if len(tri_model) >= min_parts:
            A = np.asarray(tri_model)
            s = np.linalg.svd(A - A.mean(axis=0), compute_uv=False)
            if s[1] > 1e-6 * max(s[0], 1.0):  # reject collinear sets
                H = fit_rigid(A, np.asarray(tri_world))
                poses[t] = geometry.transform_to_pose(H)
                flags[t] = "local"
    solved = [t for t in range(T) if poses[t] is not None]
    if not solved:
        raise NoSolvableEpoch("no epoch has enough triangulated parts for a local fit")

    # linear interpolation of the six parameters on an unwrapped branch
    rv = track_constraint.unwrap_rodrigues(
        [poses[t].rodrigues for t in solved], strict=False)
    params = np.zeros((T, 6))
    sol_params = np.array([np.concatenate([r, poses[t].translation])
                           for r, t in zip(rv, solved)])
    for j in range(6):
        params[:, j] = np.interp(np.arange(T), solved, sol_params[:, j])
    track = MouseStateTrack([PoseVector.from_array(p) for p in params], flags)
    return track


# ---------------------------------------------------------------------------
# Problem construction
# ---------------------------------------------------------------------------

class Problem:
    """Stacked residual system over all epochs.

    Reprojection blocks: one per visible (epoch, camera, part) observation,
    residual (projected - observed) / sigma. Smoothness blocks: one per
    epoch, residual smoothness_weight * grid displacements between the
    epoch's pose and the cubic recombination of its window neighbors.
    """

    def __init__(self, dataset, cameras, model_points, stochastic, sigma_px,
                 grid=None, kind="rigid_reprojection"):
        self.n_epochs = dataset.n_epochs
        self.stochastic = stochastic
        self.sigma_px = float(sigma_px)
        self.kind = kind
        self.grid = grid if grid is not None else track_constraint.default_grid()

        cam_ids = sorted(c.id for c in cameras)
        if cam_ids != list(range(len(cameras))) or len(cameras) != dataset.visible.shape[1]:
            raise InconsistentCameraIds(
                f"camera ids {cam_ids} inconsistent with dataset's "
                f"{dataset.visible.shape[1]} camera slots")
        cams = sorted(cameras, key=lambda c: c.id)
        self.cam_R = np.stack([c.pose_global.rotation for c in cams])
        self.cam_t = np.stack([c.pose_global.translation for c in cams])
        self.cam_K = np.stack([c.calibration for c in cams])

        t_idx, k_idx, i_idx, obs = [], [], [], []
        T, K = dataset.visible.shape[:2]
        for t in range(T):
            for k in range(K):
                for i in range(8):
                    if dataset.visible[t, k, i]:
                        t_idx.append(t)
                        k_idx.append(k)
                        i_idx.append(i)
                        obs.append(dataset.observations[t, k, i])
        self.obs_t = np.asarray(t_idx, dtype=int)
        self.obs_k = np.asarray(k_idx, dtype=int)
        self.obs_i = np.asarray(i_idx, dtype=int)
        self.obs_px = np.asarray(obs, dtype=float).reshape(-1, 2)
        # model-frame point projected for each observation (rigid coordinates,
        # or rigid + predicted offsets in deformed mode)
        mp = np.asarray(model_points, dtype=float)
        if mp.ndim == 2:  # (8, 3), same at every epoch
            self.obs_model_pts = mp[self.obs_i]
        else:             # (T, 8, 3)
            self.obs_model_pts = mp[self.obs_t, self.obs_i]

        # smoothness windows
        self.windows = [track_constraint.interpolation_window(t, T)
                        for t in range(T)]
        self.n_obs = len(self.obs_t)
        self.n_residuals = 2 * self.n_obs + 3 * self.grid.n_points * T
        self.n_params = 6 * T

    def block_counts(self):
        return {self.kind: self.n_obs, "track_smoothness": self.n_epochs}

    # -- residuals ----------------------------------------------------------

    def residuals(self, x):
        x = np.asarray(x, dtype=float).reshape(self.n_epochs, 6)
        return np.concatenate([self._reproj_residuals(x),
                               self._smooth_residuals(x)])

    def _reproj_residuals(self, x):
        if self.n_obs == 0:
            return np.zeros(0)
        R = geometry.rodrigues_to_matrix(x[:, :3])
        world = (np.einsum("nij,nj->ni", R[self.obs_t], self.obs_model_pts)
                 + x[self.obs_t, 3:])
        pc = (np.einsum("nij,nj->ni", self.cam_R[self.obs_k], world)
              + self.cam_t[self.obs_k])
        q = np.einsum("nij,nj->ni", self.cam_K[self.obs_k], pc)
        z = np.where(np.abs(q[:, 2]) > geometry.EPS_DEPTH, q[:, 2],
                     geometry.EPS_DEPTH)
        proj = q[:, :2] / z[:, None]
        return ((proj - self.obs_px) / self.sigma_px).ravel()

    def _smooth_pose_pairs(self, x):
        """Per-epoch (H params, interpolated S params)."""
        out = np.zeros((self.n_epochs, 2, 6))
        for t in range(self.n_epochs):
            nodes, w = self.windows[t]
            out[t, 0] = x[t]
            out[t, 1] = w @ x[nodes]
        return out

    def _smooth_residuals(self, x):
        g = self.grid.points
        w_s = self.stochastic.smoothness_weight
        pairs = self._smooth_pose_pairs(x)
        res = np.zeros((self.n_epochs, len(g), 3))
        RH = geometry.rodrigues_to_matrix(pairs[:, 0, :3])
        RS = geometry.rodrigues_to_matrix(pairs[:, 1, :3])
        for t in range(self.n_epochs):
            y = (g - pairs[t, 1, 3:]) @ RS[t]       # R_S^T (g - t_S)
            res[t] = y @ RH[t].T + pairs[t, 0, 3:] - g
        return (w_s * res).ravel()

    def cost(self, x):
        r = self.residuals(x)
        return float(r @ r)

    # -- analytic Jacobian ----------------------------------------------------

    def jacobian(self, x):
        """Sparse (n_residuals, n_params) Jacobian at x."""
        x = np.asarray(x, dtype=float).reshape(self.n_epochs, 6)
        rows, cols, vals = [], [], []

        if self.n_obs > 0:
            rvec = x[self.obs_t, :3]
            R = geometry.rodrigues_to_matrix(x[:, :3])
            world = (np.einsum("nij,nj->ni", R[self.obs_t], self.obs_model_pts)
                     + x[self.obs_t, 3:])
            Rc = self.cam_R[self.obs_k]
            Kc = self.cam_K[self.obs_k]
            pc = np.einsum("nij,nj->ni", Rc, world) + self.cam_t[self.obs_k]
            q = np.einsum("nij,nj->ni", Kc, pc)
            z = np.where(np.abs(q[:, 2]) > geometry.EPS_DEPTH, q[:, 2],
                         geometry.EPS_DEPTH)
            # d(proj)/d(pc): (u, v) = (q0/q2, q1/q2), q = K pc
            A = Kc[:, :2, :] * z[:, None, None] - q[:, :2, None] * Kc[:, 2:3, :]
            Jproj = A / (z ** 2)[:, None, None]           # (n, 2, 3)
            Jworld = np.einsum("nab,nbc->nac", Jproj, Rc)  # (n, 2, 3)
            Jrot = geometry.rotation_point_jacobians(rvec, self.obs_model_pts)
            Jr = np.einsum("nab,nbc->nac", Jworld, Jrot)   # (n, 2, 3)
            Jblock = np.concatenate([Jr, Jworld], axis=2) / self.sigma_px
            n = self.n_obs
            rr = (2 * np.arange(n))[:, None, None] + np.array([0, 1])[None, :, None]
            cc = (6 * self.obs_t)[:, None, None] + np.arange(6)[None, None, :]
            rows.append(np.broadcast_to(rr, (n, 2, 6)).ravel())
            cols.append(np.broadcast_to(cc, (n, 2, 6)).ravel())
            vals.append(Jblock.ravel())

        # smoothness blocks
        g = self.grid.points
        ng = len(g)
        w_s = self.stochastic.smoothness_weight
        base = 2 * self.n_obs
        pairs = self._smooth_pose_pairs(x)
        RH = geometry.rodrigues_to_matrix(pairs[:, 0, :3])
        RS = geometry.rodrigues_to_matrix(pairs[:, 1, :3])
        for t in range(self.n_epochs):
            rH, tH = pairs[t, 0, :3], pairs[t, 0, 3:]
            rS, tS = pairs[t, 1, :3], pairs[t, 1, 3:]
            c = g - tS
            y = c @ RS[t]                                   # R_S^T c
            JH = np.zeros((ng, 3, 6))
            JH[:, :, :3] = geometry.rotation_point_jacobians(
                np.broadcast_to(rH, (ng, 3)), y)
            JH[:, :, 3:] = np.eye(3)
            # d(R_S^T c)/d r_S = -J_rot(-r_S, c); premultiplied by R_H
            JS = np.zeros((ng, 3, 6))
            JyrS = -geometry.rotation_point_jacobians(
                np.broadcast_to(-rS, (ng, 3)), c)
            JS[:, :, :3] = np.einsum("ab,nbc->nac", RH[t], JyrS)
            JS[:, :, 3:] = -(RH[t] @ RS[t].T)[None, :, :]

            nodes, w = self.windows[t]
            row0 = base + 3 * ng * t
            rr = row0 + np.arange(3 * ng)
            # own-epoch block
            rows.append(np.repeat(rr, 6))
            cols.append(np.tile(6 * t + np.arange(6), 3 * ng))
            vals.append((w_s * JH).reshape(3 * ng, 6).ravel())
            for node, wj in zip(nodes, w):
                rows.append(np.repeat(rr, 6))
                cols.append(np.tile(6 * node + np.arange(6), 3 * ng))
                vals.append((w_s * wj * JS).reshape(3 * ng, 6).ravel())

        J = scipy.sparse.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.n_residuals, self.n_params))
        return J.tocsr()

    def residual_rms(self, x):
        """(reprojection RMS in px, smoothness RMS in mm) at x."""
        x = np.asarray(x, dtype=float).reshape(self.n_epochs, 6)
        rp = self._reproj_residuals(x) * self.sigma_px
        w_s = self.stochastic.smoothness_weight
        sm = self._smooth_residuals(x) / w_s if w_s > 0 else np.zeros(1)
        rp_rms = float(np.sqrt((rp ** 2).mean())) if rp.size else 0.0
        return rp_rms, float(np.sqrt((sm ** 2).mean()))


def build_problem(dataset, cameras, track=None, deform_model=None,
                  stochastic: StochasticConfig | None = None, grid=None,
                  deform_offsets=None) -> Problem:
    """Assemble the residual system for a dataset.

    Without a deformation model every observation becomes a rigid
    reprojection block weighted by sigma_px_deformation (body deformation
    treated as noise). With one, per-epoch offsets are predicted (or passed
    in via `deform_offsets`) and blocks use sigma_px_geometric.
    """
    stochastic = stochastic or StochasticConfig()
    model_pts = mouse_model.RigidMouseModel().rigid_part_positions()
    if deform_model is None and deform_offsets is None:
        return Problem(dataset, cameras, model_pts, stochastic,
                       stochastic.sigma_px_deformation, grid=grid,
                       kind="rigid_reprojection")
    if deform_offsets is None:
        if track is None:
            raise ValueError("deformed mode needs a current track estimate")
        deform_offsets = predict_offsets(dataset, cameras, track, deform_model)
    pts = model_pts[None, :, :] + deform_offsets
    return Problem(dataset, cameras, pts, stochastic,
                   stochastic.sigma_px_geometric, grid=grid,
                   kind="deformed_reprojection")


def predict_offsets(dataset, cameras, track: MouseStateTrack, model,
                    min_cameras=2):
    """Per-epoch model-frame deformation offsets predicted from observations.

    Parts visible in >= min_cameras cameras are triangulated and mapped into
    the model frame via the current pose estimates; the resulting token
    windows feed the sequence model. Epochs whose window does not fit inside
    the track get zero offsets.
    """
    T = dataset.n_epochs
    n = model.window
    rigid = mouse_model.RigidMouseModel().rigid_part_positions()
    est = np.broadcast_to(rigid, (T, 8, 3)).copy()
    have = np.zeros((T, 8), dtype=bool)
    for t in range(T):
        inv = geometry.invert(geometry.pose_to_transform(track.poses[t]))
        for i in range(8):
            views = [(cameras[k], dataset.observations[t, k, i])
                     for k in range(len(cameras)) if dataset.visible[t, k, i]]
            if len(views) < min_cameras:
                continue
            X = geometry.triangulate_linear(views)
            if X is None:
                continue
            est[t, i] = geometry.apply(inv, X)
            have[t, i] = True

    offsets = np.zeros((T, 8, 3))
    win = 2 * n + 1
    for t in range(n, T - n):
        epochs = np.arange(t - n, t + n + 1)
        rig = np.broadcast_to(rigid, (win, 8, 3)).copy()
        masked = ~have[epochs]
        masked[n, :] = True
        deformable = np.where(masked[:, :, None], rig, est[epochs])
        seq = deform_predictor.TokenSequence(epochs, rig, deformable, masked)
        offsets[t] = model.predict(seq) - rigid
    return offsets


# ---------------------------------------------------------------------------
# Levenberg-Marquardt
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SolveOptions:
    max_iterations: int = 100
    cost_tolerance: float = 1e-10   # relative cost decrease
    gradient_tolerance: float = 1e-10
    initial_lambda: float = 1e-6
    lambda_up: float = 10.0
    lambda_down: float = 10.0


def solve(problem: Problem, track: MouseStateTrack,
          options: SolveOptions | None = None):
    """Levenberg-Marquardt on the banded sparse system.

    Accepted steps never increase the cost. Returns (MouseStateTrack,
    SolveReport); on hitting the iteration cap the best iterate is returned
    with status 'max_iterations'.
    """
    options = options or SolveOptions()
    x = track.as_array().ravel().copy()
    r = problem.residuals(x)
    cost = float(r @ r)
    if not np.isfinite(cost):
        raise NonFiniteCost("initial cost is not finite")
    initial_cost = cost
    lam = options.initial_lambda
    status = "converged"
    converged = False
    it = 0
    for it in range(1, options.max_iterations + 1):
        J = problem.jacobian(x)
        g = J.T @ r
        if np.max(np.abs(g)) < options.gradient_tolerance:
            converged = True
            break
        JtJ = (J.T @ J).tocsc()
        diag = JtJ.diagonal()
        scale = np.maximum(diag, 1e-12)
        accepted = False
        while not accepted:
            A = JtJ + scipy.sparse.diags(lam * scale)
            try:
                delta = scipy.sparse.linalg.spsolve(A, -g)
            except RuntimeError:
                lam *= options.lambda_up
                continue
            x_new = x + delta
            r_new = problem.residuals(x_new)
            cost_new = float(r_new @ r_new)
            if not np.isfinite(cost_new):
                raise NonFiniteCost(f"cost non-finite at iteration {it}")
            if cost_new < cost:
                rel = (cost - cost_new) / max(cost, 1e-300)
                x, r, cost = x_new, r_new, cost_new
                lam = max(lam / options.lambda_down, 1e-12)
                accepted = True
                if rel < options.cost_tolerance:
                    converged = True
            else:
                lam *= options.lambda_up
                if lam > 1e12:
                    # no downhill step exists at numerical precision
                    converged = True
                    accepted = True
        if converged:
            break
    else:
        status = "max_iterations"

    rp_rms, sm_rms = problem.residual_rms(x)
    report = SolveReport(initial_cost=initial_cost, final_cost=cost,
                         iterations=it, converged=converged, status=status,
                         reprojection_rms_px=rp_rms, smoothness_rms_mm=sm_rms)
    flags = ["adjusted"] * problem.n_epochs
    out = MouseStateTrack.from_array(x.reshape(-1, 6), flags)
    # per-epoch reprojection residual rms
    rr = problem._reproj_residuals(x.reshape(-1, 6)) * problem.sigma_px
    per_epoch = np.zeros(problem.n_epochs)
    if problem.n_obs:
        sq = (rr.reshape(-1, 2) ** 2).sum(axis=1)
        for t in range(problem.n_epochs):
            sel = problem.obs_t == t
            if sel.any():
                per_epoch[t] = np.sqrt(sq[sel].mean())
    out.residual_rms = per_epoch
    return out, report


def check_jacobian(problem: Problem, track: MouseStateTrack, step=1e-6):
    """Worst relative deviation between the analytic Jacobian and central
    finite differences over all pose parameters."""
    x = track.as_array().ravel()
    J = problem.jacobian(x).toarray()
    J_fd = np.zeros_like(J)
    for j in range(len(x)):
        xp, xm = x.copy(), x.copy()
        xp[j] += step
        xm[j] -= step
        J_fd[:, j] = (problem.residuals(xp) - problem.residuals(xm)) / (2 * step)
    scale = max(np.abs(J).max(), 1.0)
    return float(np.abs(J - J_fd).max() / scale)


# ---------------------------------------------------------------------------
# High-level solve and track IO
# ---------------------------------------------------------------------------

def solve_dataset(dataset, cameras=None, mode="rigid", deform_model=None,
                  stochastic: StochasticConfig | None = None,
                  options: SolveOptions | None = None, outer_iterations=2):
    """Initialize and solve a dataset end to end.

    In deformed mode the offset prediction and the pose solve alternate for
    `outer_iterations` rounds (offsets held fixed within each LM solve).
    """
    cameras = cameras if cameras is not None else dataset.cameras
    stochastic = stochastic or StochasticConfig()
    init = initialize(dataset, cameras)
    if mode == "rigid":
        problem = build_problem(dataset, cameras, stochastic=stochastic)
        track, report = solve(problem, init, options)
    elif mode == "deformed":
        if deform_model is None:
            raise ValueError("deformed mode requires a trained deform_model")
        track, report = init, None
        for _ in range(max(outer_iterations, 1)):
            problem = build_problem(dataset, cameras, track=track,
                                    deform_model=deform_model,
                                    stochastic=stochastic)
            track, report = solve(problem, track, options)
    else:
        raise ValueError(f"unknown mode '{mode}'")
    # provenance: epochs with no observations are never constrained, and
    # without smoothness coupling the locally deficient ones stay guesses
    for t in range(dataset.n_epochs):
        if not dataset.visible[t].any():
            track.solved_from[t] = "interpolated"
        elif (stochastic.smoothness_weight == 0
              and init.solved_from[t] == "interpolated"):
            track.solved_from[t] = "interpolated"
    return track, report


def save_track(track: MouseStateTrack, path):
    records = []
    for t, p in enumerate(track.poses):
        rec = {
            "t": t,
            "rodrigues": [float(v) for v in p.rodrigues],
            "translation_mm": [float(v) for v in p.translation],
            "solved_from": track.solved_from[t],
        }
        if track.residual_rms is not None:
            rec["residual_rms"] = float(track.residual_rms[t])
        records.append(rec)
    with open(path, "w") as f:
        json.dump(records, f, sort_keys=True, separators=(",", ":"))


def load_track(path) -> MouseStateTrack:
    try:
        with open(path) as f:
            records = json.load(f)
    except FileNotFoundError:
        raise SchemaError(f"track file not found: {path}")
    except json.JSONDecodeError as e:
        raise SchemaError(f"{path}: invalid JSON: {e.msg}")
    if not isinstance(records, list):
        raise SchemaError("track file must be a JSON list of epoch records")
    records = sorted(records, key=lambda r: r["t"])
    poses, flags, rms = [], [], []
    for rec in records:
        for key in ("t", "rodrigues", "translation_mm"):
            if key not in rec:
                raise SchemaError(f"track record missing field '{key}'")
        poses.append(PoseVector(np.array(rec["rodrigues"]),
                                np.array(rec["translation_mm"])))
        flags.append(rec.get("solved_from", "adjusted"))
        rms.append(rec.get("residual_rms", 0.0))
    track = MouseStateTrack(poses, flags)
    track.residual_rms = np.asarray(rms)
    return track
