"""Ground-truth scene simulator.

Generates a 2D Brownian body track on a table plane, deforms the mouse model
per epoch (pace gait + head nodding), projects every part into every camera,
adds Gaussian pixel noise, and drops observations (random dropout plus
image-bounds test). Everything is reproducible from the config seed; pixel
noise and dropout use per-epoch derived RNG streams so epoch rendering is
order-independent.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from . import geometry, mouse_model
from .errors import CameraSeesNothing, SchemaError
from .geometry import CameraModel, PoseVector, RigidTransform


@dataclass(frozen=True)
class OcclusionConfig:
    random_dropout_rate: float = 0.0
    min_visible_floor: int = 0  # informational; no artificial rescue


@dataclass(frozen=True)
class SceneConfig:
    cameras: tuple
    plane_extent_mm: float = 500.0   # track confined to [-e, e]^2 on z = 0
    seed: int = 0
    n_epochs: int = 100
    step_sigma_mm: float = 1.0
    heading_smoothing: float = 0.3
    noise_sigma_px: float = 0.5
    occlusion: OcclusionConfig = field(default_factory=OcclusionConfig)
    gait_cycle_length: int = 10
    deformation_enabled: bool = True

    def __post_init__(self):
        if len(self.cameras) < 2:
            raise ValueError("scene needs at least 2 cameras")
        if self.n_epochs < 5:
            raise ValueError("n_epochs must be >= 5 (spline window)")
        object.__setattr__(self, "cameras", tuple(self.cameras))


@dataclass
class SimulatedDataset:
    """Per-epoch ground truth plus per-camera observations.

    observations[t, k, i] = (u, v); visible[t, k, i] boolean; pixels of
    invisible observations are NaN (never stored on export). noise holds the
    exact Gaussian perturbation applied to each visible pixel for audit.
    """

    config: SceneConfig
    poses: list                      # n_epochs PoseVectors (ground truth)
    rigid_world: np.ndarray          # (T, 8, 3) world rigid part positions
    deformable_world: np.ndarray     # (T, 8, 3) world deformed part positions
    deform_offsets: np.ndarray       # (T, 8, 3) model-frame offsets
    observations: np.ndarray         # (T, K, 8, 2) pixels, NaN if invisible
    visible: np.ndarray              # (T, K, 8) bool
    noise: np.ndarray                # (T, K, 8, 2) applied pixel noise

    @property
    def n_epochs(self):
        return len(self.poses)

    @property
    def cameras(self):
        return self.config.cameras

    def tuples(self):
        """Eq.-style dataset tuples: per epoch t, per part i the rigid and
        deformable model-frame coordinates."""
        rigid = mouse_model.RigidMouseModel().rigid_part_positions()
        out = []
        for t in range(self.n_epochs):
            parts = [(i, rigid[i].copy(), rigid[i] + self.deform_offsets[t, i])
                     for i in range(8)]
            out.append((t, parts))
        return out

    def visible_part_counts(self):
        """(T, K) number of visible parts per epoch and camera."""
        return self.visible.sum(axis=2)

    def locally_solvable(self, min_parts=3):
        """(T,) bool: some camera sees more than `min_parts` - 1 parts...
        an epoch counts as locally solvable when at least one camera sees
        more than `min_parts` parts (strictly more than three by default,
        matching the per-frame resection requirement)."""
        return (self.visible_part_counts() > min_parts).any(axis=1)


def default_cameras(distance_mm=1200.0, focal_px=1500.0,
                    image_size=(1280, 1024)):
    """Three-camera rig at roughly 90 degree separation: top, side, front.

    All cameras look at the origin of the table plane (z = 0).
    """
    w, h = image_size
    K = np.array([[focal_px, 0.0, w / 2.0],
                  [0.0, focal_px, h / 2.0],
                  [0.0, 0.0, 1.0]])
    centers = [
        np.array([0.0, 0.0, distance_mm]),       # top
        np.array([distance_mm, 0.0, 300.0]),     # side
        np.array([0.0, -distance_mm, 300.0]),    # front
    ]
    cams = []
    for k, c in enumerate(centers):
        z_axis = -c / np.linalg.norm(c)  # look at the origin
        up = np.array([0.0, 1.0, 0.0]) if abs(z_axis[2]) > 0.9 else np.array([0.0, 0.0, 1.0])
        x_axis = np.cross(up, z_axis)
        x_axis /= np.linalg.norm(x_axis)
        y_axis = np.cross(z_axis, x_axis)
        R = np.vstack([x_axis, y_axis, z_axis])
        t = -R @ c
        cams.append(CameraModel(K, RigidTransform(R, t), id=k, image_size=(w, h)))
    return tuple(cams)


def _reflect(value, lo, hi):
    """Reflect a scalar into [lo, hi]."""
    span = hi - lo
    v = (value - lo) % (2 * span)
    return lo + (span - abs(v - span))


def generate_track(config: SceneConfig):
    """Ground-truth body poses: 2D Brownian positions reflected at the plane
    borders, yaw-only heading smoothed from the motion direction, and a fixed
    z so the resting paws touch the plane."""
    rng = np.random.default_rng(config.seed)
    T = config.n_epochs
    e = config.plane_extent_mm
    steps = rng.normal(0.0, config.step_sigma_mm, size=(T - 1, 2))
    xy = np.zeros((T, 2))
    for t in range(1, T):
        raw = xy[t - 1] + steps[t - 1]
        xy[t] = [_reflect(raw[0], -e, e), _reflect(raw[1], -e, e)]

    # paw rest height is the minimum model z; body origin sits above the plane
    z_body = -mouse_model.RigidMouseModel().rigid_part_positions()[:, 2].min()

    # heading: smoothed motion direction, yaw about z; model anterior is +Y
    alpha = config.heading_smoothing
    heading = 0.0
    poses = []
    for t in range(T):
        if t > 0:
            d = xy[t] - xy[t - 1]
            dist = np.linalg.norm(d)
            if dist > 1e-12:
                target = math.atan2(d[1], d[0]) - math.pi / 2.0
                delta = (target - heading + math.pi) % (2 * math.pi) - math.pi
                # turn toward the travel direction at a rate proportional to
                # distance covered (capped), so short steps barely steer
                heading = heading + alpha * min(1.0, dist) * delta
        poses.append(PoseVector(np.array([0.0, 0.0, heading]),
                                np.array([xy[t][0], xy[t][1], z_body])))
    return poses


def render(config: SceneConfig, track) -> SimulatedDataset:
    """Project the deformed model into every camera with noise and dropout."""
    T = len(track)
    cams = config.cameras
    K = len(cams)
    model = mouse_model.RigidMouseModel()

    # sanity: every camera must image some of the plane
    for cam in cams:
        probe = np.array([[0.0, 0.0, 0.0], [50.0, 0.0, 0.0], [0.0, 50.0, 0.0]])
        px, depth = geometry.project_many(cam, probe)
        if np.all(depth <= 0):
            raise CameraSeesNothing(f"camera {cam.id} never images the plane")

    offsets = np.zeros((T, 8, 3))
    rigid_world = np.zeros((T, 8, 3))
    deform_world = np.zeros((T, 8, 3))
    cycle = config.gait_cycle_length
    for t in range(T):
        if config.deformation_enabled:
            if t + 1 < T:
                speed = float(np.linalg.norm(track[t + 1].translation[:2]
                                             - track[t].translation[:2]))
            else:
                speed = float(np.linalg.norm(track[t].translation[:2]
                                             - track[t - 1].translation[:2]))
            state = mouse_model.deform(model, (t % cycle) / cycle, speed,
                                       cycle_length=cycle)
            offsets[t] = state.offsets
        rigid_world[t] = mouse_model.world_part_positions(track[t], None, model)
        deform_world[t] = rigid_world[t] + geometry.apply(
            geometry.RigidTransform(geometry.rodrigues_to_matrix(track[t].rodrigues),
                                    np.zeros(3)), offsets[t])

    obs = np.full((T, K, 8, 2), np.nan)
    vis = np.zeros((T, K, 8), dtype=bool)
    noise = np.zeros((T, K, 8, 2))
    drop_rate = config.occlusion.random_dropout_rate
    for t in range(T):
        # derived per-epoch stream keeps epoch rendering order-independent
        rng = np.random.default_rng([config.seed, t])
        eps = rng.normal(0.0, 1.0, size=(K, 8, 2)) * config.noise_sigma_px
        drops = rng.random(size=(K, 8)) < drop_rate
        for k, cam in enumerate(cams):
            px, depth = geometry.project_many(cam, deform_world[t])
            noisy = px + eps[k]
            in_front = depth > geometry.EPS_DEPTH
            if cam.image_size is not None:
                w, h = cam.image_size
                in_img = ((noisy[:, 0] >= 0) & (noisy[:, 0] < w)
                          & (noisy[:, 1] >= 0) & (noisy[:, 1] < h))
            else:
                in_img = np.ones(8, dtype=bool)
            keep = in_front & in_img & ~drops[k]
            vis[t, k] = keep
            obs[t, k, keep] = noisy[keep]
            noise[t, k, keep] = eps[k, keep]
    return SimulatedDataset(config=config, poses=list(track),
                            rigid_world=rigid_world,
                            deformable_world=deform_world,
                            deform_offsets=offsets,
                            observations=obs, visible=vis, noise=noise)


def simulate(config: SceneConfig) -> SimulatedDataset:
    return render(config, generate_track(config))


# ---------------------------------------------------------------------------
# Dataset file IO (lossless JSON round-trip incl. ground truth + noise audit)
# ---------------------------------------------------------------------------

def _config_to_dict(config: SceneConfig) -> dict:
    d = {
        "cameras": [geometry.camera_to_dict(c) for c in config.cameras],
        "plane_extent_mm": config.plane_extent_mm,
        "seed": config.seed,
        "n_epochs": config.n_epochs,
        "step_sigma_mm": config.step_sigma_mm,
        "heading_smoothing": config.heading_smoothing,
        "noise_sigma_px": config.noise_sigma_px,
        "occlusion": asdict(config.occlusion),
        "gait_cycle_length": config.gait_cycle_length,
        "deformation_enabled": config.deformation_enabled,
    }
    return d


def _config_from_dict(d: dict) -> SceneConfig:
    required = ["cameras", "seed", "n_epochs"]
    for key in required:
        if key not in d:
            raise SchemaError(f"scene config missing field '{key}'")
    cams = tuple(geometry.camera_from_dict(c) for c in d["cameras"])
    occ = OcclusionConfig(**d.get("occlusion", {}))
    return SceneConfig(
        cameras=cams,
        plane_extent_mm=d.get("plane_extent_mm", 500.0),
        seed=int(d["seed"]),
        n_epochs=int(d["n_epochs"]),
        step_sigma_mm=d.get("step_sigma_mm", 1.0),
        heading_smoothing=d.get("heading_smoothing", 0.3),
        noise_sigma_px=d.get("noise_sigma_px", 0.5),
        occlusion=occ,
        gait_cycle_length=int(d.get("gait_cycle_length", 10)),
        deformation_enabled=bool(d.get("deformation_enabled", True)),
    )


def export_dataset(dataset: SimulatedDataset, path):
    """Write a dataset to JSON. Invisible observations are not stored."""
    T, Kn = dataset.n_epochs, len(dataset.cameras)
    obs_records = []
    for t in range(T):
        for k in range(Kn):
            for i in range(8):
                if dataset.visible[t, k, i]:
                    obs_records.append([t, k, i,
                                        float(dataset.observations[t, k, i, 0]),
                                        float(dataset.observations[t, k, i, 1]),
                                        float(dataset.noise[t, k, i, 0]),
                                        float(dataset.noise[t, k, i, 1])])
    doc = {
        "meta": _config_to_dict(dataset.config),
        "ground_truth": {
            "poses": [{"t": t,
                       "rodrigues": [float(v) for v in p.rodrigues],
                       "translation_mm": [float(v) for v in p.translation]}
                      for t, p in enumerate(dataset.poses)],
            "deform_offsets_mm": np.round(dataset.deform_offsets, 9).tolist(),
        },
        "observations": {
            "columns": ["t", "k", "i", "u", "v", "noise_u", "noise_v"],
            "rows": obs_records,
        },
    }
    with open(path, "w") as f:
        json.dump(doc, f, sort_keys=True, separators=(",", ":"))


def import_dataset(path) -> SimulatedDataset:
    try:
        with open(path) as f:
            doc = json.load(f)
    except FileNotFoundError:
        raise SchemaError(f"dataset file not found: {path}")
    except json.JSONDecodeError as e:
        raise SchemaError(f"{path}: invalid JSON: {e.msg}")
    for key in ("meta", "ground_truth", "observations"):
        if key not in doc:
            raise SchemaError(f"dataset file missing field '{key}'")
    config = _config_from_dict(doc["meta"])
    gt = doc["ground_truth"]
    if "poses" not in gt:
        raise SchemaError("dataset ground_truth missing field 'poses'")
    poses = [PoseVector(np.array(p["rodrigues"]), np.array(p["translation_mm"]))
             for p in sorted(gt["poses"], key=lambda p: p["t"])]
    T = len(poses)
    Kn = len(config.cameras)
    offsets = np.array(gt.get("deform_offsets_mm", np.zeros((T, 8, 3)).tolist()))

    model = mouse_model.RigidMouseModel()
    rigid_world = np.zeros((T, 8, 3))
    deform_world = np.zeros((T, 8, 3))
    for t in range(T):
        rigid_world[t] = mouse_model.world_part_positions(poses[t], None, model)
        R = geometry.rodrigues_to_matrix(poses[t].rodrigues)
        deform_world[t] = rigid_world[t] + offsets[t] @ R.T

    obs = np.full((T, Kn, 8, 2), np.nan)
    vis = np.zeros((T, Kn, 8), dtype=bool)
    noise = np.zeros((T, Kn, 8, 2))
    rows = doc["observations"].get("rows", [])
    for row in rows:
        if len(row) != 7:
            raise SchemaError(f"observation row must have 7 entries, got {row}")
        t, k, i = int(row[0]), int(row[1]), int(row[2])
        obs[t, k, i] = [row[3], row[4]]
        noise[t, k, i] = [row[5], row[6]]
        vis[t, k, i] = True
    return SimulatedDataset(config=config, poses=poses,
                            rigid_world=rigid_world,
                            deformable_world=deform_world,
                            deform_offsets=offsets,
                            observations=obs, visible=vis, noise=noise)
