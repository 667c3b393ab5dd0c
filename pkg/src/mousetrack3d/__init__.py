"""Multi-view 3D body-part track reconstruction for a deformable mouse model.

Combines per-frame resection/triangulation, a cubic-spline motion-track
smoothness constraint, a learned body-part deformation predictor, and a
global sparse bundle adjustment, validated against its own ground-truth
simulator.
"""

from . import (
    adjustment,
    deform_predictor,
    errors,
    evaluation,
    geometry,
    mouse_model,
    simulator,
    track_constraint,
)
from .geometry import (
    CameraModel,
    PoseVector,
    RigidTransform,
    apply,
    compose,
    decompose_projection,
    invert,
    pose_to_transform,
    project,
    resect,
    transform_to_pose,
    triangulate,
)
from .mouse_model import DeformationState, RigidMouseModel, deform, world_part_positions
from .simulator import SceneConfig, SimulatedDataset, default_cameras, simulate
from .track_constraint import ComparisonGrid, default_grid, grid_rmse, spline_interpolate, track_residual
from .adjustment import MouseStateTrack, StochasticConfig, initialize, build_problem, solve, solve_dataset
from .deform_predictor import SequenceModel, TokenSequence, build_tokens, train
from .evaluation import EvaluationReport, evaluate

__version__ = "0.1.0"
