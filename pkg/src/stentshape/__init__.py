"""Marker-based 3D shape instantiation of fenestrated stent grafts from one fluoroscopic view."""

from .errors import (
    CorrespondenceError,
    DegenerateGeometryError,
    OutOfFrameError,
    PoseSolveError,
    SpecError,
    StentShapeError,
)
from .graft_model import (
    FenestrationSpec,
    GraftSpec,
    Mesh,
    ScallopSpec,
    SegmentSpec,
    assemble_graft,
    default_device,
)
from .markers import DEFAULT_PATTERN, MarkerSet, place_markers
from .projection import VIEW_ANGLES, CameraModel, camera_for_view, project, render_fluoro
from .detection import detect_markers, focal_loss, iou, weighted_loss
from .rpnp import PoseEstimate, rpnp_pose, umeyama
from .instantiation import InstantiatedShape, continuity_correct, instantiate_shape
from .evaluation import ErrorReport, angular_error, center_align, mean_unsigned_distance
from .simulation import Deformation, SegmentMotion, ground_truth, run_pipeline, view_sweep

__version__ = "0.1.0"
