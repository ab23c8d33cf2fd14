"""Metric vehicle trajectories from 2D keypoint detections in aerial video.

The package chains camera calibration, PCA shape-prior model fitting,
IoU tracking and an EKF over a kinematic bicycle model, and adds lane-level
analytics on the resulting trajectories. :mod:`aerotrack.synth` generates
synthetic scenes with exact ground truth for end-to-end checks.
"""

__version__ = "0.1.0"

from .camera import (  # noqa: E402
    CameraIntrinsics,
    CameraPose,
    GroundCorrespondence,
    ReferencePointSet,
    back_project_to_ground,
    project,
    recalibrate,
    solve_pnp,
)
from .exceptions import AerotrackError, ConfigError, DataError  # noqa: E402
from .keypoints import KeypointDetection, load_detections  # noqa: E402
from .model_fitting import FitConfig, VehicleFit, fit_vehicle  # noqa: E402
from .shape_prior import ShapePrior, build_prior, classify_type, generate_shape  # noqa: E402
from .state_estimation import EkfState, NoiseConfig, predict, update  # noqa: E402
from .tracking import AssociationConfig, Tracker, associate  # noqa: E402

__all__ = [
    "AerotrackError",
    "AssociationConfig",
    "CameraIntrinsics",
    "CameraPose",
    "ConfigError",
    "DataError",
    "EkfState",
    "FitConfig",
    "GroundCorrespondence",
    "KeypointDetection",
    "NoiseConfig",
    "ReferencePointSet",
    "ShapePrior",
    "Tracker",
    "VehicleFit",
    "associate",
    "back_project_to_ground",
    "build_prior",
    "classify_type",
    "fit_vehicle",
    "generate_shape",
    "load_detections",
    "predict",
    "project",
    "recalibrate",
    "solve_pnp",
    "update",
]
