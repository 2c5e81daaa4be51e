"""View-guided point cloud completion at desk scale.

Stages: depth lift of a single view, alignment to the partial scan, part
filter (merge, FPS, fine/coarse split) and a trainable offset refiner with a
protective mask. Metrics (chamfer, auction EMD, F-Score) live in
:mod:`viewguided.metrics`.
"""

from .core import (
    DegenerateCloudError,
    NormalizationRecord,
    PointCloud,
    RigidTransform,
    SpatialIndex,
    farthest_point_sample,
    merge,
    normalize_to_unit_sphere,
)
from .metrics import LossWeights, chamfer_distance, combined_loss, emd_auction, emd_exact_oracle, f_score
from .partfilter import Partition, build_coarse, estimate_density_threshold, partition_fine_coarse
from .pipeline import Model, PipelineConfig, StageError, prepare, run_refinement
from .view import CameraParams, backproject_depth, camera_from_view, project, render_depth

__version__ = "0.1.0"

__all__ = [
    "CameraParams",
    "DegenerateCloudError",
    "LossWeights",
    "Model",
    "NormalizationRecord",
    "Partition",
    "PipelineConfig",
    "PointCloud",
    "RigidTransform",
    "SpatialIndex",
    "StageError",
    "backproject_depth",
    "build_coarse",
    "camera_from_view",
    "chamfer_distance",
    "combined_loss",
    "emd_auction",
    "emd_exact_oracle",
    "estimate_density_threshold",
    "f_score",
    "farthest_point_sample",
    "merge",
    "normalize_to_unit_sphere",
    "partition_fine_coarse",
    "prepare",
    "project",
    "render_depth",
    "run_refinement",
]
