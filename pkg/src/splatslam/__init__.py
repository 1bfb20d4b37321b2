"""Desk-scale RGB-D SLAM: closed-form feature tracking + Gaussian-splat mapping."""

__version__ = "0.1.0"

from .config import RunConfig, SyntheticConfig
from .datasets import Frame, Trajectory, export_trajectory, load_trajectory, load_tum
from .evalkit import MetricReport, ate_rmse, psnr, run_experiment, ssim, stride_subsample
from .frontend import (
    CorrespondenceProvider,
    FileMatcher,
    SyntheticMatcher,
    confidence_filter,
    lift_matches,
    truncate_by_depth,
)
from .gaussian_map import (
    GaussianMap,
    GaussianSplat,
    IcpParams,
    IcpResult,
    KeyframePolicy,
    frustum_iou,
    icp_align,
    load_map_ply,
    save_map_ply,
    should_add_keyframe,
    visible_subset,
    voxel_downsample,
)
from .geometry import (
    CameraIntrinsics,
    PixelMatch,
    PointSet,
    Pose,
    back_project,
    compose,
    estimate_rigid_transform,
    invert,
    project,
)
from .mapper import (
    DensifyReport,
    MapperConfig,
    SamplingStrategy,
    densify,
    optimize_map,
    refine_colors,
    sample_keyframe,
)
from .renderer import (
    LossWeights,
    RenderedImage,
    compute_loss,
    pose_gradient,
    project_covariance,
    render,
)
from .slam import SlamResult, SlamSystem
from .synthetic import SyntheticScene, generate_synthetic
from .tracker import (
    TrackResult,
    TrackerConfig,
    constant_velocity_predict,
    refine_pose,
    track_frame,
)

__all__ = [
    "CameraIntrinsics", "CorrespondenceProvider", "DensifyReport",
    "FileMatcher", "Frame", "GaussianMap", "GaussianSplat", "IcpParams",
    "IcpResult", "KeyframePolicy", "LossWeights", "MapperConfig",
    "MetricReport", "PixelMatch", "PointSet", "Pose", "RenderedImage",
    "RunConfig", "SamplingStrategy", "SlamResult", "SlamSystem",
    "SyntheticConfig", "SyntheticMatcher", "SyntheticScene", "TrackResult",
    "TrackerConfig", "Trajectory", "ate_rmse", "back_project", "compose",
    "compute_loss", "confidence_filter", "constant_velocity_predict",
    "densify", "estimate_rigid_transform", "export_trajectory",
    "frustum_iou", "generate_synthetic", "icp_align", "invert",
    "lift_matches", "load_map_ply", "load_trajectory", "load_tum",
    "optimize_map", "pose_gradient", "project", "project_covariance",
    "psnr", "refine_colors", "refine_pose", "render", "run_experiment",
    "sample_keyframe", "save_map_ply", "should_add_keyframe", "ssim",
    "stride_subsample", "track_frame", "truncate_by_depth", "visible_subset",
    "voxel_downsample", "__version__",
]
