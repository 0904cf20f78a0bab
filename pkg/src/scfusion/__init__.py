"""Recursive Bayesian filtering of per-pixel scene-coordinate maps for camera
relocalization, with a synthetic data generator and an experiment harness."""

from .errors import ScFusionError
from .filtering import chi2_quantile, full_loss, fuse_baseline, kalman_update
from .geometry import CameraIntrinsics, CoordStateMap, FlowField, Pose
from .measurement import MeasurementOracleConfig, likelihood_loss, synthesize_measurement
from .pipeline import PipelineConfig, SequenceConfig, export_point_cloud, run_experiment_suite, run_sequence
from .pose import RansacConfig, gather_correspondences, pose_metrics, ransac_pnp, refine_pose
from .process import ProcessNoiseConfig, assemble_prior, build_cost_volume, extract_features, flow_from_volume, warp_state
from .simulator import DegradationConfig, generate_sequence, make_default_scene, make_trajectory

__version__ = "0.1.0"

__all__ = [
    "CameraIntrinsics",
    "CoordStateMap",
    "DegradationConfig",
    "FlowField",
    "MeasurementOracleConfig",
    "PipelineConfig",
    "Pose",
    "ProcessNoiseConfig",
    "RansacConfig",
    "ScFusionError",
    "SequenceConfig",
    "assemble_prior",
    "build_cost_volume",
    "chi2_quantile",
    "export_point_cloud",
    "extract_features",
    "flow_from_volume",
    "full_loss",
    "fuse_baseline",
    "gather_correspondences",
    "generate_sequence",
    "kalman_update",
    "likelihood_loss",
    "make_default_scene",
    "make_trajectory",
    "pose_metrics",
    "ransac_pnp",
    "refine_pose",
    "run_experiment_suite",
    "run_sequence",
    "synthesize_measurement",
    "warp_state",
]
