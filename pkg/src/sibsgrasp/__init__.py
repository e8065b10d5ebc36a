"""Sparse interaction-bisector-surface grasp synthesis for parametric dexterous hands."""

__version__ = "0.1.0"

from .errors import SibsError  # noqa: E402
from .geometry import PointCloud, RigidTransform  # noqa: E402
from .hand_model import GraspPose, HandModel, resolve_hand, shipped_hand  # noqa: E402
from .ibs import (CanonicalFrame, IbsConfig, SparseIbsVolume, compute_ibs,  # noqa: E402
                  extract_ibs_points, ground_truth_ibs, load_sibs, save_sibs)
from .optimizer import EnergyWeights, OptimizerConfig, energy_total, multi_start, optimize_grasp  # noqa: E402
from .quality import force_closure_score, max_penetration_depth, rank_grasps, rank_ibs  # noqa: E402

__all__ = [
    "SibsError", "PointCloud", "RigidTransform", "GraspPose", "HandModel", "resolve_hand",
    "shipped_hand", "CanonicalFrame", "IbsConfig", "SparseIbsVolume", "compute_ibs",
    "extract_ibs_points", "ground_truth_ibs", "load_sibs", "save_sibs", "EnergyWeights",
    "OptimizerConfig", "energy_total", "multi_start", "optimize_grasp", "force_closure_score",
    "max_penetration_depth", "rank_grasps", "rank_ibs",
]
