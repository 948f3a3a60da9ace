"""Model assertions over logged prediction streams: evaluation, consistency
checks with weak-label corrections, and bandit-based data selection."""

__version__ = "0.1.0"

from .engine import (AssertionDescriptor, AssertionRegistry, SeverityMatrix, confidence_percentile_report,
                     evaluate_stream, flagged_points)
from .records import Box3D, ClassLabel, DetectionBox, PredictionRecord
from .geometry import CameraModel, iou, project_box3d
from .tracks import build_tracks, presence_timeline
from .consistency import (ConsistencyConfig, add_consistency_assertion, apply_edits,
                          check_attribute_consistency, check_temporal_consistency,
                          propose_corrections, run_consistency)
from .bandit import RoundState, baseline_select, bal_select, ccmab_select, marginal_reduction

__all__ = [
    "AssertionDescriptor", "AssertionRegistry", "SeverityMatrix", "confidence_percentile_report",
    "evaluate_stream", "flagged_points", "Box3D", "ClassLabel", "DetectionBox", "PredictionRecord",
    "CameraModel", "iou", "project_box3d", "build_tracks", "presence_timeline", "ConsistencyConfig",
    "add_consistency_assertion", "apply_edits", "check_attribute_consistency",
    "check_temporal_consistency", "propose_corrections", "run_consistency", "RoundState",
    "baseline_select", "bal_select", "ccmab_select", "marginal_reduction",
]
