"""Dense multi-person detection refinement and temporal matching.

Dense proposal maps are refined by mean-field inference in a pairwise MRF
and turned into detections by vote counting, instead of non-maxima
suppression. A matching GRU links detections across frames and predicts
individual and collective actions.
"""
from .densemap import (ActiveSet, DenseProposalMap, EncoderConfig, GroundTruthScene, active_set,
                       decode_to_global, detection_loss, encode_ground_truth)
from .evalkit import PrCurve, accuracy, average_precision, equal_error_rate, greedy_match, match_to_gt
from .geometry import BoundingBox, GridShape, bilinear_resize, iou, iou_matrix, roi_extract
from .mrf import (Detection, MeanFieldState, MrfConfig, extract_detections, init_state,
                  joint_log_density, mean_field_step, refine, refine_map, run_inference)
from .nms import ScoredBox, greedy_nms

__version__ = "0.1.0"

__all__ = [
    "ActiveSet", "BoundingBox", "DenseProposalMap", "Detection", "EncoderConfig", "GridShape",
    "GroundTruthScene", "MeanFieldState", "MrfConfig", "PrCurve", "ScoredBox", "accuracy",
    "active_set", "average_precision", "bilinear_resize", "decode_to_global", "detection_loss",
    "encode_ground_truth", "equal_error_rate", "extract_detections", "greedy_nms", "init_state",
    "greedy_match", "iou", "iou_matrix", "joint_log_density", "match_to_gt", "mean_field_step", "refine",
    "refine_map", "roi_extract", "run_inference",
]
