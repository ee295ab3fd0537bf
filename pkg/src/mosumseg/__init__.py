"""MOSUM change-point segmentation based on estimating functions."""

from .errors import DomainError, MosumError, NonConvergence, ScanFailure, SingularFit, SingularScaling
from .estimators import (
    TOL_FIT,
    EstimatingModel,
    InarchModel,
    LinearRegression,
    MeanModel,
    MedianLikeModel,
    Samples,
    SignMedianModel,
    make_model,
)
from .mosum import Inspection, ScanConfig, ScanResult, moving_score_sums, scan, score_scan, wald_scan
from .scaling import ScalingPolicy, inv_sqrt
from .segmenter import (
    ChangePoint,
    ExceedingInterval,
    SegmentationResult,
    find_exceedings,
    relocate_with_psi,
    segment,
    segment_recursive,
)
from .threshold import ThresholdSpec, critical_value, gumbel_quantile, norming, threshold

__all__ = [
    "ChangePoint", "DomainError", "EstimatingModel", "ExceedingInterval", "InarchModel", "Inspection",
    "LinearRegression", "MeanModel", "MedianLikeModel", "MosumError", "NonConvergence", "Samples",
    "ScalingPolicy", "ScanConfig", "ScanFailure", "ScanResult", "SegmentationResult", "SignMedianModel",
    "SingularFit", "SingularScaling", "TOL_FIT", "ThresholdSpec", "critical_value", "find_exceedings",
    "gumbel_quantile", "inv_sqrt", "make_model", "moving_score_sums", "norming", "relocate_with_psi",
    "scan", "score_scan", "segment", "segment_recursive", "threshold", "wald_scan",
]
