from .matching import (
    MatchResult,
    PrecisionRecall,
    detection_report,
    f1_score,
    mask_precision_recall,
    match_by_patch,
    match_detections,
    precision_recall,
)
from .fid import FeatureSet, extract_features, frechet_distance
from .report import evaluate_detections, manifest_mask_metrics
from .extractors import BaseExtractor, extractor_from_config, get_extractor

__all__ = [
    "MatchResult",
    "PrecisionRecall",
    "detection_report",
    "f1_score",
    "mask_precision_recall",
    "match_by_patch",
    "match_detections",
    "precision_recall",
    "evaluate_detections",
    "manifest_mask_metrics",
    "FeatureSet",
    "extract_features",
    "frechet_distance",
    "BaseExtractor",
    "extractor_from_config",
    "get_extractor",
]
