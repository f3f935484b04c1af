from .otsu import ChannelHistogram, between_class_variance, multi_otsu
from .masks import (
    DOMAIN_KINDS,
    MASK_SUFFIXES,
    Polarity,
    ThresholdSet,
    TissueMaskSet,
    clean_mask,
    default_min_component_px,
    extract_cd20_masks,
    extract_he_masks,
    extract_masks,
    extract_region,
    load_threshold_file,
    save_threshold_file,
    soft_mask,
    split_channels,
)
from .calibrate import (
    calibrate_per_patch,
    calibrate_thresholds,
    mask_rules_from_config,
    per_patch_records,
    pooled_histograms,
)

__all__ = [
    "ChannelHistogram",
    "between_class_variance",
    "multi_otsu",
    "DOMAIN_KINDS",
    "MASK_SUFFIXES",
    "Polarity",
    "ThresholdSet",
    "TissueMaskSet",
    "clean_mask",
    "default_min_component_px",
    "extract_cd20_masks",
    "extract_he_masks",
    "extract_masks",
    "extract_region",
    "load_threshold_file",
    "save_threshold_file",
    "soft_mask",
    "split_channels",
    "calibrate_per_patch",
    "calibrate_thresholds",
    "mask_rules_from_config",
    "per_patch_records",
    "pooled_histograms",
]
