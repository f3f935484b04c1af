from .boxes import Detection, box_mask, iou, merge_detections, nms, read_detections, write_detections
from .model import DetectorConfig, DetectorModel, GridDetector
from .inference import (
    as_chw,
    detect_manifest,
    detect_patch,
    detect_wsi,
    fuse_channels,
    instance_masks,
    model_inputs,
    split_fused,
)
from .trainer import build_targets, detection_loss, train_detector

__all__ = [
    "Detection",
    "box_mask",
    "iou",
    "merge_detections",
    "nms",
    "read_detections",
    "write_detections",
    "DetectorConfig",
    "DetectorModel",
    "GridDetector",
    "as_chw",
    "detect_manifest",
    "detect_patch",
    "detect_wsi",
    "fuse_channels",
    "instance_masks",
    "model_inputs",
    "split_fused",
    "build_targets",
    "detection_loss",
    "train_detector",
]
