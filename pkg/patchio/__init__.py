from .patch import GridPatchRef, Patch, StainDomain, format_patch_id, parse_patch_id
from .imageio import read_image_set, read_mask, read_rgb, write_mask, write_rgb
from .manifest import (DatasetManifest, ManifestRow, load_manifest_annotations, read_annotations,
                       write_annotations)
from .tiling import refs_from_patch_ids, rescale_image, stitch_patches, tile_image
from .stain import StainStats, compute_stain_stats, normalize_stain
from .dataset import dataset_summary, split_dataset

__all__ = [
    "GridPatchRef",
    "Patch",
    "StainDomain",
    "format_patch_id",
    "parse_patch_id",
    "read_image_set",
    "read_mask",
    "read_rgb",
    "write_mask",
    "write_rgb",
    "DatasetManifest",
    "ManifestRow",
    "load_manifest_annotations",
    "read_annotations",
    "write_annotations",
    "refs_from_patch_ids",
    "rescale_image",
    "stitch_patches",
    "tile_image",
    "StainStats",
    "compute_stain_stats",
    "normalize_stain",
    "dataset_summary",
    "split_dataset",
]
