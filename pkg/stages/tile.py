import logging
import os
from typing import Optional

from errors import VipastainError
from patchio.imageio import read_rgb, write_rgb
from patchio.manifest import DatasetManifest, ManifestRow
from patchio.patch import StainDomain
from patchio.stain import StainStats, normalize_stain
from patchio.tiling import SLIDE_INFO_FILE, SlideInfo, rescale_image, tile_image
from .stage import RunContext, Stage

logger = logging.getLogger(__name__)


class TileStage(Stage):
    name = "tile"

    def execute(self, context: RunContext, image: str, slide_id: Optional[str] = None, stain: str = "he",
                overlap: Optional[int] = None, rescale_from: Optional[int] = None,
                reference_stats: Optional[str] = None, out: Optional[str] = None) -> dict:
        """
        把整幅图像切分为按坐标编址的图块并写出清单
        :param image: 输入图像路径
        :param slide_id: 切片编号，默认取文件名主干
        :param stain: 染色域
        :param overlap: 重叠像素，默认取 [patchio] overlap
        :param rescale_from: 原始图块尺寸（如 1024），先按 patch_size/rescale_from 缩放，默认取 [patchio] rescale_from
        :param reference_stats: 参考染色统计 JSON，给出时（或 [patchio] normalize=true）逐块做染色归一化
        :param out: 输出目录，默认 <run>/patches/<slide_id>
        """
        config = context.config
        slide_id = slide_id or os.path.splitext(os.path.basename(image))[0]
        overlap = overlap if overlap is not None else config.get("patchio", "overlap")
        rescale_from = rescale_from if rescale_from is not None else config.get("patchio", "rescale_from")
        if config.get("patchio", "normalize") and not reference_stats:
            raise VipastainError("[patchio] normalize=true 需要通过 --reference-stats 提供参考统计")
        reference = StainStats.load(reference_stats) if reference_stats else None
        out = out or os.path.join(context.path("patches"), slide_id)
        os.makedirs(out, exist_ok=True)

        patch_size = config.get("patchio", "patch_size")
        source = read_rgb(image)
        if rescale_from:
            source = rescale_image(source, patch_size / float(rescale_from))
        tiles = tile_image(source, patch_size, overlap, slide_id, StainDomain(stain))
        info = SlideInfo(slide_id, source.shape[0], source.shape[1], patch_size, overlap)
        info.save(os.path.join(out, SLIDE_INFO_FILE))
        manifest = DatasetManifest()
        for ref, patch in tiles:
            data = normalize_stain(patch.image, reference) if reference else patch.image
            path = os.path.join(out, "images", ref.file_name)
            write_rgb(path, data)
            manifest.rows.append(ManifestRow(patch_id=ref.patch_id, stain=StainDomain(stain), image_path=path))
        manifest_path = os.path.join(out, "manifest.csv")
        manifest.write_csv(manifest_path)
        logger.info("切分完成 slide=%s patches=%d overlap=%d size=%dx%d", slide_id, len(tiles), overlap,
                    info.width, info.height)
        return {"manifest": manifest_path, "patches": len(tiles), "normalized": reference is not None,
                "height": info.height, "width": info.width}
