import logging
import os
from collections import defaultdict
from typing import Optional

from errors import ConfigError
from patchio.imageio import read_rgb, write_rgb
from patchio.manifest import DatasetManifest
from patchio.patch import StainDomain
from patchio.tiling import SlideInfo, find_slide_info, refs_from_patch_ids, stitch_patches
from .stage import RunContext, Stage

logger = logging.getLogger(__name__)


class StitchStage(Stage):
    name = "stitch"

    def execute(self, context: RunContext, manifest: str, out: Optional[str] = None, stain: Optional[str] = None,
                slide: Optional[str] = None, height: Optional[int] = None, width: Optional[int] = None,
                slide_info: Optional[str] = None) -> dict:
        """
        按 {slide_id}_x{ox}_y{oy} 编号把图块拼回整图，并裁回原图尺寸
        :param manifest: 图块清单 CSV（例如虚拟染色输出）
        :param out: 输出目录，默认 <run>/patches/mosaic
        :param stain: 只拼接该染色域
        :param slide: 只拼接该切片
        :param height: 整图高度，需与 --width 同时给出
        :param width: 整图宽度
        :param slide_info: tile 写出的 slide.json，默认取清单同目录下的文件；都没有时按图块覆盖范围
        """
        if (height is None) != (width is None):
            raise ConfigError("--height 与 --width 必须同时给出")
        info = SlideInfo.load(slide_info) if slide_info else find_slide_info(manifest)
        rows = DatasetManifest.read_csv(manifest)
        if stain:
            rows = rows.filter(stain=StainDomain(stain))
        by_slide = defaultdict(list)
        for row in rows:
            if slide is None or row.slide_id == slide:
                by_slide[row.slide_id].append(row)
        out = out or os.path.join(context.path("patches"), "mosaic")

        mosaics = {}
        for slide_id, slide_rows in sorted(by_slide.items()):
            images = [read_rgb(row.image_path) for row in slide_rows]
            size = images[0].shape[0]
            refs = refs_from_patch_ids([row.patch_id for row in slide_rows], size)
            if height is not None:
                dims = (height, width)
            elif info is not None and info.slide_id == slide_id:
                dims = (info.height, info.width)
            else:
                dims = (max(ref.origin_y for ref in refs) + size, max(ref.origin_x for ref in refs) + size)
            path = os.path.join(out, f"{slide_id}_mosaic.png")
            write_rgb(path, stitch_patches(list(zip(refs, images)), dims))
            mosaics[slide_id] = {"path": path, "height": dims[0], "width": dims[1]}
        logger.info("拼接完成 slides=%d out=%s", len(mosaics), out)
        return {"mosaics": mosaics}
