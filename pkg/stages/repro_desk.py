from typing import Optional

from repro import repro_desk
from .stage import RunContext, Stage


class ReproDeskStage(Stage):
    name = "repro-desk"

    def execute(self, context: RunContext, lambda_mask: Optional[float] = None, skip_wsi: bool = False) -> dict:
        """
        桌面规模对比实验：H&E / 虚拟 CD20 / 融合检测，掩膜引导与 λ_mask=0 的 FID 对比
        :param lambda_mask: 覆盖掩膜引导训练的 λ_mask
        :param skip_wsi: 跳过整图（重叠/不重叠网格）检测评估
        """
        return repro_desk(context.config, context.run_dir, lambda_mask, skip_wsi, context.progress)
