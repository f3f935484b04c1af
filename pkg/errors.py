"""
项目统一异常定义。

所有模块抛出的业务异常都继承 VipastainError，命令行入口据此决定退出码：
ConfigError 视为用法错误（退出码 2），其余视为运行时错误（退出码 1）。
"""


class VipastainError(Exception):
    """所有业务异常的基类"""


class ConfigError(VipastainError, ValueError):
    """配置文件或命令行参数无效"""


class PlacementError(VipastainError, ValueError):
    """画布太小，无法放置请求的对象"""

    def __init__(self, kind: str, index: int, attempts: int):
        self.kind = kind
        self.index = index
        super().__init__(f"无法放置对象: {kind} #{index}（尝试 {attempts} 次后失败）")


class DegenerateHistogramError(VipastainError, ValueError):
    """直方图的有效灰度级数量不足以划分 k+1 类"""


class CoverageGapError(VipastainError, ValueError):
    """拼接时存在未被任何图块覆盖的网格单元"""

    def __init__(self, missing: list):
        self.missing = sorted(missing)
        cells = ", ".join(f"({gx},{gy})" for gx, gy in self.missing)
        super().__init__(f"拼接覆盖不完整，缺失网格单元: {cells}")


class ShapeMismatchError(VipastainError, ValueError):
    """输入张量/图像尺寸不一致"""


class NonFiniteError(VipastainError, ValueError):
    """出现 NaN 或 Inf"""


class PairingError(VipastainError, ValueError):
    """H&E 与虚拟 CD20 图块缺少一一配对"""

    def __init__(self, unpaired: list):
        self.unpaired = list(unpaired)
        super().__init__(f"以下图块缺少配对: {', '.join(self.unpaired)}")


class DomainMismatchError(VipastainError, ValueError):
    """染色域与转换方向或检测通道不匹配"""


class StageError(VipastainError):
    """带阶段标签的流水线错误"""

    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {cause}")
