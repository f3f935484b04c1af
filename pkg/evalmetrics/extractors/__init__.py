import json
import os
from typing import Optional

from errors import ConfigError
from .base import BaseExtractor
from .external import ExternalExtractor
from .random_conv import RandomConvExtractor

__all__ = [
    "BaseExtractor",
    "ExternalExtractor",
    "RandomConvExtractor",
    "extractor_from_config",
    "get_extractor",
    "load_extractor_registry",
]

REGISTRY_FILE = os.path.join(os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__)))),
                             "config", "extractors_config.json")

EXTRACTOR_TYPES = {
    "random_conv": RandomConvExtractor,
    "external": ExternalExtractor,
}


def load_extractor_registry(path: str = REGISTRY_FILE) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"特征提取器配置文件 {path} 不存在")
    except json.JSONDecodeError as e:
        raise ConfigError(f"特征提取器配置文件 {path} 格式错误: {e}")


def get_extractor(name: str, overrides: Optional[dict] = None, registry_file: str = REGISTRY_FILE) -> BaseExtractor:
    """
    根据名称获取特征提取器实例
    :param name: 注册名（如 random-conv、external）
    :param overrides: 覆盖注册表中的参数（如 feature_dim、seed、target）
    :return: 提取器实例
    """
    registry = load_extractor_registry(registry_file)
    if name not in registry:
        raise ConfigError(f"不支持的特征提取器: {name}")
    config = dict(registry[name])
    config.update(overrides or {})
    extractor_type = config.get("extractor_type", name)
    if extractor_type not in EXTRACTOR_TYPES:
        raise ConfigError(f"未知的提取器类型: {extractor_type}")
    return EXTRACTOR_TYPES[extractor_type].from_config(config)


def extractor_from_config(config, name: Optional[str] = None) -> BaseExtractor:
    """按 [evaluate] 节构造提取器；random-conv 使用其中的 feature_dim 与 extractor_seed"""
    section = config.section("evaluate")
    name = name or section["extractor"]
    overrides = {"feature_dim": section["feature_dim"], "seed": section["extractor_seed"]} if name == "random-conv" else {}
    return get_extractor(name, overrides)
