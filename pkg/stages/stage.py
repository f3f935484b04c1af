import argparse
import inspect
import json
import logging
import os
import re
import typing
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Any, Dict, get_type_hints

from errors import VipastainError
from settings import PipelineConfig

logger = logging.getLogger(__name__)

RUN_SUBDIRS = ("checkpoints", "patches", "masks", "dets", "reports")
_PARAM_DOC = re.compile(r":param\s+(\w+):\s*(.+)")


@dataclass
class RunContext:
    config: PipelineConfig
    run_dir: str
    progress: bool = True

    def path(self, kind: str, *parts: str) -> str:
        """运行目录下的产物路径，kind 为 checkpoints / patches / masks / dets / reports"""
        if kind not in RUN_SUBDIRS:
            raise VipastainError(f"未知的产物目录: {kind}")
        directory = os.path.join(self.run_dir, kind, *parts[:-1]) if parts else os.path.join(self.run_dir, kind)
        os.makedirs(directory, exist_ok=True)
        return os.path.join(directory, parts[-1]) if parts else directory

    @property
    def seed(self) -> int:
        return self.config.get("run", "seed")

    def write_report(self, name: str, payload: dict) -> str:
        path = self.path("reports", f"{name}.json")
        try:
            with open(path, "w", encoding="utf-8") as f:
                json.dump(payload, f, indent=2, sort_keys=True, ensure_ascii=False, default=str)
        except OSError as e:
            raise VipastainError(f"写入报告失败: {path}: {e}")
        return path


class Stage(ABC):
    """
    流水线阶段基类，所有子命令需继承此类并实现 execute 方法。
    命令行参数由 execute 的签名与 :param 文档自动生成。
    """
    name = ""
    flag_aliases: Dict[str, str] = {}

    def __init__(self, config: dict):
        """
        :param config: 阶段注册配置（config/stages_config.json 中的条目）
        """
        self.config = config

    @abstractmethod
    def execute(self, context: RunContext, **kwargs) -> Dict[str, Any]:
        """
        执行阶段逻辑
        :param context: 运行上下文（配置、运行目录）
        :return: 阶段摘要，写入 reports/<stage>.json
        """

    @property
    def description(self) -> str:
        """execute 文档的首段"""
        doc = inspect.getdoc(self.execute) or ""
        lines = []
        for line in doc.splitlines():
            if not line.strip() or line.strip().startswith(":"):
                break
            lines.append(line.strip())
        return " ".join(lines) or "No description provided."

    @property
    def parameters(self) -> Dict[str, Dict[str, Any]]:
        """自动提取阶段参数信息：{name: {type, description, default, required}}"""
        sig = inspect.signature(self.execute)
        hints = get_type_hints(self.execute)
        docs = dict(_PARAM_DOC.findall(inspect.getdoc(self.execute) or ""))
        params = {}
        for name, param in sig.parameters.items():
            if name == "context" or param.kind in (param.VAR_KEYWORD, param.VAR_POSITIONAL):
                continue
            params[name] = {
                "type": self._get_arg_type(hints.get(name, str)),
                "description": docs.get(name, f"Parameter {name}"),
                "default": None if param.default is param.empty else param.default,
                "required": param.default is param.empty,
            }
        return params

    @staticmethod
    def _get_arg_type(type_hint):
        """把类型注解化简为 argparse 可用的类型，Optional[X] 取 X"""
        if typing.get_origin(type_hint) is typing.Union:
            args = [a for a in typing.get_args(type_hint) if a is not type(None)]
            type_hint = args[0] if args else str
        return type_hint if type_hint in (str, int, float, bool) else str

    def add_arguments(self, parser: argparse.ArgumentParser):
        for name, info in self.parameters.items():
            flags = ["--" + name.replace("_", "-")]
            if name in self.flag_aliases:
                flags.insert(0, self.flag_aliases[name])
            if info["type"] is bool:
                parser.add_argument(*flags, dest=name, action="store_true", help=info["description"])
                continue
            kwargs = {"dest": name, "type": info["type"], "help": info["description"]}
            if info["required"]:
                kwargs["required"] = True
            else:
                kwargs["default"] = info["default"]
            parser.add_argument(*flags, **kwargs)
