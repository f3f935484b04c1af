import argparse
import importlib
import json
import logging
import os
import sys
import time
from typing import Dict, List, Optional

from errors import ConfigError, VipastainError
from settings import PipelineConfig
from stages.stage import RUN_SUBDIRS, RunContext, Stage

logger = logging.getLogger(__name__)

STAGES_FILE = os.path.join(os.path.dirname(os.path.abspath(__file__)), "config", "stages_config.json")
RUN_DIR_ENV = "VIPASTAIN_RUN_DIR"
DEVICE_ENV = "VIPASTAIN_DEVICE"


class PipelineRunner:
    def __init__(self, stages_file: str = STAGES_FILE):
        """
        初始化流水线，按配置文件加载所有阶段
        :param stages_file: 阶段注册文件（config/stages_config.json）
        """
        self.stages = self._load_stages(stages_file)

    @staticmethod
    def _load_stages(config_file: str) -> Dict[str, Stage]:
        """
        动态加载所有阶段。
        :param config_file: 阶段配置文件路径
        :return: 子命令名到阶段对象的映射
        """
        try:
            with open(config_file, "r", encoding="utf-8") as f:
                configs = json.load(f)
        except FileNotFoundError:
            raise ConfigError(f"阶段配置文件 {config_file} 不存在")
        except json.JSONDecodeError as e:
            raise ConfigError(f"阶段配置文件 {config_file} 格式错误: {e}")

        stages = {}
        for name, config in configs.items():
            module = importlib.import_module(f"stages.{config['module']}")
            stage_class = getattr(module, config["class"])
            stages[name] = stage_class(config)
        return stages

    def build_parser(self) -> argparse.ArgumentParser:
        common = argparse.ArgumentParser(add_help=False)
        common.add_argument("--config", help="用户配置文件（INI），覆盖 config/default.ini")
        common.add_argument("--seed", type=int, help="覆盖 [run] seed")
        common.add_argument("--run-dir", help=f"运行目录；缺省时使用环境变量 {RUN_DIR_ENV} 或 [run] runs_root 下的新目录")
        common.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                            help="覆盖单个配置项，可重复")
        common.add_argument("--no-progress", action="store_true", help="关闭进度条")

        parser = argparse.ArgumentParser(prog="vipastain", description="掩膜引导的 H&E → CD20 虚拟染色与 TLS 检测流水线")
        subparsers = parser.add_subparsers(dest="command", metavar="SUBCOMMAND")
        subparsers.required = True
        for name, stage in self.stages.items():
            sub = subparsers.add_parser(name, parents=[common], help=stage.description,
                                        description=stage.description)
            stage.add_arguments(sub)
        return parser

    @staticmethod
    def load_config(args: argparse.Namespace) -> PipelineConfig:
        config = PipelineConfig(args.config)
        if os.getenv(DEVICE_ENV):
            config.set("run", "device", os.getenv(DEVICE_ENV))
        for item in args.overrides:
            target, sep, value = item.partition("=")
            section, dot, key = target.partition(".")
            if not sep or not dot:
                raise ConfigError(f"--set 需要 SECTION.KEY=VALUE 格式: {item}")
            config.set(section, key, value)
        if args.seed is not None:
            config.set("run", "seed", args.seed)
        return config

    @staticmethod
    def make_run_dir(config: PipelineConfig, run_dir: Optional[str] = None) -> str:
        """
        创建运行目录并写出 config.resolved
        :param run_dir: 显式指定的目录；否则在输出根目录下新建 {时间戳}_{配置哈希}
        """
        if not run_dir:
            root = os.getenv(RUN_DIR_ENV) or config.get("run", "runs_root")
            run_dir = os.path.join(root, f"{time.strftime('%Y%m%d-%H%M%S')}_{config.config_hash()}")
        try:
            for kind in RUN_SUBDIRS:
                os.makedirs(os.path.join(run_dir, kind), exist_ok=True)
            config.write_resolved(os.path.join(run_dir, "config.resolved"))
        except OSError as e:
            raise VipastainError(f"无法创建运行目录: {run_dir}: {e}")
        return run_dir

    def run(self, argv: List[str]) -> int:
        parser = self.build_parser()
        try:
            args = parser.parse_args(argv)
        except SystemExit as e:
            return int(e.code or 0)

        stage = self.stages[args.command]
        try:
            config = self.load_config(args)
            run_dir = self.make_run_dir(config, args.run_dir)
            progress = config.get("run", "progress") and not args.no_progress and sys.stderr.isatty()
            context = RunContext(config, run_dir, progress)
            kwargs = {name: getattr(args, name) for name in stage.parameters}
            logger.info("开始阶段 stage=%s run_dir=%s", stage.name, run_dir)
            summary = stage.execute(context, **kwargs)
            report = context.write_report(stage.name, summary)
            logger.info("阶段完成 stage=%s report=%s", stage.name, report)
        except ConfigError as e:
            parser.print_usage(sys.stderr)
            print(f"vipastain: 配置错误: {e}", file=sys.stderr)
            return 2
        except (VipastainError, ValueError, OSError, RuntimeError) as e:
            logger.debug("阶段失败", exc_info=True)
            print(f"vipastain {args.command}: {e}", file=sys.stderr)
            return 1
        return 0


def run_subcommand(argv: List[str]) -> int:
    """
    运行一个子命令
    :param argv: 不含程序名的命令行参数
    :return: 退出码，0 成功，2 用法或配置错误，1 运行时错误
    """
    try:
        runner = PipelineRunner()
    except ConfigError as e:
        print(f"vipastain: {e}", file=sys.stderr)
        return 2
    return runner.run(argv)
