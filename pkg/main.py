import logging
import os
import sys

from dotenv import load_dotenv

from evalmetrics.extractors import load_extractor_registry
from pipeline import PipelineRunner, run_subcommand

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def init_environment():
    """
    初始化环境配置：存在 .env 时加载（VIPASTAIN_RUN_DIR、VIPASTAIN_DEVICE 等）
    """
    env_path = os.path.join(os.path.dirname(os.path.abspath(__file__)), ".env")
    if os.path.exists(env_path):
        load_dotenv(env_path)


def list_stages():
    """列出可用的子命令与特征提取器"""
    runner = PipelineRunner()
    print("\n=== 可用的子命令 ===")
    for name, stage in runner.stages.items():
        print(f"- {name}: {stage.description}")

    extractors = load_extractor_registry()
    print("\n=== 可用的特征提取器 ===")
    for name, config in extractors.items():
        print(f"- {name} ({config.get('extractor_type', name)}): feature_dim={config.get('feature_dim')}")
    print()


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    debug_mode = False
    for flag in ("-d", "--debug"):
        while flag in argv:
            argv.remove(flag)
            debug_mode = True
    logging.basicConfig(level=logging.DEBUG if debug_mode else logging.INFO, format=LOG_FORMAT)

    init_environment()
    if argv and argv[0] in ("-l", "--list"):
        list_stages()
        return 0
    return run_subcommand(argv)


if __name__ == "__main__":
    sys.exit(main())
