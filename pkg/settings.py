import configparser
import hashlib
import io
import os
from typing import Any, Dict, Optional

from errors import ConfigError

DEFAULTS_FILE = os.path.join(os.path.dirname(os.path.abspath(__file__)), "config", "default.ini")


def _parse_literal(raw: str) -> Any:
    """按字面量推断类型：int → float → bool → str"""
    text = raw.strip()
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    if text.lower() in ("true", "false"):
        return text.lower() == "true"
    return text


def _format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


class PipelineConfig:
    def __init__(self, config_file: Optional[str] = None, defaults_file: str = DEFAULTS_FILE):
        """
        加载流水线配置。默认值来自 config/default.ini，用户配置只能覆盖已存在的键。
        :param config_file: 用户配置文件路径（分节 key = value 格式），为 None 时只用默认值
        :param defaults_file: 默认配置文件路径
        """
        self.config_file = config_file
        self._values: Dict[str, Dict[str, Any]] = {}
        for section, items in self._load_ini(defaults_file).items():
            self._values[section] = {key: _parse_literal(raw) for key, raw in items.items()}

        if config_file:
            for section, items in self._load_ini(config_file).items():
                for key, raw in items.items():
                    self.set(section, key, raw)

    @staticmethod
    def _load_ini(path: str) -> Dict[str, Dict[str, str]]:
        """读取 INI 文件为 {section: {key: raw}}"""
        parser = configparser.ConfigParser(interpolation=None)
        try:
            with open(path, "r", encoding="utf-8") as f:
                parser.read_file(f)
        except FileNotFoundError:
            raise ConfigError(f"配置文件 {path} 不存在")
        except configparser.Error as e:
            raise ConfigError(f"配置文件 {path} 格式错误: {e}")
        return {section: dict(parser.items(section)) for section in parser.sections()}

    def set(self, section: str, key: str, value: Any):
        """
        覆盖一个配置项，类型按默认值转换
        :param section: 节名
        :param key: 键名
        :param value: 新值（字符串或已类型化的值）
        """
        if section not in self._values:
            raise ConfigError(f"未知配置节: [{section}]")
        if key not in self._values[section]:
            raise ConfigError(f"未知配置项: [{section}] {key}")

        default = self._values[section][key]
        try:
            if isinstance(default, bool):
                if isinstance(value, bool):
                    coerced = value
                elif str(value).strip().lower() in ("true", "false"):
                    coerced = str(value).strip().lower() == "true"
                else:
                    raise ValueError(value)
            elif isinstance(default, int):
                coerced = int(value)
            elif isinstance(default, float):
                coerced = float(value)
            else:
                coerced = str(value).strip()
        except (TypeError, ValueError):
            raise ConfigError(f"配置项 [{section}] {key} 的值无效: {value!r}")
        self._values[section][key] = coerced

    def get(self, section: str, key: str) -> Any:
        try:
            return self._values[section][key]
        except KeyError:
            raise ConfigError(f"未知配置项: [{section}] {key}")

    def section(self, name: str) -> Dict[str, Any]:
        if name not in self._values:
            raise ConfigError(f"未知配置节: [{name}]")
        return dict(self._values[name])

    def channel_rule(self, domain: str, kind: str) -> str:
        return self.get("maskextract", f"channel.{domain}.{kind}")

    def polarity(self, domain: str, kind: str) -> str:
        return self.get("maskextract", f"polarity.{domain}.{kind}")

    def resolved_text(self) -> str:
        """完全展开后的配置文本，节与键按字典序排列，保证可复现"""
        parser = configparser.ConfigParser(interpolation=None)
        for section in sorted(self._values):
            parser.add_section(section)
            for key in sorted(self._values[section]):
                parser.set(section, key, _format_value(self._values[section][key]))
        buffer = io.StringIO()
        parser.write(buffer)
        return buffer.getvalue()

    def config_hash(self) -> str:
        return hashlib.sha256(self.resolved_text().encode("utf-8")).hexdigest()[:8]

    def write_resolved(self, path: str):
        with open(path, "w", encoding="utf-8") as f:
            f.write(self.resolved_text())
