import configparser
import logging
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Optional, Union

from pydantic import ValidationError

from ..core.exceptions import ConfigError
from ..models import RunConfig

logger = logging.getLogger(__name__)


class ConfigFileParser:
    """
    Parser for run configuration files.
    Expected format: `[section]` headers named after RunConfig sections, then
    `key = value` lines. Comma-separated values become lists.
    """

    @staticmethod
    def _convert(value: str) -> Any:
        value = value.strip()
        if "," in value:
            return [v.strip() for v in value.split(",") if v.strip()]
        return value

    @classmethod
    def parse_config_string(cls, text: str, source: str = "<string>") -> RunConfig:
        parser = configparser.ConfigParser(interpolation=None)
        try:
            parser.read_string(text, source=source)
        except configparser.Error as e:
            raise ConfigError(f"{source}: {e}") from e

        sections = set(RunConfig.model_fields)
        raw: Dict[str, Dict[str, Any]] = {}
        for name in parser.sections():
            if name not in sections:
                raise ConfigError(f"{source}: unknown section [{name}]; expected one of {sorted(sections)}")
            raw[name] = {key: cls._convert(value) for key, value in parser.items(name)}
        return cls.build(raw, source)

    @classmethod
    def parse_config(cls, path: Union[str, Path]) -> RunConfig:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"Config file not found: {path}")
        config = cls.parse_config_string(path.read_text(), source=str(path))
        logger.info(f"Loaded configuration from {path}")
        return config

    @staticmethod
    def build(raw: Dict[str, Dict[str, Any]], source: str = "<overrides>") -> RunConfig:
        """Validate nested section values; unknown keys are rejected by the section models"""
        try:
            return RunConfig.model_validate(raw)
        except ValidationError as e:
            raise ConfigError(f"{source}: invalid configuration:\n{e}") from e

    @staticmethod
    def with_overrides(config: RunConfig, seed: Optional[int] = None, output_dir: Optional[str] = None,
                       world_file: Optional[str] = None) -> RunConfig:
        """Apply command-line flags on top of file values"""
        raw = config.model_dump()
        if seed is not None:
            raw["run"]["seed"] = seed
        if output_dir is not None:
            raw["run"]["output_dir"] = output_dir
        if world_file is not None:
            raw["geometry"]["world_file"] = world_file
        return ConfigFileParser.build(raw, "command line")

    @staticmethod
    def _format_value(value: Any) -> str:
        if isinstance(value, Enum):
            return str(value.value)
        if isinstance(value, float):
            return repr(value)
        if isinstance(value, (list, tuple)):
            return ", ".join(ConfigFileParser._format_value(v) for v in value)
        return str(value)

    @classmethod
    def format_config(cls, config: RunConfig) -> str:
        """Config file text that parses back to the same RunConfig"""
        lines = []
        for section, values in config.model_dump().items():
            lines.append(f"[{section}]")
            for key, value in values.items():
                if value is not None:
                    lines.append(f"{key} = {cls._format_value(value)}")
            lines.append("")
        return "\n".join(lines)
