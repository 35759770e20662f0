from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Type, Union

import yaml
from pydantic import ValidationError
from pydantic.fields import FieldInfo
from pydantic_settings import BaseSettings, EnvSettingsSource, PydanticBaseSettingsSource, SettingsConfigDict

from aurl.schemas.config import RunConfig
from aurl.utils.errors import ConfigurationError
from aurl.utils.logger import logger

LOG_LEVELS = {"error": "ERROR", "warning": "WARNING", "info": "INFO", "debug": "DEBUG"}


class CustomSource(EnvSettingsSource):
    def prepare_field_value(
        self, field_name: str, field: FieldInfo, value: Any, value_is_complex: bool
    ) -> Any:
        if field_name == 'LOG_LEVEL':
            if not value:
                return "INFO"
            level = LOG_LEVELS.get(str(value).strip().lower())
            if level is None:
                logger.warning(f"⚠️ config.py: unknown AURL_LOG_LEVEL {value!r}, using INFO")
                return "INFO"
            return level

        if field_name == 'PROGRESS':
            return value.lower() == 'true' if value else True

        return value if value else None


class Settings(BaseSettings):
    model_config = SettingsConfigDict(env_prefix="AURL_", env_file=".env", env_file_encoding="utf-8")

    APP_NAME: str = "AURL"
    LOG_LEVEL: str = "INFO"
    # epoch progress bars on the console
    PROGRESS: bool = True
    DEFAULT_CONFIG: str = "configs/default.yaml"

    @property
    def is_debug(self) -> bool:
        return self.LOG_LEVEL == "DEBUG"

    @classmethod
    def settings_customise_sources(
        cls,
        settings_cls: Type[BaseSettings],
        init_settings: PydanticBaseSettingsSource,
        env_settings: PydanticBaseSettingsSource,
        dotenv_settings: PydanticBaseSettingsSource,
        file_secret_settings: PydanticBaseSettingsSource,
    ) -> Tuple[PydanticBaseSettingsSource, ...]:
        return (init_settings, CustomSource(settings_cls), dotenv_settings)


def _format_validation_error(error: ValidationError) -> str:
    parts = []
    for item in error.errors():
        location = ".".join(str(p) for p in item["loc"]) or "<root>"
        parts.append(f"{location}: {item['msg']}")
    return "; ".join(parts)


def build_run_config(raw: Dict[str, Any], overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """Validate a raw mapping (plus non-None overrides) into a RunConfig"""
    data = dict(raw or {})
    for key, value in (overrides or {}).items():
        if value is not None:
            data[key] = value
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        message = _format_validation_error(e)
        logger.error(f"❌ config.py: invalid run configuration: {message}")
        raise ConfigurationError(f"invalid run configuration: {message}")


def load_run_config(path: Union[str, Path], overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """
    Read a YAML run configuration and apply command-line overrides
    📝 File: config.py, Function: load_run_config
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"config file not found: {path}", data={"path": str(path)})
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as e:
        raise ConfigurationError(f"cannot parse {path}: {e}", data={"path": str(path)})
    if not isinstance(raw, dict):
        raise ConfigurationError(f"{path} must contain a mapping at the top level", data={"path": str(path)})
    config = build_run_config(raw, overrides)
    logger.debug(f"🔍 config.py: loaded {path} -> mode={config.mode.value} seed={config.seed}")
    return config


def dump_run_config(config: RunConfig, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(yaml.safe_dump(config.model_dump(mode="json"), sort_keys=False), encoding="utf-8")
    return path


settings = Settings()
