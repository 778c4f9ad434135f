"""
Configuration resolution for SlumpVision
Defaults < config file (key = value) < SLUMP_* environment < command-line flags
"""

import os
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Tuple, Type

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from src.core.errors import ConfigError

ENV_PREFIX = "SLUMP_"

_REGISTRY: List[Type[BaseModel]] = []

# Values a preset puts between the defaults and the config file
PRESETS: Dict[str, Dict[str, Any]] = {
    "full-scale": {
        "n": 255, "raw_seconds": 30.0, "raw_fps": 15, "height": 224, "width": 224,
        "train_ratio": 185 / 255, "val_ratio": 35 / 255, "test_ratio": 35 / 255,
        "tail_seconds": 10.0, "fps": 15, "window_seconds": 2.0, "target_size": 224, "max_windows": 0,
        "lr": 1e-4, "epochs": 50,
    },
    "desk": {
        "n": 96, "raw_seconds": 12.0, "raw_fps": 15, "height": 64, "width": 64,
        "train_ratio": 64 / 96, "val_ratio": 16 / 96, "test_ratio": 16 / 96,
        "tail_seconds": 10.0, "fps": 4, "window_seconds": 2.0, "target_size": 56, "max_windows": 2,
        "lr": 1e-3, "epochs": 30,
    },
}


class Settings(BaseModel):
    """Base for every settings group: unknown keys are rejected"""

    model_config = ConfigDict(extra="forbid", validate_assignment=True)

    def __init_subclass__(cls, **kwargs):
        super().__init_subclass__(**kwargs)
        _REGISTRY.append(cls)

    def echo(self) -> str:
        return ", ".join(f"{key}={value}" for key, value in self.model_dump().items())


class RunSettings(Settings):
    """Options shared by every command"""

    run_dir: Path = Field(Path("runs/default"), description="Directory holding every artifact of the run")
    threads: int = Field(1, ge=1, description="Worker threads; 1 guarantees byte-identical outputs")
    seed: int = Field(0, ge=0, description="Master seed")
    deterministic: bool = Field(True, description="Zero wall-clock columns so outputs are byte-identical")
    log_level: Optional[str] = Field(None, description="Logging level; LOG_LEVEL or INFO when unset")
    preset: str = Field("full-scale", description="Value preset: full-scale or desk")


def normalize_key(key: str) -> str:
    return key.strip().lower().replace("-", "_")


def known_keys() -> Dict[str, Tuple[Any, str]]:
    """Every configuration key with its default and description"""
    keys: Dict[str, Tuple[Any, str]] = {}
    for model in _REGISTRY:
        for name, info in model.model_fields.items():
            keys.setdefault(name, (info.default, info.description or ""))
    return keys


def parse_config_file(path: Optional[Path]) -> Dict[str, str]:
    """Read `key = value` lines; '#' starts a comment"""
    if path is None:
        return {}
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"Config file not found: {path}")
    values: Dict[str, str] = {}
    for number, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{number}: expected 'key = value', got '{raw.strip()}'")
        key, value = line.split("=", 1)
        key = normalize_key(key)
        if key not in known_keys():
            raise ConfigError(f"{path}:{number}: unknown configuration key '{key}'")
        values[key] = value.strip()
    return values


def env_values(fields: Iterable[str]) -> Dict[str, str]:
    load_dotenv()
    found = {}
    for name in fields:
        value = os.getenv(ENV_PREFIX + name.upper())
        if value is not None:
            found[name] = value
    return found


def resolve(model: Type[Settings], cli: Optional[Dict[str, Any]] = None,
            file_values: Optional[Dict[str, str]] = None, preset: Optional[str] = None) -> Settings:
    """Build a settings object from every layer; flags left as None fall through"""
    fields = model.model_fields.keys()
    merged: Dict[str, Any] = {}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"Unknown preset '{preset}', expected one of {', '.join(PRESETS)}")
        merged.update({k: v for k, v in PRESETS[preset].items() if k in fields})
    merged.update({k: v for k, v in (file_values or {}).items() if k in fields})
    merged.update(env_values(fields))
    merged.update({k: v for k, v in (cli or {}).items() if k in fields and v is not None})
    try:
        return model(**merged)
    except ValidationError as e:
        problems = "; ".join(f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in e.errors())
        raise ConfigError(f"Invalid {model.__name__}: {problems}") from e


def describe_keys() -> str:
    """One line per key, used in --help"""
    lines = []
    for key, (default, description) in sorted(known_keys().items()):
        lines.append(f"{key} = {default}  ({description})")
    return "\n".join(lines)
