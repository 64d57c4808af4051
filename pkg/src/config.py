"""
Run configuration.

Each value resolves from the command-line flag, then the run config file
(KEY=value lines read with python-dotenv), then the PSFORGE_<KEY>
environment variable, then the default.
"""
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Callable, Dict, Mapping, Optional
import hashlib
import json
import logging
import os

from dotenv import dotenv_values

from errors import ContractViolationError, InputNotFoundError
from sampler import SamplingThresholds

logger = logging.getLogger(__name__)

ENV_PREFIX = "PSFORGE_"
# settings that cannot change output content
HASH_EXCLUDED = ("threads", "out_dir", "scene_dir", "images_dir")


def _parse_bool(value: str) -> bool:
    text = str(value).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off", ""):
        return False
    raise ValueError(f"not a boolean: {value!r}")


KEY_TYPES: Dict[str, Callable[[str], Any]] = {
    "scene_dir": str,
    "images_dir": str,
    "out_dir": str,
    "scene_name": str,
    "sc_th": float,
    "min_v_th": float,
    "max_v_th": float,
    "scale_jump": float,
    "planar_scene": _parse_bool,
    "scale_min": float,
    "scale_max": float,
    "margin": float,
    "seed": int,
    "threads": int,
    "rotation_sign": int,
}


@dataclass(frozen=True)
class RunConfig:
    scene_dir: Optional[str] = None
    images_dir: Optional[str] = None
    out_dir: str = "dataset"
    scene_name: str = ""
    sc_th: float = 2.5
    min_v_th: float = 25.0
    # None resolves to 50, or 75 for planar scenes
    max_v_th: Optional[float] = None
    scale_jump: float = 1.5
    planar_scene: bool = False
    scale_min: float = 1.6
    scale_max: float = 15.0
    margin: float = 1.0
    seed: int = 0
    threads: int = 1
    rotation_sign: int = 1

    def __post_init__(self):
        if self.threads < 1:
            raise ContractViolationError(f"threads must be >= 1, got {self.threads}")
        if self.rotation_sign not in (1, -1):
            raise ContractViolationError(f"rotation_sign must be 1 or -1, got {self.rotation_sign}")
        if not 0 < self.scale_min <= self.scale_max:
            raise ContractViolationError(f"Invalid scale clamp [{self.scale_min}, {self.scale_max}]")
        if not self.margin > 0:
            raise ContractViolationError(f"margin must be positive, got {self.margin}")
        # raises on invalid threshold combinations
        self.thresholds()

    def thresholds(self) -> SamplingThresholds:
        return SamplingThresholds.for_scene(
            self.planar_scene, sc_th=self.sc_th, min_v_th=self.min_v_th,
            max_v_th=self.max_v_th, scale_jump=self.scale_jump)

    @property
    def scale_clamp(self):
        return (self.scale_min, self.scale_max)

    @property
    def resolved_scene_name(self) -> str:
        if self.scene_name:
            return self.scene_name
        return Path(self.scene_dir).resolve().name if self.scene_dir else ""

    def content_settings(self) -> Dict[str, Any]:
        """Every setting that influences output content, with thresholds resolved."""
        settings = {k: v for k, v in asdict(self).items() if k not in HASH_EXCLUDED}
        settings["scene_name"] = self.resolved_scene_name
        settings.update(asdict(self.thresholds()))
        return settings

    def config_hash(self) -> str:
        canonical = json.dumps(self.content_settings(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _convert(key: str, value, source: str):
    try:
        return KEY_TYPES[key](value)
    except (TypeError, ValueError) as e:
        raise ContractViolationError(f"Invalid value {value!r} for {key.upper()} from {source}: {e}") from e


def load_config(config_path=None, overrides: Mapping[str, Any] = None,
                environ: Mapping[str, str] = None) -> RunConfig:
    """Resolve a RunConfig: overrides (flags) > config file > environment > defaults."""
    overrides = overrides or {}
    environ = os.environ if environ is None else environ

    file_values: Dict[str, str] = {}
    if config_path:
        path = Path(config_path)
        if not path.is_file():
            logger.error(f"Config file not found: {path}")
            raise InputNotFoundError(f"Missing config file: {path}")
        for key, value in dotenv_values(path).items():
            normalized = key.strip().lower()
            if normalized not in KEY_TYPES:
                logger.warning(f"Ignoring unknown config key {key} in {path}")
                continue
            if value is not None:
                file_values[normalized] = value

    values: Dict[str, Any] = {}
    for key in KEY_TYPES:
        if overrides.get(key) is not None:
            values[key] = _convert(key, overrides[key], "command line")
        elif key in file_values:
            values[key] = _convert(key, file_values[key], str(config_path))
        elif environ.get(ENV_PREFIX + key.upper()) is not None:
            values[key] = _convert(key, environ[ENV_PREFIX + key.upper()], ENV_PREFIX + key.upper())

    config = RunConfig(**values)
    logger.debug(f"Resolved run config {config} (hash {config.config_hash()[:12]})")
    return config
