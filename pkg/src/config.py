# src/config.py
"""Run configuration: dataclass defaults, key=value config files and environment.

Precedence, highest first: command-line flag > --config file > environment > defaults.
"""
import logging
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Dict, Optional

from src.errors import ConfigError

logger = logging.getLogger(__name__)

THREADS_ENV = "AFFINA_THREADS"


@dataclass
class DetectorConfig:
    """Detector thresholds and channel selection"""
    channels: str = "default"
    n_octaves: int = 4
    edge_ratio: float = 10.0
    contrast: float = 0.005
    # 0.8 x median |response| x 0.03
    contrast_ratio: float = 0.024
    # Harris window std in units of the candidate scale
    harris_window: float = 1.5
    refine_iterations: int = 5
    dedup_distance: float = 2.0
    dedup_scale: float = 0.2

    def channel_list(self):
        from src.services.scalespace import parse_channels
        return parse_channels(self.channels)


@dataclass
class DescriptorConfig:
    """Patch geometry and histogram layout of the descriptor"""
    side: int = 16
    half_extent: float = 6.0
    orientation_bins: int = 36
    orientation_window: float = 1.5
    # side of the sampled square, in units of sigma
    orientation_region: float = 3.0
    peak_ratio: float = 0.8
    clamp: float = 0.2


@dataclass
class MatcherConfig:
    ratio: float = 0.8
    mutual: bool = False


@dataclass
class VerifyConfig:
    """LDR histogram and chi-square settings"""
    bins: int = 25
    ldr_range: float = 2.5
    alpha: float = 0.01
    normalize: bool = True
    max_iterations: int = 200
    tolerance: float = 1e-10
    confidence_floor: float = 6.0


@dataclass
class EvalConfig:
    overlap: float = 0.4
    region_scale: float = 3.0
    debug: bool = False


@dataclass
class RunConfig:
    """Everything a subcommand needs"""
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    descriptor: DescriptorConfig = field(default_factory=DescriptorConfig)
    matcher: MatcherConfig = field(default_factory=MatcherConfig)
    verify: VerifyConfig = field(default_factory=VerifyConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    seed: int = 0
    threads: int = 1
    debug_dir: Optional[str] = None


# config-file key -> (section, attribute); section None means RunConfig itself
CONFIG_KEYS = {
    "channels": ("detector", "channels"),
    "octaves": ("detector", "n_octaves"),
    "edge_ratio": ("detector", "edge_ratio"),
    "contrast": ("detector", "contrast"),
    "contrast_ratio": ("detector", "contrast_ratio"),
    "harris_window": ("detector", "harris_window"),
    "ratio": ("matcher", "ratio"),
    "mutual": ("matcher", "mutual"),
    "bins": ("verify", "bins"),
    "ldr_range": ("verify", "ldr_range"),
    "alpha": ("verify", "alpha"),
    "overlap": ("eval", "overlap"),
    "seed": (None, "seed"),
    "threads": (None, "threads"),
    "debug_dir": (None, "debug_dir"),
}

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def read_config_file(path) -> Dict[str, str]:
    """Parse a key=value file; '#' starts a comment"""
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise ConfigError(f"Cannot read config file {path}: {e}")

    values = {}
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got '{raw.strip()}'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown key '{key}'")
        values[key] = value
    return values


def _coerce(key, value, current):
    if isinstance(current, bool):
        text = str(value).strip().lower()
        if text in _TRUE:
            return True
        if text in _FALSE:
            return False
        raise ConfigError(f"Invalid boolean for {key}: '{value}'")
    try:
        if isinstance(current, int):
            return int(value)
        if isinstance(current, float):
            return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"Invalid value for {key}: '{value}'")
    return None if value in (None, "") else str(value)


def apply_settings(cfg: RunConfig, settings: Dict[str, object]) -> RunConfig:
    """Write key=value settings into cfg; unknown keys are rejected"""
    for key, value in settings.items():
        if key not in CONFIG_KEYS:
            raise ConfigError(f"Unknown config key '{key}'")
        section, attr = CONFIG_KEYS[key]
        target = cfg if section is None else getattr(cfg, section)
        current = getattr(target, attr)
        if current is None:
            current = ""
        setattr(target, attr, _coerce(key, value, current))
    return cfg


def default_threads() -> int:
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got '{env}'")
    return os.cpu_count() or 1


def load_run_config(config_path=None, overrides: Optional[Dict[str, object]] = None) -> RunConfig:
    """Defaults, then environment, then config file, then flag overrides"""
    cfg = RunConfig(threads=default_threads())
    if config_path:
        settings = read_config_file(config_path)
        logger.info(f"Loaded {len(settings)} setting(s) from {config_path}")
        apply_settings(cfg, settings)
    if overrides:
        apply_settings(cfg, {k: v for k, v in overrides.items() if v is not None})
    validate(cfg)
    return cfg


def validate(cfg: RunConfig):
    if cfg.detector.n_octaves < 1:
        raise ConfigError("octaves must be >= 1")
    if cfg.detector.edge_ratio <= 0:
        raise ConfigError("edge_ratio must be positive")
    if cfg.detector.harris_window <= 0:
        raise ConfigError("harris_window must be positive")
    if cfg.detector.contrast < 0 or cfg.detector.contrast_ratio < 0:
        raise ConfigError("contrast and contrast_ratio must be >= 0")
    if not 0 < cfg.matcher.ratio <= 1:
        raise ConfigError("ratio must be in (0, 1]")
    if cfg.verify.bins < 5:
        raise ConfigError("bins must be >= 5")
    if not 0 < cfg.verify.alpha < 1:
        raise ConfigError("alpha must be in (0, 1)")
    if cfg.eval.overlap <= 0:
        raise ConfigError("overlap must be positive")
    if cfg.threads < 1:
        raise ConfigError("threads must be >= 1")


def as_dict(obj) -> Dict[str, object]:
    return {f.name: getattr(obj, f.name) for f in fields(obj)}


__all__ = [
    'DetectorConfig', 'DescriptorConfig', 'MatcherConfig', 'VerifyConfig', 'EvalConfig',
    'RunConfig', 'CONFIG_KEYS', 'read_config_file', 'apply_settings', 'load_run_config',
    'default_threads', 'validate', 'as_dict',
]
