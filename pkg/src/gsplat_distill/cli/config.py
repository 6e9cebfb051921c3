"""Flat ``section.key=value`` run configuration."""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from ..scene import CameraSamplerConfig, RenderSettings
from ..trainer import DensifyConfig, NoiseConfig, OptimConfig, TrainConfig
from ..vgs import VGSConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class GuideConfig:
    provider: str = "synthetic"  # identity | targets | synthetic
    targets: str = ""
    heldout: str = ""
    prior_std: float = 0.0


@dataclass(frozen=True)
class OutputConfig:
    checkpoint_interval: int = 500
    turntable_poses: int = 36
    turntable_elevation: float = 15.0
    turntable_radius: float = 1.0
    turntable_fov: float = 50.0
    turntable_resolution: int = 64


@dataclass(frozen=True)
class ViewConfig:
    azimuth: float = 0.0
    elevation: float = 0.0
    radius: float = 1.0
    fov_y: float = 50.0
    width: int = 64
    height: int = 64


@dataclass(frozen=True)
class ConsistencyConfig:
    poses: int = 100
    elevation: float = 30.0
    radius: float = 1.0
    fov_y: float = 50.0
    resolution: int = 64


@dataclass(frozen=True)
class NoiseStatsConfig:
    samples: int = 10000
    seed: int = 0
    resolution: int = 64
    azimuth: float = 0.0
    elevation: float = 15.0
    fov_y: float = 50.0
    pair_delta: float = 5.0
    rho: float = 1.0


@dataclass(frozen=True)
class GradcheckConfig:
    scenes: int = 20
    vgs_scenes: int = 5
    seed: int = 0
    resolution: int = 16
    max_gaussians: int = 8
    h: float = 1e-4
    tolerance: float = 1e-4
    sigma: float = 0.5


PROVIDERS = ("identity", "targets", "synthetic")

_NESTED = ("camera", "render", "optim", "densify", "noise", "vgs")

SECTIONS: dict[str, type] = {
    "trainer": TrainConfig,
    "camera": CameraSamplerConfig,
    "render": RenderSettings,
    "optim": OptimConfig,
    "densify": DensifyConfig,
    "noise": NoiseConfig,
    "vgs": VGSConfig,
    "guide": GuideConfig,
    "output": OutputConfig,
    "view": ViewConfig,
    "consistency": ConsistencyConfig,
    "noise_stats": NoiseStatsConfig,
    "gradcheck": GradcheckConfig,
}

# keys owned by another section (camera resolution follows trainer.resolution)
_SKIP = {("camera", "width"), ("camera", "height")} | {("trainer", n) for n in _NESTED}


def defaults() -> dict[str, object]:
    out = {}
    for section, cls in SECTIONS.items():
        inst = cls()
        for f in fields(cls):
            if (section, f.name) in _SKIP:
                continue
            out[f"{section}.{f.name}"] = getattr(inst, f.name)
    return out


def format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ",".join(format_value(float(x)) for x in v)
    return str(v)


def parse_value(key: str, default, text: str):
    text = text.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            parts = tuple(float(p) for p in text.split(","))
            if len(parts) != len(default):
                raise ValueError(f"expected {len(default)} comma-separated values")
            return parts
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {text!r} ({exc})") from None
    return text


def parse_lines(lines, source: str = "<config>") -> dict[str, str]:
    """``key=value`` lines; blank lines and ``#`` comments ignored."""
    out = {}
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def resolve(overrides: dict[str, str]) -> dict[str, object]:
    cfg = defaults()
    unknown = sorted(set(overrides) - set(cfg))
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    for key, text in overrides.items():
        cfg[key] = parse_value(key, cfg[key], text)
    try:
        build_train_config(cfg)
        for section in ("guide", "output", "view", "consistency", "noise_stats", "gradcheck"):
            section_config(cfg, section)
        if cfg["guide.provider"] not in PROVIDERS:
            raise ConfigError(f"guide.provider must be one of {', '.join(PROVIDERS)}, got {cfg['guide.provider']!r}")
    except (ValueError, TypeError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None
    return cfg


def load(path: str | Path | None, sets: list[str] = (), seed: int | None = None) -> dict[str, object]:
    overrides = {}
    if path is not None:
        p = Path(path)
        try:
            text = p.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {p}: {exc}") from None
        overrides.update(parse_lines(text.splitlines(), str(p)))
    overrides.update(parse_lines(sets, "--set"))
    if seed is not None:
        # one flag reseeds the run; the noise field geometry keeps its own seed
        for key in defaults():
            if key.endswith(".seed") and not key.startswith("noise."):
                overrides[key] = str(seed)
    return resolve(overrides)


def dump(cfg: dict[str, object]) -> str:
    return "".join(f"{k}={format_value(cfg[k])}\n" for k in sorted(cfg))


def section_config(cfg: dict[str, object], section: str):
    cls = SECTIONS[section]
    kwargs = {f.name: cfg[f"{section}.{f.name}"] for f in fields(cls) if (section, f.name) not in _SKIP}
    return cls(**kwargs)


def build_train_config(cfg: dict[str, object]) -> TrainConfig:
    nested = {name: section_config(cfg, name) for name in _NESTED}
    scalars = {f.name: cfg[f"trainer.{f.name}"] for f in fields(TrainConfig) if f.name not in _NESTED}
    return TrainConfig(**scalars, **nested)

