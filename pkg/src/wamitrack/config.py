"""Pipeline configuration: INI file with ``[full]``/``[aoi]`` profiles and a ``[tracker]`` section.

Example::

    [pipeline]
    profile = aoi
    registration = direct
    seed = 0

    [aoi]
    history = 5
    tau = 5
    phi = 0.8

    [tracker]
    theta = 35
"""
from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .background import AOI_PROFILE, FULL_PROFILE, SubtractionConfig
from .detector import DetectorConfig
from .gmphd import PhdConfig

__all__ = ["PipelineConfig", "ConfigError", "load_config", "write_config", "PROFILE_DEFAULTS"]

PROFILE_DEFAULTS = {"full": FULL_PROFILE, "aoi": AOI_PROFILE}
REGISTRATION_MODES = ("feature", "direct")
# profile-section keys: subtraction fields plus the two network thresholds
_SUB_KEYS = {"history": int, "tau": float, "open_kernel": str, "brightness_radius": int}
_DET_KEYS = {"phi": float, "kappa": float}
_PIPE_KEYS = {"profile": str, "registration": str, "seed": int}


class ConfigError(ValueError):
    pass


@dataclass
class PipelineConfig:
    profile: str = "full"
    registration: str = "feature"
    seed: int = 0
    subtraction: SubtractionConfig = field(default_factory=lambda: FULL_PROFILE)
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    tracker: PhdConfig = field(default_factory=PhdConfig)

    @classmethod
    def for_profile(cls, profile: str, registration: str | None = None) -> "PipelineConfig":
        if profile not in PROFILE_DEFAULTS:
            raise ConfigError(f"unknown profile {profile!r}; choose from {sorted(PROFILE_DEFAULTS)}")
        # full frames register by features, AOI crops directly
        reg = registration or ("feature" if profile == "full" else "direct")
        return cls(profile=profile, registration=reg, subtraction=PROFILE_DEFAULTS[profile])


def _parse_kernel(text: str) -> tuple[int, int]:
    try:
        a, b = (int(v) for v in text.lower().replace(" ", "").split("x"))
    except ValueError:
        raise ConfigError(f"open_kernel must look like 3x3, got {text!r}") from None
    if a < 1 or b < 1:
        raise ConfigError("open_kernel sides must be positive")
    return a, b


def _typed(section: str, key: str, raw: str, kind):
    try:
        return kind(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot read {raw!r} as {kind.__name__}") from None


def load_config(path=None, profile: str | None = None, registration: str | None = None) -> PipelineConfig:
    """Read ``path`` (optional) over the profile defaults; unknown sections or keys are errors.

    ``profile`` and ``registration`` given here override the file.
    """
    parser = configparser.ConfigParser(interpolation=None)
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        try:
            parser.read(p)
        except configparser.Error as exc:
            raise ConfigError(f"{p}: {exc}") from None
    allowed = {"pipeline", "tracker", *PROFILE_DEFAULTS}
    extra = set(parser.sections()) - allowed
    if extra:
        raise ConfigError(f"unknown config sections: {sorted(extra)}")

    pipe = {}
    if parser.has_section("pipeline"):
        for k, v in parser.items("pipeline"):
            if k not in _PIPE_KEYS:
                raise ConfigError(f"[pipeline] unknown key {k!r}")
            pipe[k] = _typed("pipeline", k, v, _PIPE_KEYS[k])
    prof = profile or pipe.get("profile", "full")
    cfg = PipelineConfig.for_profile(prof, registration or pipe.get("registration"))
    if cfg.registration not in REGISTRATION_MODES:
        raise ConfigError(f"registration must be one of {REGISTRATION_MODES}")
    cfg.seed = pipe.get("seed", 0)

    if parser.has_section(prof):
        sub, det = {}, {}
        for k, v in parser.items(prof):
            if k == "open_kernel":
                sub[k] = _parse_kernel(v)
            elif k in _SUB_KEYS:
                sub[k] = _typed(prof, k, v, _SUB_KEYS[k])
            elif k in _DET_KEYS:
                det[k] = _typed(prof, k, v, _DET_KEYS[k])
            else:
                raise ConfigError(f"[{prof}] unknown key {k!r}")
        try:
            cfg.subtraction = replace(cfg.subtraction, **sub)
            cfg.detector = replace(cfg.detector, **det)
        except ValueError as exc:
            raise ConfigError(f"[{prof}] {exc}") from None
    # the other profile section is still checked for typos
    for other in set(PROFILE_DEFAULTS) - {prof}:
        if parser.has_section(other):
            bad = set(parser.options(other)) - set(_SUB_KEYS) - set(_DET_KEYS)
            if bad:
                raise ConfigError(f"[{other}] unknown keys {sorted(bad)}")

    if parser.has_section("tracker"):
        try:
            cfg.tracker = PhdConfig.from_mapping(dict(parser.items("tracker")))
        except ValueError as exc:
            raise ConfigError(f"[tracker] {exc}") from None
    return cfg


def write_config(path, cfg: PipelineConfig) -> None:
    """Write every setting so the file fully determines a run."""
    parser = configparser.ConfigParser(interpolation=None)
    parser["pipeline"] = {"profile": cfg.profile, "registration": cfg.registration, "seed": str(cfg.seed)}
    s = cfg.subtraction
    parser[cfg.profile] = {
        "history": str(s.history), "tau": repr(float(s.tau)),
        "open_kernel": f"{s.open_kernel[0]}x{s.open_kernel[1]}", "brightness_radius": str(s.brightness_radius),
        "phi": repr(float(cfg.detector.phi)), "kappa": repr(float(cfg.detector.kappa)),
    }
    parser["tracker"] = {f.name: repr(getattr(cfg.tracker, f.name)) for f in fields(PhdConfig)}
    with open(path, "w") as fh:
        parser.write(fh)


def describe(cfg: PipelineConfig) -> dict:
    out = {"profile": cfg.profile, "registration": cfg.registration, "seed": cfg.seed}
    out.update({f"subtraction.{k}": v for k, v in asdict(cfg.subtraction).items()})
    out.update({f"detector.{k}": v for k, v in asdict(cfg.detector).items()})
    out.update({f"tracker.{k}": v for k, v in asdict(cfg.tracker).items()})
    return out
