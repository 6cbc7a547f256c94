"""Run configuration.

Defaults can be overridden through ``PEAKLAB_*`` environment variables; command
line flags override both.
"""
import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Tuple

from peaklab.errors import ConfigError

ENV_PREFIX = "PEAKLAB_"

METHODS = ("proposed", "spikem", "powerlaw", "lr")
PRIORS = ("none", "anticipation", "anticipation-category")
FEATURE_SETS = ("response", "response-opp", "spikem-opp", "powerlaw", "fraction")
CLUSTER_FEATURES = ("proposed", "spikem", "powerlaw", "fraction")


def env_str(name, default):
    return os.environ.get(ENV_PREFIX + name, default)


def env_int(name, default):
    raw = os.environ.get(ENV_PREFIX + name)
    if raw is None or raw == "":
        return default
    try:
        return int(raw)
    except ValueError as exc:
        raise ConfigError(f"{ENV_PREFIX}{name} must be an integer, got {raw!r}") from exc


def env_float(name, default):
    raw = os.environ.get(ENV_PREFIX + name)
    if raw is None or raw == "":
        return default
    try:
        return float(raw)
    except ValueError as exc:
        raise ConfigError(f"{ENV_PREFIX}{name} must be a number, got {raw!r}") from exc


def parse_list(value, default, cast=str):
    raw = value or default
    parts = [item.strip() for item in raw.replace(",", " ").split()]
    return [cast(item) for item in parts if item]


def env_list(name, default, cast=str):
    return parse_list(os.environ.get(ENV_PREFIX + name), default, cast)


@dataclass(frozen=True)
class RunConfig:
    command: str = ""
    manifest: Optional[str] = None
    series_dir: Optional[str] = None
    dump_dir: Optional[str] = None
    out: str = "out"
    seed: int = 0
    t_obs: Tuple[int, ...] = (24,)
    horizon: int = 168
    k_min: int = 1
    k_max: int = 12
    restarts: int = 200
    threshold: float = 100.0
    max_missing: float = 0.2
    project: str = "en"
    method: str = "proposed"
    prior: str = "anticipation-category"
    regressor: str = "log"
    feature_set: str = "response-opp"
    cluster_features: str = "proposed"
    circadian_features: str = "raw"
    standardize: bool = True
    folds: int = 5
    svm_c: float = 1.0
    n_events: int = 100
    workers: int = 1
    fail_fast: bool = False
    extra: Tuple[Tuple[str, str], ...] = field(default_factory=tuple)

    def validate(self):
        if self.horizon <= 0:
            raise ConfigError("--horizon must be positive")
        for t_obs in self.t_obs:
            if not 0 < t_obs < self.horizon:
                raise ConfigError(
                    f"--t-obs {t_obs} must lie strictly between 0 and the horizon {self.horizon}"
                )
        if self.k_min < 1 or self.k_max < self.k_min:
            raise ConfigError(f"invalid K range [{self.k_min}, {self.k_max}]")
        if self.restarts < 1:
            raise ConfigError("--restarts must be >= 1")
        if not 0.0 <= self.max_missing < 1.0:
            raise ConfigError("max_missing must lie in [0, 1)")
        if self.method not in METHODS + ("all",):
            raise ConfigError(f"unknown method {self.method!r}")
        if self.prior not in PRIORS:
            raise ConfigError(f"unknown prior {self.prior!r}")
        if self.regressor not in ("log", "raw"):
            raise ConfigError(f"unknown regressor scale {self.regressor!r}")
        if self.feature_set not in FEATURE_SETS:
            raise ConfigError(f"unknown feature set {self.feature_set!r}")
        if self.cluster_features not in CLUSTER_FEATURES:
            raise ConfigError(f"unknown cluster features {self.cluster_features!r}")
        if self.circadian_features not in ("raw", "sincos"):
            raise ConfigError(f"unknown circadian feature mode {self.circadian_features!r}")
        if self.folds < 2:
            raise ConfigError("--folds must be >= 2")
        return self

    @property
    def methods(self):
        return METHODS if self.method == "all" else (self.method,)

    @property
    def out_dir(self):
        return Path(self.out).expanduser()

    def to_dict(self):
        data = dataclasses.asdict(self)
        data["t_obs"] = list(self.t_obs)
        data["extra"] = [list(item) for item in self.extra]
        return data


def default_config(**overrides):
    """RunConfig seeded from the environment, then ``overrides``."""
    base = dict(
        seed=env_int("SEED", 0),
        restarts=env_int("RESTARTS", 200),
        threshold=env_float("THRESHOLD", 100.0),
        max_missing=env_float("MAX_MISSING", 0.2),
        project=env_str("PROJECT", "en"),
        workers=env_int("WORKERS", 1),
    )
    base.update({key: value for key, value in overrides.items() if value is not None})
    return RunConfig(**base).validate()


def config_hash(config):
    data = config.to_dict()
    data.pop("out", None)
    data.pop("workers", None)
    canonical = json.dumps(data, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]
