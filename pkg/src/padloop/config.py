"""Run configuration: nested frozen dataclasses loaded from YAML or JSON.

Unknown keys are rejected at every level.  ``PADLOOP_SEED`` in the
environment overrides every seed in the file (it is the only setting the
environment can change).
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .controller import (
    DEFAULT_CENTER_LEVELS,
    DEFAULT_RULES,
    OUTPUT_LABELS,
    ControllerConfig,
    FuzzyController,
    FuzzyPartition,
    RuleTable,
    StimulusLibrary,
    default_library,
)
from .dbn import TrainConfig
from .errors import InvalidInputError
from .features import FeatureMode
from .simulator import EegSynthParams, OperatorParams

SEED_ENV = "PADLOOP_SEED"


@dataclass(frozen=True)
class PathsConfig:
    datasets: str = "data"
    bundles: str = "models"
    traces: str = "traces"


@dataclass(frozen=True)
class SeedsConfig:
    data: int = 0
    train: int = 0
    simulate: int = 0


@dataclass(frozen=True)
class DataConfig:
    m_f: int = 183
    m_b: int = 60

    def __post_init__(self):
        if self.m_f < 1 or self.m_b < 1:
            raise InvalidInputError("dataset sizes must be at least 1")


@dataclass(frozen=True)
class GpConfig:
    pad_noise_var: float = 0.1  # sigma_f^2
    perf_noise_var: float = 0.01  # sigma_b^2
    n_grid: int = 10
    n_folds: int = 5
    n_repeats: int = 3
    holdout_fraction: float = 0.2
    qot_mode: str = "plugin"

    def __post_init__(self):
        if self.pad_noise_var < 0 or self.perf_noise_var < 0:
            raise InvalidInputError("noise variances must be non-negative")
        if self.n_grid < 1 or self.n_folds < 2 or self.n_repeats < 1:
            raise InvalidInputError("need n_grid >= 1, n_folds >= 2, n_repeats >= 1")
        if not (0 <= self.holdout_fraction < 1):
            raise InvalidInputError("holdout_fraction must be in [0, 1)")
        if self.qot_mode not in ("plugin", "unscented"):
            raise InvalidInputError(f"unknown qot_mode {self.qot_mode!r}")


@dataclass(frozen=True)
class ControlConfig:
    """Everything the fuzzy controller needs, in file-friendly form.

    ``library`` is a list of ``[id, pleasure, arousal, dominance]`` rows; when
    empty, a seeded default library of ``library_size`` entries is built.
    """

    q_r: float = 0.45
    beta_r: float = 0.8
    f_r: tuple = (4.5, 4.5, 4.5)
    error_range: tuple = (-1.0, 1.0)
    delta_range: tuple = (-0.5, 0.5)
    rules: tuple = DEFAULT_RULES
    centers: dict = field(default_factory=lambda: dict(DEFAULT_CENTER_LEVELS))
    library: tuple = ()
    library_size: int = 40
    library_seed: int = 7

    def build(self) -> FuzzyController:
        missing = set(OUTPUT_LABELS) - set(self.centers)
        extra = set(self.centers) - set(OUTPUT_LABELS)
        if missing or extra:
            raise InvalidInputError(f"centers need exactly the labels {OUTPUT_LABELS}")
        centers = np.array([np.broadcast_to(np.asarray(self.centers[lab], dtype=float), (3,))
                            for lab in OUTPUT_LABELS])
        if self.library:
            rows = np.asarray(self.library, dtype=float)
            if rows.ndim != 2 or rows.shape[1] != 4:
                raise InvalidInputError("library rows must be [id, pleasure, arousal, dominance]")
            library = StimulusLibrary(rows[:, 0].astype(int), rows[:, 1:])
        else:
            library = default_library(self.library_size, self.library_seed)
        return FuzzyController(
            cfg=ControllerConfig(self.q_r, self.beta_r, tuple(self.f_r)),
            error_partition=FuzzyPartition.symmetric(*self.error_range),
            delta_partition=FuzzyPartition.symmetric(*self.delta_range),
            table=RuleTable(self.rules),
            centers=centers,
            library=library,
        )


@dataclass(frozen=True)
class RunConfig:
    paths: PathsConfig = field(default_factory=PathsConfig)
    seeds: SeedsConfig = field(default_factory=SeedsConfig)
    data: DataConfig = field(default_factory=DataConfig)
    mode: str = "BANDS"
    dbn: TrainConfig = field(default_factory=TrainConfig)
    gp: GpConfig = field(default_factory=GpConfig)
    controller: ControlConfig = field(default_factory=ControlConfig)
    operator: OperatorParams = field(default_factory=OperatorParams)
    eeg: EegSynthParams = field(default_factory=EegSynthParams)
    horizon: int = 200
    control_enabled: bool = True

    def __post_init__(self):
        try:
            FeatureMode(self.mode)
        except ValueError:
            raise InvalidInputError(f"mode must be EEG or BANDS, got {self.mode!r}") from None
        if self.horizon < 1:
            raise InvalidInputError("horizon must be at least 1")

    @property
    def feature_mode(self) -> FeatureMode:
        return FeatureMode(self.mode)


def _convert(default, value, where: str, optional: bool = False):
    if value is None:
        if optional:
            return None
        raise InvalidInputError(f"{where}: a value is required")
    if dataclasses.is_dataclass(default):
        if not isinstance(value, dict):
            raise InvalidInputError(f"{where}: expected a mapping")
        return _build(type(default), value, where)
    if isinstance(default, np.ndarray):
        return np.asarray(value, dtype=float)
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise InvalidInputError(f"{where}: expected a list")
        return tuple(tuple(v) if isinstance(v, list) else v for v in value)
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise InvalidInputError(f"{where}: expected true/false")
        return value
    if isinstance(default, int) and not isinstance(value, int):
        raise InvalidInputError(f"{where}: expected an integer")
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise InvalidInputError(f"{where}: expected a number")
        return float(value)
    return value


def _build(cls, data: dict, where: str = ""):
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(names))
    if unknown:
        raise InvalidInputError(f"unknown config key(s) {', '.join((where + '.' if where else '') + k for k in unknown)}")
    defaults = cls()
    kwargs = {}
    for key, value in data.items():
        optional = "None" in str(names[key].type)
        kwargs[key] = _convert(getattr(defaults, key), value, f"{where}.{key}" if where else key, optional)
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise InvalidInputError(f"{where or 'config'}: {exc}") from None


def config_from_dict(data: dict | None) -> RunConfig:
    cfg = _build(RunConfig, data or {})
    return apply_seed_env(cfg)


def apply_seed_env(cfg: RunConfig, environ=None) -> RunConfig:
    environ = os.environ if environ is None else environ
    raw = environ.get(SEED_ENV)
    if raw is None or raw == "":
        return cfg
    try:
        seed = int(raw)
    except ValueError:
        raise InvalidInputError(f"{SEED_ENV} must be an integer, got {raw!r}") from None
    return dataclasses.replace(cfg, seeds=SeedsConfig(seed, seed, seed),
                               dbn=dataclasses.replace(cfg.dbn, seed=seed))


def load_config(path) -> RunConfig:
    """Read a YAML or JSON run config.  Missing keys take their defaults."""
    text = Path(path).read_text()
    try:
        data = json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise InvalidInputError(f"{path}: cannot parse config: {exc}") from None
    if data is not None and not isinstance(data, dict):
        raise InvalidInputError(f"{path}: top level must be a mapping")
    return config_from_dict(data)
