"""
Run configuration for fiberheom.

Loads a YAML (or JSON) run document with environment variable and CLI
overrides, validated by pydantic models.
"""

from __future__ import annotations

import logging
import os
from enum import Enum
from pathlib import Path
from typing import Any

import numpy as np
import yaml
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    ValidationError,
    field_validator,
    model_validator,
)

from fiberheom.control import (
    DEFAULT_PULSE_WIDTH,
    PulseKind,
    PulseMode,
    PulseSequence,
    build_sequence,
)
from fiberheom.heom import IntegratorConfig
from fiberheom.model import ModelConfig, derive_params, distance_to_time

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Configuration document is malformed or violates a constraint."""


class Experiment(str, Enum):
    DECAY = "decay"
    MAP = "map"
    DD = "dd"
    DD_MAP = "dd-map"
    VALIDATE = "validate"
    CONVERGE = "converge"


_SWEEP_REQUIRED = {Experiment.MAP, Experiment.DD_MAP}
_SWEEP_ALLOWED = _SWEEP_REQUIRED | {Experiment.VALIDATE}
_SCHEDULE_USED = {Experiment.DD, Experiment.DD_MAP}


def _default_eta_list() -> list[float]:
    return np.geomspace(0.01, 0.2, 6).tolist()


def _default_lc_list() -> list[float]:
    return np.geomspace(0.01, 1.0, 6).tolist()


class ScheduleConfig(BaseModel):
    """Decoupling schedule descriptor; pulse times follow from the run length."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: PulseKind = Field(default=PulseKind.CPMG)
    n_pulses: int = Field(default=100, ge=1)
    mode: PulseMode = Field(default=PulseMode.IDEAL)
    width_us: float = Field(default=DEFAULT_PULSE_WIDTH, gt=0)

    def to_sequence(self, total_time: float, kind: PulseKind | None = None) -> PulseSequence:
        return build_sequence(
            kind or self.kind, self.n_pulses, total_time, mode=self.mode, width=self.width_us
        )


class SweepConfig(BaseModel):
    """(eta, L_c) grid axes."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    eta_list: list[float] = Field(default_factory=_default_eta_list, min_length=1)
    lc_list_km: list[float] = Field(default_factory=_default_lc_list, min_length=1)

    @field_validator("eta_list")
    @classmethod
    def _check_eta(cls, values: list[float]) -> list[float]:
        for eta in values:
            if not 0.0 <= eta <= 1.0:
                raise ValueError(f"eta values must lie in [0, 1], got {eta}")
        return values

    @field_validator("lc_list_km")
    @classmethod
    def _check_lc(cls, values: list[float]) -> list[float]:
        for lc in values:
            if lc <= 0:
                raise ValueError(f"correlation lengths must be positive, got {lc}")
        return values


class RunConfig(BaseModel):
    """Main configuration."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    experiment: Experiment
    model: ModelConfig
    integrator: IntegratorConfig = Field(default_factory=IntegratorConfig)
    schedule: ScheduleConfig | None = Field(default=None)
    sweep: SweepConfig | None = Field(default=None)
    total_distance_km: float = Field(default=5.0, gt=0)
    threshold: float = Field(default=0.1, gt=0, lt=1)
    output_path: str | None = Field(default=None)
    workers: int | None = Field(default=None, ge=1)

    @model_validator(mode="before")
    @classmethod
    def _fill_sections(cls, data: Any) -> Any:
        if not isinstance(data, dict):
            return data
        try:
            experiment = Experiment(data.get("experiment"))
        except ValueError:
            return data
        data = dict(data)
        if experiment in _SWEEP_REQUIRED and data.get("sweep") is None:
            data["sweep"] = {}
        if experiment in _SCHEDULE_USED and data.get("schedule") is None:
            data["schedule"] = {}
        return data

    @model_validator(mode="after")
    def _check_sections(self) -> RunConfig:
        name = self.experiment.value
        if self.sweep is not None:
            if self.experiment not in _SWEEP_ALLOWED:
                raise ValueError(f"sweep is not used by experiment '{name}'")
            if self.experiment in _SWEEP_REQUIRED and (
                len(self.sweep.eta_list) < 2 or len(self.sweep.lc_list_km) < 2
            ):
                raise ValueError(f"sweep lists need at least 2 values for experiment '{name}'")
        if self.schedule is not None and self.experiment not in _SCHEDULE_USED:
            raise ValueError(f"schedule is not used by experiment '{name}'")
        return self

    @property
    def total_time_us(self) -> float:
        return distance_to_time(self.total_distance_km, derive_params(self.model.fiber).v_f)


# -------------------------
# Loading
# -------------------------

ENV_OVERRIDES = {
    "FIBERHEOM_NC": ("integrator.max_depth", int),
    "FIBERHEOM_DT": ("integrator.dt", float),
    "FIBERHEOM_WORKERS": ("workers", int),
    "FIBERHEOM_OUTPUT": ("output_path", str),
}


def _format_validation_error(error: ValidationError) -> str:
    lines = []
    for item in error.errors():
        path = ".".join(str(part) for part in item["loc"]) or "<root>"
        lines.append(f"{path}: {item['msg']}")
    return "; ".join(lines)


def _set_path(document: dict[str, Any], dotted: str, value: Any) -> None:
    *sections, key = dotted.split(".")
    node = document
    for section in sections:
        child = node.get(section)
        if not isinstance(child, dict):
            child = {}
            node[section] = child
        node = child
    node[key] = value


def parse_config(text: str) -> RunConfig:
    """
    Parse and validate a run document.

    Args:
        text: YAML or JSON document

    Returns:
        Validated RunConfig with defaults applied

    Raises:
        ConfigError: On syntax errors, unknown keys or violated constraints
    """
    return _validate(_parse_document(text))


def _parse_document(text: str) -> dict[str, Any]:
    try:
        document = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigError(f"syntax error: {e}") from e
    if document is None:
        return {}
    if not isinstance(document, dict):
        raise ConfigError(f"config root must be a mapping, got {type(document).__name__}")
    return document


def _validate(document: dict[str, Any]) -> RunConfig:
    try:
        return RunConfig(**document)
    except ValidationError as e:
        raise ConfigError(_format_validation_error(e)) from e


def load_config(path: Path | str, overrides: dict[str, Any] | None = None) -> RunConfig:
    """
    Load a run configuration file with overrides.

    Priority (highest to lowest):
    1. ``overrides`` (CLI flags), keyed by dotted path
    2. Environment variables (FIBERHEOM_*)
    3. Config file
    4. Defaults

    Args:
        path: Path to a YAML/JSON config
        overrides: Mapping such as {"integrator.max_depth": 12}; None values are ignored

    Returns:
        Loaded and validated configuration

    Environment variable overrides:
        FIBERHEOM_NC: Override integrator.max_depth
        FIBERHEOM_DT: Override integrator.dt
        FIBERHEOM_WORKERS: Override workers
        FIBERHEOM_OUTPUT: Override output_path

    Raises:
        ConfigError: If the file cannot be read or fails validation
    """
    path = Path(path)
    logger.info(f"Loading configuration from {path}")
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from e

    document = _parse_document(text)

    for env_var, (dotted, convert) in ENV_OVERRIDES.items():
        if env_var in os.environ:
            raw = os.environ[env_var]
            try:
                value = convert(raw)
            except ValueError as e:
                raise ConfigError(f"{env_var}={raw!r} is not a valid {convert.__name__}") from e
            _set_path(document, dotted, value)
            logger.info(f"Override from {env_var}: {dotted} = {value}")

    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        _set_path(document, dotted, value)
        logger.info(f"Override from command line: {dotted} = {value}")

    try:
        config = _validate(document)
    except ConfigError as e:
        logger.error(f"Failed to load configuration: {e}")
        raise

    derived = derive_params(config.model.fiber)
    logger.info("Configuration loaded successfully")
    logger.info(f"  Experiment: {config.experiment.value}")
    logger.info(
        f"  Fiber: eta={derived.eta:.4g}, L_c={config.model.fiber.correlation_length_km} km, "
        f"Omega={derived.Omega:.4g} rad/us, gamma={derived.gamma:.4g} 1/us"
    )
    model = config.model
    logger.info(f"  Topology: {model.topology.value}, state: {model.initial_state.value}")
    logger.info(f"  Integrator: dt={config.integrator.dt} us, N_c={config.integrator.max_depth}")
    logger.info(f"  Distance: {config.total_distance_km} km")
    return config
