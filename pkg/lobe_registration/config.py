"""Typed configuration management using Pydantic."""

from __future__ import annotations

import configparser
import copy
import json
import os
from pathlib import Path
from typing import Any, Literal

from loguru import logger
from pydantic import BaseModel, Field, model_validator

# Embedding tolerance for inside tests (mm)
EMBED_EPSILON = 1e-6
# Points this close to the mesh are snapped onto it instead of rejected (mm)
SNAP_TOLERANCE = 0.1

STEP_NAMES: tuple[str, ...] = ("affine", "piecewise", "refinement")


class RegistrationConfig(BaseModel):
    """Weights, termination and discretisation of the three-step registration."""

    alpha: float = 2.0
    beta: float = 2.0
    gamma: float = 1.0
    patience: int = 20
    max_iters: int = 1000
    max_step_fraction: float = 0.05
    backtrack_factor: float = 0.5
    max_backtracks: int = 10
    min_step: float = 1e-6
    damping: float = 1e-6
    improvement_tol: float = 1e-9
    grid_cells: tuple[int, int, int] = (4, 4, 4)
    grid_margin: float = 2.0
    grid_weighting: Literal["uniform", "cotangent"] = "uniform"
    surface_weighting: Literal["uniform", "cotangent"] = "cotangent"
    regularization_domain: Literal["grid", "model"] = "grid"
    regularization_normalization: Literal["mean", "sum"] = "sum"
    centerline_in_refinement: bool = True
    steps: tuple[str, ...] = STEP_NAMES

    @model_validator(mode="after")
    def validate_values(self) -> "RegistrationConfig":
        """Ensure weights, counters and step settings are within range."""
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ValueError("alpha, beta and gamma must be non-negative")
        if self.patience < 1:
            raise ValueError("patience must be at least 1")
        if self.max_iters < self.patience:
            raise ValueError("max_iters must be >= patience")
        if not 0 < self.max_step_fraction <= 1:
            raise ValueError("max_step_fraction must be in (0, 1]")
        if not 0 < self.backtrack_factor < 1:
            raise ValueError("backtrack_factor must be in (0, 1)")
        if self.max_backtracks < 1:
            raise ValueError("max_backtracks must be positive")
        if min(self.grid_cells) < 1:
            raise ValueError("grid_cells must all be >= 1")
        if self.grid_margin < 0:
            raise ValueError("grid_margin must be non-negative")
        unknown = [s for s in self.steps if s not in STEP_NAMES]
        if unknown:
            raise ValueError(f"unknown steps: {unknown}")
        if not self.steps:
            raise ValueError("at least one step must be enabled")
        # keep pipeline order regardless of the order given
        self.steps = tuple(s for s in STEP_NAMES if s in self.steps)
        return self


class AnalysisConfig(BaseModel):
    """Conventions of the strain analysis."""

    reference_state: Literal["deflated", "inflated"] = "deflated"
    pooling: Literal["samples", "branches"] = "samples"
    hilum_epsilon: float = 1e-6

    @model_validator(mode="after")
    def validate_values(self) -> "AnalysisConfig":
        """Ensure the hilum exclusion radius is positive."""
        if self.hilum_epsilon <= 0:
            raise ValueError("hilum_epsilon must be positive")
        return self


class LoggingConfig(BaseModel):
    """Log sink settings."""

    level: str = "INFO"
    file: str | None = None


class Config(BaseModel):
    """Aggregate application configuration."""

    registration: RegistrationConfig = Field(default_factory=RegistrationConfig)
    analysis: AnalysisConfig = Field(default_factory=AnalysisConfig)
    logging: LoggingConfig = Field(default_factory=LoggingConfig)


ENV_MAP: dict[str, tuple[str, str]] = {
    "DMR_ALPHA": ("registration", "alpha"),
    "DMR_BETA": ("registration", "beta"),
    "DMR_GAMMA": ("registration", "gamma"),
    "DMR_PATIENCE": ("registration", "patience"),
    "DMR_MAX_ITERS": ("registration", "max_iters"),
    "DMR_MAX_STEP_FRACTION": ("registration", "max_step_fraction"),
    "DMR_GRID_CELLS": ("registration", "grid_cells"),
    "DMR_GRID_MARGIN": ("registration", "grid_margin"),
    "DMR_GRID_WEIGHTING": ("registration", "grid_weighting"),
    "DMR_SURFACE_WEIGHTING": ("registration", "surface_weighting"),
    "DMR_REGULARIZATION_DOMAIN": ("registration", "regularization_domain"),
    "DMR_STEPS": ("registration", "steps"),
    "ANALYSIS_REFERENCE_STATE": ("analysis", "reference_state"),
    "ANALYSIS_POOLING": ("analysis", "pooling"),
    "LOG_LEVEL": ("logging", "level"),
    "LOG_FILE": ("logging", "file"),
}

_LIST_FIELDS = {"grid_cells", "steps"}


def _split_list(value: str) -> list[str]:
    """Split a comma-separated option into stripped, non-empty items."""
    return [x.strip() for x in value.split(",") if x.strip()]


def _load_ini(path: str) -> dict[str, Any]:
    """Parse an INI configuration file into a nested dictionary."""
    parser = configparser.ConfigParser()
    parser.read(path)

    data: dict[str, Any] = {}
    section_map: dict[str, tuple[str, type[BaseModel]]] = {
        "Registration": ("registration", RegistrationConfig),
        "Analysis": ("analysis", AnalysisConfig),
        "Logging": ("logging", LoggingConfig),
    }

    for section_name, (key, model) in section_map.items():
        if not parser.has_section(section_name):
            continue
        section_data: dict[str, Any] = {}
        for field in model.model_fields:
            if not parser.has_option(section_name, field):
                continue
            value = parser.get(section_name, field)
            if field in _LIST_FIELDS:
                section_data[field] = _split_list(value)
            else:
                section_data[field] = value
        if section_data:
            data[key] = section_data
    return data


def _load_json(path: str) -> dict[str, Any]:
    """Read a JSON configuration file.

    A flat object is treated as a ``RegistrationConfig`` mirror; an object
    with section keys is treated as a full ``Config`` mirror.
    """
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise ValueError(f"{path}: configuration must be a JSON object")
    return as_overrides(raw)


def as_overrides(raw: dict[str, Any]) -> dict[str, Any]:
    """Nest a flat registration mapping under its section; pass sectioned ones through."""
    if not raw or set(raw) & set(Config.model_fields):
        return dict(raw)
    return {"registration": dict(raw)}


def _load_env() -> dict[str, Any]:
    """Collect configuration overrides from environment variables."""
    env_data: dict[str, Any] = {}
    for env_name, (section, field) in ENV_MAP.items():
        if env_name not in os.environ:
            continue
        value: str = os.environ[env_name]
        env_section = env_data.setdefault(section, {})
        if field in _LIST_FIELDS:
            env_section[field] = _split_list(value)
        else:
            env_section[field] = value
    return env_data


def _deep_update(base: dict[str, Any], overrides: dict[str, Any]) -> dict[str, Any]:
    """Recursively merge ``overrides`` into ``base`` and return ``base``."""
    for key, value in overrides.items():
        if key in base and isinstance(base[key], dict) and isinstance(value, dict):
            _deep_update(base[key], value)
        else:
            base[key] = value
    return base


def merge_overrides(*layers: dict[str, Any] | None) -> dict[str, Any]:
    """Merge nested override layers; later layers win."""
    merged: dict[str, Any] = {}
    for layer in layers:
        if layer:
            _deep_update(merged, copy.deepcopy(layer))
    return merged


def load_config(
    path: str | os.PathLike[str] | None = None,
    overrides: dict[str, Any] | None = None,
) -> Config:
    """Read configuration and return a typed ``Config`` instance.

    Args:
        path: INI or JSON file. Defaults to ``$CONFIG_PATH`` or ``config.ini``;
            a missing file leaves the defaults in place.
        overrides: Nested overrides applied last (CLI flags, manifest values).

    Returns:
        Config: Validated configuration.

    """
    config_path = str(path or os.getenv("CONFIG_PATH", "config.ini"))
    data: dict[str, Any] = {}
    if Path(config_path).is_file():
        if config_path.endswith(".json"):
            data = _load_json(config_path)
        else:
            data = _load_ini(config_path)
    elif path is not None:
        raise FileNotFoundError(f"configuration file not found: {config_path}")

    merged = _deep_update(data, _load_env())
    if overrides:
        merged = _deep_update(merged, overrides)

    config = Config.model_validate(merged)
    logger.bind(event="config_loaded").debug(f"Config loaded: {config}")
    return config
