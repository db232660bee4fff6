import json
import logging
import os
from typing import Literal, Optional, Tuple, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .Aliases import assumption_map, estimator_map, normalize_alias
from .Constants import DEFAULT_CV_FOLDS, DEFAULT_SEED
from .Errors import ConfigurationError
from .Shared import context
from ..Core.GMM import GmmConfig, WeightMode
from ..Core.Moments import MomentKind
from ..Core.Nuisance import Assumption, OutcomeSource, PatternMode
from ..Core.Sieve import SieveSpec

logger = logging.getLogger(__name__)

DEFAULT_SIEVE_GRID: Tuple[SieveSpec, ...] = (
    SieveSpec(basis="power", degree=1),
    SieveSpec(basis="power", degree=2),
    SieveSpec(basis="power", degree=3),
    SieveSpec(basis="bspline", degree=3, n_knots=1),
    SieveSpec(basis="bspline", degree=3, n_knots=3),
)


class RoleConfig(BaseModel):
    """Maps CSV columns to the roles of the model."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    outcome: str
    treatment: str
    instruments: Tuple[str, ...]
    covariates: Tuple[str, ...] = ()
    missing_tokens: Tuple[str, ...] = ("", "NA", ".")
    treatment_type: Literal["binary", "discrete", "continuous"] = "continuous"
    treatment_values: Optional[Tuple[float, ...]] = None
    add_intercept: bool = False
    covariates_as_instruments: bool = True

    @field_validator("instruments", "covariates", "missing_tokens", mode="before")
    @classmethod
    def _split_lists(cls, value):
        if isinstance(value, str):
            return tuple(v.strip() for v in value.split(",") if v.strip())
        return value

    @model_validator(mode="after")
    def _check_roles(self):
        if not self.instruments:
            raise ValueError("At least one instrument column is required.")
        names = [self.outcome, self.treatment, *self.instruments, *self.covariates]
        duplicated = sorted({n for n in names if names.count(n) > 1})
        if duplicated:
            raise ValueError(f"Columns assigned to more than one role: {duplicated}.")
        if self.treatment_type == "discrete" and not self.treatment_values:
            raise ValueError("A discrete treatment needs treatment_values.")
        return self

    @property
    def d_support(self) -> Optional[Tuple[float, ...]]:
        if self.treatment_type == "binary":
            return (0.0, 1.0)
        if self.treatment_type == "discrete":
            return tuple(sorted(self.treatment_values))
        return None


class RunConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    data: Optional[str] = None
    roles: Optional[RoleConfig] = None
    assumption: Assumption = Assumption.SMAR
    estimator: Literal["CC", "IPW", "AIPW"] = "AIPW"
    pattern_mode: PatternMode = PatternMode.STRICT
    sieve: Union[SieveSpec, Literal["cv"]] = SieveSpec()
    sieve_grid: Tuple[SieveSpec, ...] = DEFAULT_SIEVE_GRID
    cv_folds: int = Field(DEFAULT_CV_FOLDS, ge=2)
    weight_mode: WeightMode = WeightMode.OPTIMAL_TWO_STEP
    max_iterations: int = Field(100, ge=1)
    tolerance: float = Field(1e-10, gt=0)
    ey_source: OutcomeSource = OutcomeSource.INCOMPLETE_D
    clamp_lo: Optional[float] = None
    clamp_hi: Optional[float] = None
    output: Literal["text", "json"] = "text"
    json_path: Optional[str] = None
    seed: int = DEFAULT_SEED
    threads: Optional[int] = Field(None, ge=1)
    robust_se: bool = True

    @field_validator("assumption", mode="before")
    @classmethod
    def _normalize_assumption(cls, value):
        return normalize_alias(assumption_map, value)

    @field_validator("estimator", mode="before")
    @classmethod
    def _normalize_estimator(cls, value):
        value = normalize_alias(estimator_map, value)
        return "AIPW" if value == "AIPW_GENERAL" else value

    @property
    def moment_kind(self) -> MomentKind:
        if self.estimator == "AIPW" and self.pattern_mode == PatternMode.GENERAL:
            return MomentKind.AIPW_GENERAL
        return MomentKind(self.estimator)

    @property
    def sieve_choice(self):
        return self.sieve_grid if self.sieve == "cv" else self.sieve

    @property
    def clamp_bounds(self) -> Optional[Tuple[float, float]]:
        if self.clamp_lo is None and self.clamp_hi is None:
            return None
        lo, hi = context.clamp_bounds
        return (self.clamp_lo if self.clamp_lo is not None else lo, self.clamp_hi if self.clamp_hi is not None else hi)

    def gmm_config(self) -> GmmConfig:
        return GmmConfig(kind=self.moment_kind, weight_mode=self.weight_mode, max_iterations=self.max_iterations,
                         tolerance=self.tolerance)


def load_config_file(path: Union[str, os.PathLike]) -> dict:
    """Reads a JSON or YAML mapping. Unknown keys are rejected later by the pydantic models."""
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise ConfigurationError(f"Config file '{path}' does not exist.")
    with open(path, "r", encoding="utf-8") as f:
        text = f.read()
    try:
        if path.lower().endswith(".json"):
            values = json.loads(text)
        else:
            values = yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as e:
        raise ConfigurationError(f"Cannot parse config file '{path}': {e}")
    if values is None:
        return {}
    if not isinstance(values, dict):
        raise ConfigurationError(f"Config file '{path}' must contain a mapping at the top level.")
    return values


def merge_settings(file_values: dict, overrides: dict) -> dict:
    """Flag values that were actually given replace file values; nested mappings merge key by key."""
    merged = dict(file_values)
    for key, value in overrides.items():
        if value is None:
            continue
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = merge_settings(merged[key], value)
        else:
            merged[key] = value
    return merged


def build_model(model_cls, values: dict, label: str):
    try:
        return model_cls(**values)
    except ValidationError as e:
        raise ConfigurationError(f"Invalid {label}: {e}")


