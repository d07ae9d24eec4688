"""Run configuration: a single JSON document validated field by field."""

from __future__ import annotations

import json
from pathlib import Path

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from . import HBAR_MEV_NS
from .model import UncertaintyEnsemble, ensemble_grid
from .optimizer import OptimizerConfig

__all__ = ["ConfigError", "OptimizerSettings", "RunConfig", "load_config"]


class ConfigError(ValueError):
    pass


class OptimizerSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    step_size: float = Field(1e-7, gt=0)
    max_iters: int = Field(5000, ge=1)
    objective_tol: float = Field(1e-8, ge=0)
    seed: int = 1
    init_scale: float = Field(0.01, ge=0)
    line_search: bool = False
    target_mean_fidelity: float = Field(0.9999, ge=0, le=1)

    def to_config(self) -> OptimizerConfig:
        return OptimizerConfig(**self.model_dump())


class RunConfig(BaseModel):
    """Defaults reproduce the nominal 2.72 meV, +-20 %, 100 ns / 100 step setup."""

    model_config = ConfigDict(extra="forbid")

    delta_star_mev: float = Field(2.72, gt=0)
    rel_uncertainty: float = Field(0.20, ge=0, lt=1)
    n_ensemble: int = Field(11, ge=1)
    horizon_ns: float = Field(100.0, gt=0)
    k_steps: int = Field(100, ge=1)
    m_harmonics: int = Field(10, ge=0)
    f_max_ghz: float = Field(0.1, gt=0)
    hbar_mev_ns: float = Field(HBAR_MEV_NS, gt=0)
    optimizer: OptimizerSettings = Field(default_factory=OptimizerSettings)
    output_dir: str = "out"

    @model_validator(mode="after")
    def _consistent(self):
        if self.n_ensemble == 1 and self.rel_uncertainty != 0:
            raise ValueError("n_ensemble = 1 requires rel_uncertainty = 0")
        if 2 * self.m_harmonics + 1 > self.k_steps:
            raise ValueError(
                f"m_harmonics={self.m_harmonics} needs k_steps >= {2 * self.m_harmonics + 1}")
        return self

    @property
    def horizon(self) -> tuple[float, int]:
        return self.horizon_ns, self.k_steps

    def ensemble(self) -> UncertaintyEnsemble:
        return ensemble_grid(self.delta_star_mev, self.delta_star_mev * self.rel_uncertainty,
                             self.n_ensemble)


def load_config(path) -> RunConfig:
    """Read and validate a config file; every problem surfaces as :class:`ConfigError`."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        lines = [f"{path}: invalid config"]
        for err in exc.errors():
            loc = ".".join(str(p) for p in err["loc"]) or "<root>"
            lines.append(f"  {loc}: {err['msg']}")
        raise ConfigError("\n".join(lines)) from None
