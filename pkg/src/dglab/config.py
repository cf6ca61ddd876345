"""Run configuration.

Physics parameters (``beta`` and ``s``) must be given explicitly.  Numerical
knobs have defaults and may be overridden from the environment through
``DGLAB_NUMERICS_<FIELD>`` variables.
"""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import InvalidParameter
from .lattice import (
    StepDistribution,
    TorusGeometry,
    regularity_warnings,
    step_distribution_from_spec,
)

ENV_PREFIX = "DGLAB_NUMERICS_"


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class GeometryConfig(_Strict):
    L: int = Field(4, ge=2)
    N: int = Field(3, ge=1)

    def build(self) -> TorusGeometry:
        return TorusGeometry(self.L, self.N)


class DistributionConfig(_Strict):
    kind: Literal["nn", "range", "offsets"] = "nn"
    rho: int | None = Field(None, ge=1)
    offsets: list[tuple[int, int]] | None = None
    regularity_C: float | None = Field(None, gt=0)  # warn-only; no canonical value

    @model_validator(mode="after")
    def _complete(self):
        if self.kind == "range" and self.rho is None:
            raise ValueError("a range distribution needs rho")
        if self.kind == "offsets" and not self.offsets:
            raise ValueError("an explicit distribution needs offsets")
        return self

    def build(self) -> StepDistribution:
        if self.kind == "nn":
            return step_distribution_from_spec("nn")
        if self.kind == "range":
            return step_distribution_from_spec({"rho": self.rho})
        return step_distribution_from_spec({"offsets": [list(o) for o in self.offsets]})


class PhysicsConfig(_Strict):
    beta: float = Field(..., gt=0)
    s: float
    m2: float = Field(0.0, ge=0.0, le=1.0)
    r: float = Field(1.0, gt=0.0, le=1.0)
    delta: float = Field(0.5, gt=0.0)
    q_max: int = Field(10, ge=1, le=64)


class NumericsConfig(_Strict):
    h: float = Field(1.0 / 32.0, gt=0.0)
    series_tol: float = Field(1e-10, gt=0.0)
    decomposition: Literal["series", "base"] = "series"
    j_max: int = Field(12, ge=1, le=40)
    window: float = Field(8.0, ge=6.0)
    max_embedding_side: int = Field(1024, ge=16)
    inequality_fields: int = Field(200, ge=1)
    closure_max_blocks: int = Field(8, ge=5, le=14)

    @field_validator("h")
    @classmethod
    def _grid(cls, v):
        inv = 1.0 / v
        if abs(inv - round(inv)) > 1e-9:
            raise ValueError("h must be 1/n for an integer n")
        return v


class MCConfig(_Strict):
    sweeps: int = Field(4000, ge=1)
    chains: int = Field(16, ge=1)
    burn_in: int = Field(1000, ge=0)
    pinned: bool = False
    check_tau: bool = True
    test_function: list[dict] = Field(default_factory=lambda: [{"k": [1, 0], "a": 1.0}])


class FRDConfig(_Strict):
    zero_mode: bool = False
    covariance_files: list[str] = Field(default_factory=list)
    save_tables: bool = True


class ValidateConfig(_Strict):
    criteria: list[int] | None = None

    @field_validator("criteria")
    @classmethod
    def _known(cls, v):
        if v is not None and any(not 1 <= c <= 15 for c in v):
            raise ValueError("criteria are numbered 1..15")
        return v


class RunConfig(_Strict):
    geometry: GeometryConfig = Field(default_factory=GeometryConfig)
    distribution: DistributionConfig = Field(default_factory=DistributionConfig)
    physics: PhysicsConfig
    numerics: NumericsConfig = Field(default_factory=NumericsConfig)
    mc: MCConfig = Field(default_factory=MCConfig)
    frd: FRDConfig = Field(default_factory=FRDConfig)
    validate_: ValidateConfig = Field(default_factory=ValidateConfig, alias="validate")
    seed: int = Field(0, ge=0, lt=2**64)

    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    @model_validator(mode="after")
    def _guards(self):
        J = self.distribution.build()
        if self.physics.s <= -J.v2:
            raise ValueError(f"need s > -v_J^2 = {-J.v2:.6g}, got s = {self.physics.s}")
        if abs(self.physics.s) >= J.theta:
            raise ValueError(f"need |s| < theta_J = {J.theta:.6g}, got |s| = {abs(self.physics.s)}")
        if self.numerics.decomposition == "base" and self.physics.s != 0:
            raise ValueError("the base decomposition needs s = 0")
        if not self.mc.pinned and self.physics.m2 <= 0:
            # the chain needs either a pin or a mass; pinning is the zero-mass ensemble
            self.mc.pinned = True
        return self

    def step_distribution(self) -> StepDistribution:
        return self.distribution.build()

    def guard_warnings(self) -> list[str]:
        return regularity_warnings(self.step_distribution(), self.distribution.regularity_C)

    def resolved(self) -> dict:
        return self.model_dump(mode="json", by_alias=True)


def _env_numerics(env) -> dict:
    out = {}
    for name in NumericsConfig.model_fields:
        key = ENV_PREFIX + name.upper()
        if key in env:
            out[name] = env[key]
    return out


def load_config(source: str | Path | dict, seed: int | None = None, env=None) -> RunConfig:
    """Parse a JSON file or mapping, apply numerics overrides from ``env`` and the seed."""
    env = os.environ if env is None else env
    if isinstance(source, dict):
        data = json.loads(json.dumps(source))
    else:
        try:
            data = json.loads(Path(source).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InvalidParameter(f"cannot read config {source}: {exc}") from exc
    if not isinstance(data, dict):
        raise InvalidParameter("config must be a JSON object")
    overrides = _env_numerics(env)
    if overrides:
        data.setdefault("numerics", {}).update(overrides)
    if seed is not None:
        data["seed"] = seed
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise InvalidParameter(_describe(exc)) from exc


def _describe(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "config"
        parts.append(f"{loc}: {err['msg']}")
    return "; ".join(parts)
