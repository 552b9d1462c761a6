from __future__ import annotations

import json
from pathlib import Path
from typing import Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from src.errors import ConfigError
from src.fem.frac_gram import SpaceKind

Interval = Tuple[float, float]


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class MeshSection(_Section):
    a: float = 0.0
    b: float = 1.0
    n: Optional[int] = Field(default=None, ge=2)

    @model_validator(mode="after")
    def _ordered(self) -> "MeshSection":
        if self.b <= self.a:
            raise ValueError("mesh.b must be greater than mesh.a")
        return self


class SpaceSection(_Section):
    kind: SpaceKind = SpaceKind.INTEGRAL_TILDE
    s: float = Field(default=0.1, gt=0.0, le=1.0)

    @model_validator(mode="after")
    def _supported(self) -> "SpaceSection":
        if self.s == 0.5:
            raise ValueError("s = 1/2 is not supported")
        if self.s == 1.0 and self.kind is not SpaceKind.SPECTRAL:
            raise ValueError("s = 1 is only available for the Spectral kind")
        return self


class ProblemSection(_Section):
    alpha: float = Field(default=1.0, gt=0.0)
    beta: float = Field(default=1.0, gt=0.0)
    p: float = Field(default=0.5, ge=0.0, lt=1.0)
    w_d_expression: str = "0"
    init: Literal["target", "zero"] = "target"


class ScheduleSection(_Section):
    eps0: float = Field(default=1.0, gt=0.0)
    factor: float = Field(default=0.5, gt=0.0, lt=1.0)
    eps_min: float = Field(default=1e-8, ge=0.0)
    tol: float = Field(default=1e-10, ge=0.0)
    max_iter: int = Field(default=200, ge=1)
    inner_max_iter: int = Field(default=1, ge=1)


class OutputSection(_Section):
    dir: Optional[str] = None
    formats: List[Literal["csv", "json"]] = Field(default_factory=lambda: ["csv", "json"])


class CapacitySection(_Section):
    sets: Dict[str, List[Interval]] = Field(default_factory=dict)
    refinement: List[int] = Field(default_factory=lambda: [32, 64, 128, 256])
    random_pairs: int = Field(default=50, ge=0)
    seed: int = 0

    @field_validator("sets")
    @classmethod
    def _intervals(cls, v: Dict[str, List[Interval]]) -> Dict[str, List[Interval]]:
        for name, intervals in v.items():
            for left, right in intervals:
                if right <= left:
                    raise ValueError(f"capacity set {name!r} has an empty interval [{left}, {right})")
        return v


class GammaSection(_Section):
    block: Interval = (0.4, 0.6)
    base: float = Field(default=10.0, gt=1.0)
    exponents: List[int] = Field(default_factory=lambda: [0, 1, 2, 3, 4])
    rhs_expressions: List[str] = Field(default_factory=lambda: ["1", "sin(pi*x)", "x", "cos(2*pi*x)"])
    compare_to_infinite: bool = True

    @field_validator("exponents")
    @classmethod
    def _two_or_more(cls, v: List[int]) -> List[int]:
        if len(v) < 2:
            raise ValueError("gamma.exponents needs at least two entries")
        return v

    @field_validator("rhs_expressions")
    @classmethod
    def _one_or_more(cls, v: List[str]) -> List[str]:
        if not v:
            raise ValueError("gamma.rhs_expressions needs at least one entry")
        return v


class ContinuationSection(_Section):
    p_list: List[float] = Field(default_factory=lambda: [0.5, 0.25, 0.1, 0.05, 0.01])


class ExperimentConfig(_Section):
    """One JSON document drives every command; sections a command does not use are ignored."""

    mesh: MeshSection = Field(default_factory=MeshSection)
    space: SpaceSection = Field(default_factory=SpaceSection)
    problem: ProblemSection = Field(default_factory=ProblemSection)
    schedule: ScheduleSection = Field(default_factory=ScheduleSection)
    output: OutputSection = Field(default_factory=OutputSection)
    capacity: Optional[CapacitySection] = None
    gamma: Optional[GammaSection] = None
    continuation: Optional[ContinuationSection] = None


def _as_config_error(e: ValidationError) -> ConfigError:
    first = e.errors()[0]
    loc = ".".join(str(part) for part in first.get("loc", ()))
    return ConfigError(f"{loc}: {first.get('msg')}", field=loc or None)


def parse_config(raw: str | bytes | dict) -> ExperimentConfig:
    try:
        if isinstance(raw, dict):
            return ExperimentConfig.model_validate(raw)
        return ExperimentConfig.model_validate_json(raw)
    except ValidationError as e:
        raise _as_config_error(e) from e


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e.strerror}", field="config") from e
    try:
        json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e.msg}", field="config") from e
    return parse_config(text)


def apply_overrides(
    cfg: ExperimentConfig,
    *,
    n: int | None = None,
    s: float | None = None,
    out: str | None = None,
    default_n: int | None = None,
) -> ExperimentConfig:
    """CLI flags win over the document; `default_n` fills a missing mesh size."""
    data = cfg.model_dump(mode="json")
    if n is not None:
        data["mesh"]["n"] = n
    elif data["mesh"]["n"] is None and default_n is not None:
        data["mesh"]["n"] = default_n
    if s is not None:
        data["space"]["s"] = s
    if out is not None:
        data["output"]["dir"] = out
    return parse_config(data)
