"""Run configuration schemas (YAML documents, unknown keys rejected)."""
from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path
from typing import Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import ConfigInvalid

SCENARIOS = (
    "solve-homological", "kam-step", "kam-run", "dioph-scan",
    "small-twist-avg", "small-twist-split", "small-twist-chart",
    "oscillator-simulate", "oscillator-poincare", "oscillator-expansion",
    "oscillator-bounded", "oscillator-resonant",
)


class Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class BasisCfg(Strict):
    lo: int = 0
    omega: list[float] = Field(default_factory=lambda: [1.0, (math.sqrt(5.0) - 1.0) / 2.0], min_length=1)


class StructureCfg(Strict):
    generators: list[list[int]] = Field(default_factory=lambda: [[0], [1], [0, 1]])
    varrho: float = 3.0


class ModeCfg(Strict):
    """Real term cos * cos(<k,w>x) + sin * sin(<k,w>x); k is the dense index vector."""

    k: list[int]
    cos: float = 0.0
    sin: float = 0.0


class DeltaCfg(Strict):
    family: Literal["polynomial", "subexponential"] = "polynomial"
    tau: float = 3.0
    a: float = 1.0
    sigma: float = 2.0


class FunctionCfg(Strict):
    name: Literal["zero", "arctan", "tanh", "xgauss", "linear"] = "zero"
    scale: float = 1.0


class OscillatorCfg(Strict):
    varpi: float = Field(1.0, gt=0)
    phi: FunctionCfg = FunctionCfg(name="arctan")
    g: FunctionCfg = FunctionCfg(name="xgauss")
    forcing: list[ModeCfg] = Field(default_factory=lambda: [ModeCfg(k=[0, 1], sin=0.3), ModeCfg(k=[1, 1], sin=0.2)])
    phi_inf: Optional[float] = None


def resonant_oscillator() -> OscillatorCfg:
    """phi = -arctan with one forcing mode at <k,w> = varpi = 1 (default basis)."""
    return OscillatorCfg(phi=FunctionCfg(name="arctan", scale=-1.0), g=FunctionCfg(name="zero"),
                         forcing=[ModeCfg(k=[1, 0], sin=0.2), ModeCfg(k=[0, 1], sin=0.3)])


class Base(Strict):
    scenario: str
    seed: int = 0
    basis: BasisCfg = BasisCfg()
    structure: StructureCfg = StructureCfg()
    figures: bool = True


class HomologicalCfg(Base):
    scenario: Literal["solve-homological"]
    alpha: float = 2 * math.pi * (math.sqrt(2.0) - 1.0)
    h: list[ModeCfg] = Field(default_factory=list)
    tol_div: float = 1e-10


class KamCfg(Base):
    scenario: Literal["kam-step", "kam-run"]
    alpha: float = 2 * math.pi * (math.sqrt(2.0) - 1.0)
    kick: list[ModeCfg] = Field(default_factory=list)
    target_eps0: Optional[float] = 1e-4
    s: float = 0.05
    m0: float = 0.5
    max_steps: int = Field(10, ge=1)
    stop_eps: float = 1e-13
    kmax: int = Field(12, ge=1)
    c6: Optional[float] = None


class DiophCfg(Base):
    scenario: Literal["dioph-scan"]
    delta: DeltaCfg = DeltaCfg()
    gamma: float = 1e-3
    alpha: Optional[float] = None
    gamma0: float = 1e-3
    K: int = Field(12, ge=1)
    J: Optional[int] = None


class SmallTwistCfg(Base):
    scenario: Literal["small-twist-avg", "small-twist-split", "small-twist-chart"]
    oscillator: OscillatorCfg = OscillatorCfg()
    rho_center: float = 1.5
    rho_half: float = 0.75
    delta: float = Field(1e-3, ge=0, lt=1)
    mu: float = 0.1
    nu: float = 0.1
    N: float = 5.0
    tol_res: float = 1e-9
    annulus: tuple[float, float] = (0.8, 2.2)
    inner: tuple[float, float] = (1.0, 1.6)
    n_theta: int = Field(13, ge=2)
    n_rho: int = Field(5, ge=2)

    @model_validator(mode="before")
    @classmethod
    def _default_instance(cls, data):
        if isinstance(data, dict) and data.get("scenario") != "small-twist-avg" and "oscillator" not in data:
            data = {**data, "oscillator": resonant_oscillator().model_dump()}
        return data


class OscillatorRunCfg(Base):
    scenario: Literal["oscillator-simulate", "oscillator-poincare", "oscillator-expansion",
                      "oscillator-bounded", "oscillator-resonant"]
    oscillator: OscillatorCfg = OscillatorCfg()
    x0: float = 0.0
    y0: float = 10.0
    T: float = Field(100.0, gt=0)
    tol: float = Field(1e-10, ge=1e-13)
    dt_out: float = Field(0.5, gt=0)
    eps: list[float] = Field(default_factory=lambda: [1e-2, 1e-3, 1e-4])
    rho0: list[float] = Field(default_factory=lambda: [0.9, 1.2, 1.5])
    tau0: list[float] = Field(default_factory=lambda: [0.0, 0.7, 1.9, 3.1])
    T_avg: float = 1e4
    radii: list[float] = Field(default_factory=lambda: [5.0 * (i + 1) for i in range(10)])
    n_grid: int = 10_000

    @model_validator(mode="before")
    @classmethod
    def _default_instance(cls, data):
        if isinstance(data, dict) and data.get("scenario") == "oscillator-resonant" and "oscillator" not in data:
            data = {**data, "oscillator": resonant_oscillator().model_dump()}
        return data

    @model_validator(mode="after")
    def _positive_eps(self):
        if any(e <= 0 for e in self.eps):
            raise ValueError("eps values must be positive")
        return self


RunConfig = Union[HomologicalCfg, KamCfg, DiophCfg, SmallTwistCfg, OscillatorRunCfg]

_BY_SCENARIO = {
    "solve-homological": HomologicalCfg, "kam-step": KamCfg, "kam-run": KamCfg, "dioph-scan": DiophCfg,
    "small-twist-avg": SmallTwistCfg, "small-twist-split": SmallTwistCfg, "small-twist-chart": SmallTwistCfg,
}


def model_for(scenario: str):
    if scenario.startswith("oscillator-"):
        return OscillatorRunCfg
    try:
        return _BY_SCENARIO[scenario]
    except KeyError:
        raise ConfigInvalid(f"unknown scenario {scenario!r}; expected one of {', '.join(SCENARIOS)}") from None


def parse_config(doc: dict) -> RunConfig:
    if not isinstance(doc, dict) or "scenario" not in doc:
        raise ConfigInvalid("config must be a mapping with a 'scenario' key")
    try:
        return model_for(doc["scenario"]).model_validate(doc)
    except ValidationError as exc:
        raise ConfigInvalid(str(exc)) from None


def load_config(path: str | Path | None, scenario: str, overrides: dict | None = None) -> RunConfig:
    """Read YAML (or start empty), force the scenario, apply overrides, validate."""
    doc: dict = {}
    if path is not None:
        try:
            doc = yaml.safe_load(Path(path).read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigInvalid(f"cannot read {path}: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigInvalid("config document must be a mapping")
    if doc.get("scenario", scenario) != scenario:
        raise ConfigInvalid(f"config scenario {doc['scenario']!r} does not match command {scenario!r}")
    doc = {**doc, "scenario": scenario, **(overrides or {})}
    return parse_config(doc)


def config_hash(cfg: BaseModel) -> str:
    text = json.dumps(cfg.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()
