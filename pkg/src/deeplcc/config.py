"""Run configuration: one flat JSON document per run."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields

from .deepc import DeepLccConfig
from .experiments import (CONTROLLERS, HIGHWAY_PHASES, URBAN_PHASES,
                          ScenarioSpec, scenario_brake, scenario_cycle,
                          scenario_sinusoid)
from .traffic import NOMINAL, TABLE_HETEROGENEOUS, HdvParams, MixedConfig


class ConfigError(ValueError):
    pass


SCENARIOS = ("sinusoid", "brake", "urban", "highway", "cycle")


@dataclass
class RunConfig:
    n: int = 8
    cav_indices: list = field(default_factory=lambda: [3, 6])
    hdv_params: object = "nominal"
    v_star: float = 15.0
    T: int = 800
    dt: float = 0.05
    hold: int = 10
    controller: str = "deepc"
    controllers: list = field(default_factory=lambda: list(CONTROLLERS))
    T_ini: int = 20
    N: int = 50
    w_v: float = 1.0
    w_s: float = 0.5
    w_u: float = 0.1
    lambda_g: float = 10.0
    lambda_y: float = 1e4
    s_min: float = 5.0
    s_max: float = 40.0
    a_min: float = -5.0
    a_max: float = 2.0
    solver_tol: float = 1e-6
    scenario: str = "sinusoid"
    scenario_params: dict = field(default_factory=dict)
    mpc_model: str = "nominal"
    dataset: str = None
    out: str = "out"
    seed: int = 0
    n_seeds: int = 20

    # -- derived objects -------------------------------------------------
    def hdv_list(self):
        if self.hdv_params == "nominal":
            return (NOMINAL,) * (self.n - len(self.cav_indices))
        if self.hdv_params == "table1":
            return TABLE_HETEROGENEOUS
        if isinstance(self.hdv_params, list):
            return tuple(HdvParams(**p) for p in self.hdv_params)
        raise ConfigError("hdv_params must be 'nominal', 'table1' or a list")

    def mixed_config(self) -> MixedConfig:
        return MixedConfig(self.n, tuple(self.cav_indices), self.hdv_list())

    def deepc_config(self) -> DeepLccConfig:
        return DeepLccConfig(T_ini=self.T_ini, N=self.N, w_v=self.w_v,
                             w_s=self.w_s, w_u=self.w_u,
                             lambda_g=self.lambda_g, lambda_y=self.lambda_y,
                             s_min=self.s_min, s_max=self.s_max,
                             a_min=self.a_min, a_max=self.a_max,
                             solver_tol=self.solver_tol)

    def scenario_spec(self) -> ScenarioSpec:
        p = dict(self.scenario_params)
        if self.scenario == "sinusoid":
            p.setdefault("v_star", self.v_star)
            return scenario_sinusoid(**p)
        if self.scenario == "brake":
            p.setdefault("a_min", self.a_min)
            p.setdefault("a_max", self.a_max)
            return scenario_brake(**p)
        if self.scenario in ("urban", "highway", "cycle"):
            default = URBAN_PHASES if self.scenario != "highway" else HIGHWAY_PHASES
            phases = p.pop("phases", default)
            return scenario_cycle(phases, name=self.scenario, **p)
        raise ConfigError(f"unknown scenario {self.scenario!r}")

    def mpc_hdv_params(self):
        if self.mpc_model == "nominal":
            return (NOMINAL,) * (self.n - len(self.cav_indices))
        if self.mpc_model == "true":
            return self.hdv_list()
        raise ConfigError("mpc_model must be 'nominal' or 'true'")

    # -- validation and I/O ----------------------------------------------
    def validate(self, need_dataset: bool = False) -> "RunConfig":
        try:
            self.mixed_config()
            self.deepc_config()
            self.scenario_spec()
            self.mpc_hdv_params()
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        if self.controller not in CONTROLLERS:
            raise ConfigError(f"controller must be one of {CONTROLLERS}")
        bad = [c for c in self.controllers if c not in CONTROLLERS]
        if bad:
            raise ConfigError(f"unknown controllers {bad}")
        if not 0 < self.v_star < NOMINAL.v_max:
            raise ConfigError("v_star must lie in (0, v_max)")
        if self.T < self.T_ini + self.N:
            raise ConfigError("T must be at least T_ini + N")
        if self.dt <= 0 or self.hold < 1 or self.n_seeds < 1:
            raise ConfigError("dt, hold and n_seeds must be positive")
        if need_dataset and self.dataset and not os.path.isfile(self.dataset):
            raise ConfigError(f"dataset file {self.dataset!r} does not exist")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        return cls(**d)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def loads(cls, text: str) -> "RunConfig":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed config: {exc}") from exc

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path) as fh:
            return cls.loads(fh.read())
