"""Scenario constants and system configuration.

Power values are stored in dBm (as they appear in the JSON config files) and
exposed in watts through properties.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any


class ConfigError(ValueError):
    """Raised for an invalid or physically impossible configuration."""


def dbm_to_watt(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def watt_to_dbm(watt: float) -> float:
    return 10.0 * math.log10(watt) + 30.0


@dataclass(frozen=True)
class Scenario:
    """Deployment scenario: pathloss model and geometry.

    ``pathloss_exponent`` is the dB-per-decade distance coefficient of the
    LSF model. The association threshold rho is, unless ``rho_dB`` is given,
    the shadowing-free LSF gain at ``rho_distance_m``.
    """

    name: str = "UMi"
    pathloss_exponent: float = 31.9
    shadowing_std_db: float = 8.2
    isd_m: float = 200.0
    ap_height_m: float = 10.0
    ue_height_m: float = 1.5
    min_distance_m: float = 10.0
    rho_distance_m: float = 200.0
    rho_dB: float | None = None
    P_max_dBm: float | None = None


UMI = Scenario()
UMA = Scenario(
    name="UMa",
    pathloss_exponent=30.0,
    shadowing_std_db=7.8,
    isd_m=500.0,
    ap_height_m=25.0,
    min_distance_m=35.0,
    rho_distance_m=450.0,
    P_max_dBm=49.0,
)

SCENARIOS = {"UMi": UMI, "UMa": UMA}


def scenario_from_json(obj: Any) -> Scenario:
    if isinstance(obj, Scenario):
        return obj
    if isinstance(obj, str):
        try:
            return SCENARIOS[obj]
        except KeyError:
            raise ConfigError(f"unknown scenario {obj!r}") from None
    if isinstance(obj, dict):
        base = SCENARIOS.get(obj.get("name", "UMi"), UMI)
        known = {f.name for f in dataclasses.fields(Scenario)}
        extra = set(obj) - known
        if extra:
            raise ConfigError(f"unknown scenario fields: {sorted(extra)}")
        return dataclasses.replace(base, **obj)
    raise ConfigError(f"cannot interpret scenario {obj!r}")


@dataclass(frozen=True)
class SystemConfig:
    M: int = 7
    N: int = 8
    K: int = 35
    tau_c: int = 200
    N_T: int = 10
    P_max_dBm: float = 44.0
    p_ul_dBm: float = 23.0
    f_c: float = 6.0
    B: float = 20e6
    N0: float = -174.0
    N_F: float = 9.0
    scenario: Scenario = field(default=UMI)
    rng_seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("M", "N", "K", "tau_c", "N_T"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if self.B <= 0:
            raise ConfigError("bandwidth B must be positive")
        if self.f_c <= 0:
            raise ConfigError("carrier frequency f_c must be positive")
        if not all(math.isfinite(v) for v in (self.P_max_dBm, self.p_ul_dBm, self.N0, self.N_F)):
            raise ConfigError("power levels must be finite")

    @property
    def P_max(self) -> float:
        """Per-AP downlink power budget in watts (scenario override wins)."""
        dbm = self.scenario.P_max_dBm if self.scenario.P_max_dBm is not None else self.P_max_dBm
        return dbm_to_watt(dbm)

    @property
    def p_ul(self) -> float:
        return dbm_to_watt(self.p_ul_dBm)

    @property
    def noise_dBm(self) -> float:
        return self.N0 + 10.0 * math.log10(self.B) + self.N_F

    @property
    def noise_power(self) -> float:
        return dbm_to_watt(self.noise_dBm)

    @property
    def rho_dB(self) -> float:
        sc = self.scenario
        if sc.rho_dB is not None:
            return sc.rho_dB
        return -32.4 - 20.0 * math.log10(self.f_c) - sc.pathloss_exponent * math.log10(sc.rho_distance_m)

    @property
    def rho(self) -> float:
        return 10.0 ** (self.rho_dB / 10.0)

    def replace(self, **changes) -> "SystemConfig":
        if "scenario" in changes:
            changes["scenario"] = scenario_from_json(changes["scenario"])
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["scenario"] = dataclasses.asdict(self.scenario)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SystemConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config fields: {sorted(extra)}")
        kwargs = dict(d)
        if "scenario" in kwargs:
            kwargs["scenario"] = scenario_from_json(kwargs["scenario"])
        return cls(**kwargs)

    @classmethod
    def load(cls, path: str | Path) -> "SystemConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)


def desk_config(**changes) -> SystemConfig:
    """Small default experiment scale: M=3, N=2, K=6, tau_c=100, N_T=5."""
    base = SystemConfig(M=3, N=2, K=6, tau_c=100, N_T=5)
    return base.replace(**changes) if changes else base
