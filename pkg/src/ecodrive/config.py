"""Run configuration: dataclasses plus the plain-text config file loader.

The config file is INI-style key/value text. Recognized sections:

  [scenario]  geometry, signal plan, arrivals, penetration, horizon, seeds
  [idm]       car-following parameter overrides (v0, T, h0, c, b, delta)
  [energy]    fuel-model constant overrides
  [co2]       CO2 cubic coefficients (overrides the shipped default file)
  [reward]    reward coefficient overrides (mu1..mu11, delta)
  [training]  trainer overrides (gamma, kl_bound, batch_steps, iterations, ...)

Every key has a default; an unknown key raises a ConfigError naming it.
"""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

from .dynamics import HUMAN_KINDS, IdmParams
from .energy import Co2Coeffs, EnergyParams, load_co2_coeffs


class ConfigError(ValueError):
    """A configuration field is out of range or unknown."""


@dataclass
class CommsConfig:
    """Communication ranges for V2V neighbor sensing and I2V signal timing."""

    r_v2v: float = 50.0
    r_i2v: float = 250.0

    def __post_init__(self) -> None:
        if self.r_v2v <= 0 or self.r_i2v <= 0:
            raise ConfigError("communication ranges must be > 0")


@dataclass
class RewardCoeffs:
    """Coefficients of the four-branch phase-group reward."""

    mu1: float = -100.0
    mu2: float = -5.0
    mu3: float = 5.0
    mu4: float = -5.0
    mu5: float = 5.0
    mu6: float = -10.0
    mu7: float = -7.0
    mu8: float = -3.0
    mu9: float = 1000.0
    mu10: float = 4.0
    mu11: float = -10.0
    delta: float = 0.01
    exp_clamp: float = 30.0   # cap on any exp() argument, keeps rewards finite

    def __post_init__(self) -> None:
        if self.delta <= 0:
            raise ConfigError("RewardCoeffs.delta must be > 0")


@dataclass
class ScenarioConfig:
    """Everything needed to build and run one intersection scenario."""

    # geometry
    approach_length_m: float = 250.0
    outbound_length_m: float = 250.0
    speed_limit_mps: float = 15.0
    vehicle_length_m: float = 5.0
    # signal plan (two phases NS then EW, green+yellow each)
    green_s: float = 30.0
    yellow_s: float = 4.0
    signal_offset_s: float = 0.0
    # arrivals
    inflow_veh_per_hr: float = 800.0
    inflow_is_total: bool = False       # False: per approach (default reading)
    entry_speed_mps: float = 10.0
    penetration_pct: float = 100.0
    human_model: str = "vidm"
    seed: int = 0                       # arrival/assignment + driver-sampling seed
    # time
    dt_s: float = 0.5
    horizon_steps: int = 600
    warmup_steps: int = 100
    # dynamics
    a_min_mps2: float = -3.0
    a_max_mps2: float = 3.0
    h_min_m: float = 1.0
    noise_halfwidth_mps2: float = 0.2
    midm_rel_std: float = 0.10
    # reward zones / comms
    start_zone_m: float = 20.0          # "start of an approach" for the hard penalty
    r_v2v_m: float = 50.0
    r_i2v_m: float = 250.0
    # glide controller
    v_min_glide_mps: float = 2.0
    glide_margin_s: float = 0.5         # arrive this long after green onset
    glide_queue_headway_s: float = 1.2  # per queued vehicle ahead
    # nested model parameters
    idm: IdmParams = field(default_factory=IdmParams)
    energy: EnergyParams = field(default_factory=EnergyParams)
    co2: Co2Coeffs = field(default_factory=load_co2_coeffs)
    reward: RewardCoeffs = field(default_factory=RewardCoeffs)

    def __post_init__(self) -> None:
        checks = [
            ("approach_length_m", self.approach_length_m > 0),
            ("outbound_length_m", self.outbound_length_m > 0),
            ("speed_limit_mps", self.speed_limit_mps > 0),
            ("vehicle_length_m", self.vehicle_length_m > 0),
            ("green_s", self.green_s > 0),
            ("yellow_s", self.yellow_s >= 0),
            ("inflow_veh_per_hr", self.inflow_veh_per_hr >= 0),
            ("entry_speed_mps", 0 <= self.entry_speed_mps <= self.speed_limit_mps),
            ("penetration_pct", 0 <= self.penetration_pct <= 100),
            ("human_model", self.human_model in HUMAN_KINDS),
            ("dt_s", self.dt_s > 0),
            ("horizon_steps", self.horizon_steps > 0),
            ("warmup_steps", 0 <= self.warmup_steps <= self.horizon_steps),
            ("a_min_mps2", self.a_min_mps2 < 0 < self.a_max_mps2),
            ("h_min_m", self.h_min_m > 0),
            ("start_zone_m", 0 < self.start_zone_m <= self.approach_length_m),
            ("r_v2v_m", self.r_v2v_m > 0),
            ("r_i2v_m", self.r_i2v_m > 0),
            ("v_min_glide_mps", 0 < self.v_min_glide_mps <= self.speed_limit_mps),
        ]
        for name, ok in checks:
            if not ok:
                raise ConfigError(f"invalid scenario config field: {name}")

    @property
    def comms(self) -> CommsConfig:
        return CommsConfig(self.r_v2v_m, self.r_i2v_m)

    @property
    def axis_length_m(self) -> float:
        return self.approach_length_m + self.outbound_length_m

    def digest(self) -> str:
        """Stable hash of the full configuration, for report provenance."""
        blob = json.dumps(dataclasses.asdict(self), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class TrainConfig:
    """Desk-scale trainer settings (paper-scale batch/iterations also accepted)."""

    gamma: float = 0.99
    kl_bound: float = 0.01
    batch_steps: int = 8000
    iterations: int = 200
    seed: int = 0
    eval_every: int = 20
    critic_lr: float = 0.001
    critic_epochs: int = 100
    cg_iters: int = 10
    cg_damping: float = 0.1
    backtrack_ratio: float = 0.8
    max_backtracks: int = 10
    hidden: int = 64
    init_log_std: float = -0.6931471805599453   # log(0.5)
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)

    def __post_init__(self) -> None:
        if not 0 < self.gamma <= 1:
            raise ConfigError("gamma must be in (0, 1]")
        if self.batch_steps < self.scenario.horizon_steps:
            raise ConfigError("batch_steps must be >= the episode horizon")


_BOOL_KEYS = {"inflow_is_total"}
_INT_KEYS = {"seed", "horizon_steps", "warmup_steps", "batch_steps", "iterations",
             "eval_every", "critic_epochs", "cg_iters", "max_backtracks", "hidden"}
_STR_KEYS = {"human_model"}


def _coerce(section, key: str):
    if key in _BOOL_KEYS:
        return section.getboolean(key)
    if key in _INT_KEYS:
        return section.getint(key)
    if key in _STR_KEYS:
        return section.get(key)
    return section.getfloat(key)


def _apply_section(section, cls, label: str) -> dict:
    known = {f.name for f in fields(cls)}
    out = {}
    for key in section:
        if key not in known:
            raise ConfigError(f"unknown key {key!r} in [{label}]")
        out[key] = _coerce(section, key)
    return out


def load_config(path: str | Path | None = None, **overrides) -> ScenarioConfig:
    """Build a ScenarioConfig from an optional file plus keyword overrides."""
    sections: dict[str, dict] = {}
    if path is not None:
        parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        read = parser.read(Path(path))
        if not read:
            raise ConfigError(f"config file not found: {path}")
        plain = {f.name for f in fields(ScenarioConfig)}
        for label, cls in (("scenario", ScenarioConfig), ("idm", IdmParams),
                           ("energy", EnergyParams), ("co2", Co2Coeffs),
                           ("reward", RewardCoeffs)):
            if label in parser:
                sections[label] = _apply_section(parser[label], cls, label)
        extra = set(parser.sections()) - {"scenario", "idm", "energy", "co2", "reward", "training"}
        if extra:
            raise ConfigError(f"unknown config section(s): {sorted(extra)}")
    kwargs = dict(sections.get("scenario", {}))
    if "idm" in sections:
        kwargs["idm"] = IdmParams(**sections["idm"])
    if "energy" in sections:
        kwargs["energy"] = EnergyParams(**sections["energy"])
    if "co2" in sections:
        kwargs["co2"] = Co2Coeffs(**sections["co2"])
    if "reward" in sections:
        kwargs["reward"] = RewardCoeffs(**sections["reward"])
    for key, value in overrides.items():
        if value is not None:
            kwargs[key] = value
    try:
        return ScenarioConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_train_config(path: str | Path | None = None, **overrides) -> TrainConfig:
    """Build a TrainConfig; [training] keys from the file, scenario as usual."""
    scenario_overrides = {k: v for k, v in overrides.items()
                          if k in {f.name for f in fields(ScenarioConfig)}}
    train_overrides = {k: v for k, v in overrides.items() if k not in scenario_overrides}
    scenario = load_config(path, **scenario_overrides)
    kwargs: dict = {}
    if path is not None:
        parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        parser.read(Path(path))
        if "training" in parser:
            kwargs.update(_apply_section(parser["training"], TrainConfig, "training"))
    for key, value in train_overrides.items():
        if value is not None:
            kwargs[key] = value
    return TrainConfig(scenario=scenario, **kwargs)
