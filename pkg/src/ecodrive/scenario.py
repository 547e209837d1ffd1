"""Intersection geometry, fixed-time signal plan, and deterministic arrivals.

A four-way intersection with through traffic only. Each approach is one
inbound lane plus a matching outbound lane on the same position axis, with
the stop line at the inbound/outbound boundary. The two-phase signal plan
(NS then EW) starts at the beginning of the NS green.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .config import ConfigError, ScenarioConfig
from .dynamics import CAV, HUMAN_KINDS

APPROACH_TAGS = ("N", "E", "S", "W")

GREEN = "green"
YELLOW = "yellow"
RED = "red"


@dataclass(frozen=True)
class Approach:
    tag: str
    length_m: float = 250.0       # inbound leg
    outbound_m: float = 250.0
    speed_limit: float = 15.0

    @property
    def stop_line_pos(self) -> float:
        return self.length_m

    @property
    def axis_length(self) -> float:
        return self.length_m + self.outbound_m


@dataclass(frozen=True)
class RoadNetwork:
    approaches: tuple[Approach, ...]

    def __post_init__(self) -> None:
        if len(self.approaches) != 4:
            raise ConfigError("RoadNetwork needs exactly 4 approaches")
        for ap in self.approaches:
            if ap.length_m <= 0 or ap.outbound_m <= 0 or ap.speed_limit <= 0:
                raise ConfigError(f"approach {ap.tag}: lengths and speed limit must be > 0")

    def index(self, tag: str) -> int:
        return APPROACH_TAGS.index(tag)


@dataclass(frozen=True)
class Phase:
    served_approaches: tuple[str, ...]
    green_s: float
    yellow_s: float


@dataclass(frozen=True)
class SignalPlan:
    phases: tuple[Phase, ...]
    offset_s: float = 0.0

    def __post_init__(self) -> None:
        served = [tag for ph in self.phases for tag in ph.served_approaches]
        if sorted(served) != sorted(APPROACH_TAGS):
            raise ConfigError("signal phases must partition the 4 approaches")
        for ph in self.phases:
            if ph.green_s <= 0 or ph.yellow_s < 0:
                raise ConfigError("phase durations must be positive")

    @property
    def cycle_s(self) -> float:
        return sum(ph.green_s + ph.yellow_s for ph in self.phases)

    def phase_of(self, approach_tag: str) -> int:
        for i, ph in enumerate(self.phases):
            if approach_tag in ph.served_approaches:
                return i
        raise KeyError(approach_tag)

    def phase_start(self, index: int) -> float:
        return sum(ph.green_s + ph.yellow_s for ph in self.phases[:index])

    def green_windows(self, approach_tag: str, t_end: float):
        """Green intervals [on, off) for one approach within [0, t_end]."""
        i = self.phase_of(approach_tag)
        on0 = self.phase_start(i) - self.offset_s
        cycle = self.cycle_s
        g = self.phases[i].green_s
        k = int(np.floor(-on0 / cycle)) - 1
        out = []
        while True:
            on = on0 + k * cycle
            if on > t_end:
                break
            if on >= 0:
                out.append((on, on + g))
            k += 1
        return out


@dataclass
class PhaseState:
    """Instantaneous signal state: indication and exact time-to-green per approach."""

    active_phase_index: int
    indication: dict[str, str]
    time_to_green: dict[str, float]


@dataclass(frozen=True)
class Arrival:
    entry_time: float
    entry_speed: float
    controller_kind: str


@dataclass
class ArrivalSchedule:
    """Per-approach arrival lists; entry times strictly increasing per approach."""

    per_approach: tuple[tuple[Arrival, ...], ...]

    def __post_init__(self) -> None:
        for arrivals in self.per_approach:
            times = [a.entry_time for a in arrivals]
            if any(t2 <= t1 for t1, t2 in zip(times, times[1:])):
                raise ConfigError("arrival entry times must be strictly increasing")

    @property
    def total(self) -> int:
        return sum(len(a) for a in self.per_approach)


def default_plan(cfg: ScenarioConfig) -> SignalPlan:
    return SignalPlan(
        phases=(
            Phase(("N", "S"), cfg.green_s, cfg.yellow_s),
            Phase(("E", "W"), cfg.green_s, cfg.yellow_s),
        ),
        offset_s=cfg.signal_offset_s,
    )


def signal_state(plan: SignalPlan, t: float) -> PhaseState:
    """Signal indication and remaining time to the next green onset at time ``t``.

    Periodic with period ``cycle_s``; time_to_green is 0 during an
    approach's own green.
    """
    if t < 0:
        raise ValueError("t must be >= 0")
    cycle = plan.cycle_s
    tau = (t + plan.offset_s) % cycle
    indication: dict[str, str] = {}
    ttg: dict[str, float] = {}
    active = 0
    for i, ph in enumerate(plan.phases):
        start = plan.phase_start(i)
        if start <= tau < start + ph.green_s + ph.yellow_s:
            active = i
        for tag in ph.served_approaches:
            if start <= tau < start + ph.green_s:
                indication[tag] = GREEN
                ttg[tag] = 0.0
            elif start + ph.green_s <= tau < start + ph.green_s + ph.yellow_s:
                indication[tag] = YELLOW
                ttg[tag] = (start - tau) % cycle
            else:
                indication[tag] = RED
                ttg[tag] = (start - tau) % cycle
    return PhaseState(active_phase_index=active, indication=indication, time_to_green=ttg)


def _arrival_times(cfg: ScenarioConfig) -> list[float]:
    rate = cfg.inflow_veh_per_hr / (4.0 if cfg.inflow_is_total else 1.0)
    if rate <= 0:
        return []
    headway = 3600.0 / rate
    t_end = cfg.horizon_steps * cfg.dt_s
    n = int(np.floor(t_end / headway)) + 1
    return [k * headway for k in range(n) if k * headway <= t_end]


def build_schedule(cfg: ScenarioConfig) -> ArrivalSchedule:
    """Deterministic arrival schedule before controller assignment (all human)."""
    times = _arrival_times(cfg)
    arrivals = tuple(
        tuple(Arrival(t, cfg.entry_speed_mps, cfg.human_model) for t in times)
        for _ in APPROACH_TAGS
    )
    return ArrivalSchedule(arrivals)


def assign_controllers(
    schedule: ArrivalSchedule,
    penetration_pct: float,
    human_model: str,
    seed: int,
) -> ArrivalSchedule:
    """Tag a deterministic, seed-keyed fraction of arrivals as policy CAVs.

    Per approach, round(n * pct / 100) vehicles become CAVs (within one
    vehicle of the exact fraction); the rest run ``human_model``.
    """
    if not 0 <= penetration_pct <= 100:
        raise ConfigError("invalid scenario config field: penetration_pct")
    if human_model not in HUMAN_KINDS:
        raise ConfigError("invalid scenario config field: human_model")
    out = []
    for idx, arrivals in enumerate(schedule.per_approach):
        n = len(arrivals)
        n_cav = int(round(n * penetration_pct / 100.0))
        rng = np.random.default_rng([seed, 7, idx])
        cav_slots = set(rng.permutation(n)[:n_cav].tolist())
        out.append(tuple(
            Arrival(a.entry_time, a.entry_speed, CAV if i in cav_slots else human_model)
            for i, a in enumerate(arrivals)
        ))
    return ArrivalSchedule(tuple(out))


def build_scenario(cfg: ScenarioConfig) -> tuple[RoadNetwork, SignalPlan, ArrivalSchedule]:
    """Network, signal plan, and controller-tagged arrival schedule for one run."""
    network = RoadNetwork(tuple(
        Approach(tag, cfg.approach_length_m, cfg.outbound_length_m, cfg.speed_limit_mps)
        for tag in APPROACH_TAGS
    ))
    plan = default_plan(cfg)
    schedule = assign_controllers(
        build_schedule(cfg), cfg.penetration_pct, cfg.human_model, cfg.seed
    )
    return network, plan, schedule
