"""The POMDP environment: world state, observations, reward, and stepping.

One World owns the vehicles of one episode. Per step, accelerations for
every vehicle are computed from the previous snapshot (human baselines and
EcoGlide internally, policy CAVs from the supplied action map), filtered
through the speed governor and the safety guard, then integrated
synchronously. Energy accumulates per vehicle; the fleet reward is shared
within each signal phase group. The first ``warmup_steps`` steps drive
CAV-tagged vehicles with the deterministic IDM and record no rewards.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .config import CommsConfig, RewardCoeffs, ScenarioConfig
from .controllers import GlideLimits, control_eco_glide, control_human
from .dynamics import (
    CAV,
    ECO_GLIDE,
    HUMAN_KINDS,
    M_IDM,
    STOP_SPEED,
    V_IDM,
    HumanDriverModel,
    IdmParams,
    VehicleState,
    nearer_leader,
    red_light_leader,
    safety_guard,
    sample_idm_params,
    speed_limit_accel,
    step_vehicle,
)
from .energy import accumulate, fuel_rate, co2_rate
from .scenario import (
    APPROACH_TAGS,
    ArrivalSchedule,
    PhaseState,
    RoadNetwork,
    SignalPlan,
    build_scenario,
    signal_state,
)

__all__ = [
    "CommsConfig", "RewardCoeffs", "Observation", "PhaseGroupStats",
    "World", "reset", "observe", "phase_stats", "reward", "TrajectoryLog",
]


@dataclass
class Observation:
    """Normalized policy input; scalar slots live in [0, 1].

    Lead/follow slots fall back to the sentinel 1.0 ("far and fast") when
    no neighbor is within V2V range; tl_time falls back to 1.0 outside I2V
    range. tl_phase stays the one-hot of the ego's own serving phase,
    which is a static property of its approach.
    """

    v_cav: float
    p_cav: float
    tl_phase: tuple[float, ...]
    v_lead: float
    p_lead: float
    v_follow: float
    p_follow: float
    tl_time: float

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.v_cav, self.p_cav, *self.tl_phase,
             self.v_lead, self.p_lead, self.v_follow, self.p_follow, self.tl_time]
        )


@dataclass
class PhaseGroupStats:
    """Per-step aggregates over one phase group's vehicles, all in [0, 1]."""

    f_bar: float
    v_bar: float
    s_bar: float
    approach_start_stop: bool


def reward(stats: PhaseGroupStats, coeffs: RewardCoeffs) -> float:
    """Four-branch fleet reward; exactly one branch fires, tested R1..R4.

    Exponential arguments are clamped so the strong fuel penalty stays
    finite.
    """
    clamp = coeffs.exp_clamp
    if stats.approach_start_stop:
        return coeffs.mu1
    ev = math.exp(min(stats.v_bar, clamp))
    if stats.f_bar <= coeffs.delta and stats.s_bar == 0.0:
        return coeffs.mu2 + coeffs.mu3 * ev
    if stats.f_bar <= coeffs.delta and stats.s_bar > 0.0:
        return coeffs.mu4 + coeffs.mu5 * ev + coeffs.mu6 * stats.s_bar
    ef = math.exp(min(coeffs.mu9 * stats.f_bar, clamp))
    return coeffs.mu7 + coeffs.mu8 * ef + coeffs.mu10 * ev + coeffs.mu11 * stats.s_bar


@dataclass
class TrajectoryLog:
    """In-memory per-step, per-vehicle log with enough metadata to analyze."""

    plan: SignalPlan
    stop_lines: tuple[float, ...]
    dt: float
    warmup_s: float = 0.0
    rows: list = field(default_factory=list)  # (t, id, tag, pos, vel, accel, fuel_rate, co2_rate)


class World:
    """Mutable simulation state for one episode."""

    def __init__(
        self,
        cfg: ScenarioConfig,
        seed: int = 0,
        log_trajectories: bool = False,
        scenario: Optional[tuple[RoadNetwork, SignalPlan, ArrivalSchedule]] = None,
    ):
        self.cfg = cfg
        self.seed = seed
        self.network, self.plan, self.schedule = scenario or build_scenario(cfg)
        self.dt = cfg.dt_s
        self.n_phases = len(self.plan.phases)
        self._phase_of_approach = tuple(
            self.plan.phase_of(ap.tag) for ap in self.network.approaches
        )
        self._human = HumanDriverModel(
            kind=cfg.human_model,
            noise_halfwidth=cfg.noise_halfwidth_mps2,
            param_rel_std=cfg.midm_rel_std,
            base=cfg.idm,
        )
        self._glide = GlideLimits(
            v_max=cfg.speed_limit_mps,
            v_min_glide=cfg.v_min_glide_mps,
            margin_s=cfg.glide_margin_s,
            queue_headway_s=cfg.glide_queue_headway_s,
        )
        self.lanes: list[list[VehicleState]] = [[] for _ in APPROACH_TAGS]
        self.pending: list[deque] = [
            deque(enumerate(arrivals)) for arrivals in self.schedule.per_approach
        ]
        self.exited: list[VehicleState] = []
        self.crossings: list[tuple[float, int, str]] = []
        self.min_gap_seen = math.inf
        self.t_index = 0
        self._noise: dict[str, np.random.Generator] = {}
        self.log = (
            TrajectoryLog(
                self.plan,
                tuple(ap.stop_line_pos for ap in self.network.approaches),
                self.dt,
                warmup_s=cfg.warmup_steps * self.dt,
            )
            if log_trajectories
            else None
        )
        # normalization constants for phase stats
        p = cfg.energy
        self._f_min = p.alpha0 * self.dt
        self._f_max = fuel_rate(cfg.speed_limit_mps, cfg.a_max_mps2, p) * self.dt
        self._spawn(0.0)
        if self.log is not None:
            self._append_log(0.0)

    # -- basic properties ---------------------------------------------------

    @property
    def t(self) -> float:
        return self.t_index * self.dt

    @property
    def done(self) -> bool:
        return self.t_index >= self.cfg.horizon_steps

    @property
    def in_warmup(self) -> bool:
        return self.t_index < self.cfg.warmup_steps

    def vehicles(self):
        for lane in self.lanes:
            yield from lane

    def active_cavs(self) -> list[VehicleState]:
        return [v for v in self.vehicles() if v.controller_kind == CAV]

    def find(self, veh_id: str) -> VehicleState:
        for veh in self.vehicles():
            if veh.id == veh_id:
                return veh
        raise KeyError(f"unknown vehicle id: {veh_id}")

    # -- entries / exits ----------------------------------------------------

    def _spawn(self, t_now: float) -> None:
        cfg = self.cfg
        for ai, pend in enumerate(self.pending):
            lane = self.lanes[ai]
            while pend and pend[0][1].entry_time <= t_now + 1e-9:
                seq, arr = pend[0]
                tail = lane[-1] if lane else None
                if tail is not None:
                    gap = tail.pos - tail.length_m
                    need = cfg.h_min_m + max(
                        0.0,
                        (arr.entry_speed ** 2 - tail.vel ** 2) / (2.0 * abs(cfg.a_min_mps2)),
                    )
                    if gap < need:
                        break  # entrance not safely free: delay to a later step
                kind = arr.controller_kind
                if kind == M_IDM:
                    rng = np.random.default_rng([self.seed, 3, ai, seq])
                    idm = sample_idm_params(cfg.idm, cfg.midm_rel_std, rng)
                else:
                    idm = cfg.idm
                veh = VehicleState(
                    id=f"{APPROACH_TAGS[ai]}{seq:04d}",
                    approach=ai,
                    pos=0.0,
                    vel=arr.entry_speed,
                    length_m=cfg.vehicle_length_m,
                    controller_kind=kind,
                    entry_time=t_now,
                    idm=idm,
                )
                self._noise[veh.id] = np.random.default_rng([self.seed, 5, ai, seq])
                lane.append(veh)
                pend.popleft()

    def _retire(self, t_now: float) -> None:
        for ai, lane in enumerate(self.lanes):
            axis = self.network.approaches[ai].axis_length
            while lane and lane[0].pos >= axis:
                veh = lane.pop(0)
                veh.exit_time = t_now
                self._noise.pop(veh.id, None)
                self.exited.append(veh)

    # -- stepping -----------------------------------------------------------

    def step(self, actions: Optional[dict[str, float]] = None):
        """Advance one step; returns (obs per CAV, reward per CAV, done)."""
        if self.done:
            raise RuntimeError("episode is done; reset a new world")
        actions = actions or {}
        for vid, a in actions.items():
            if not math.isfinite(a):
                raise ValueError(f"non-finite action for CAV {vid}: {a!r}")
        cfg = self.cfg
        dt = self.dt
        phase = signal_state(self.plan, self.t)
        controlled = self.t_index >= cfg.warmup_steps

        # pass 1: commands from the previous snapshot
        cmds: list[tuple[VehicleState, float]] = []
        for ai, lane in enumerate(self.lanes):
            ap = self.network.approaches[ai]
            ind = phase.indication[ap.tag]
            ttg = phase.time_to_green[ap.tag]
            n_before_line = 0
            for i, veh in enumerate(lane):
                real = lane[i - 1].leader_view() if i > 0 else None
                virt = red_light_leader(veh, ind, ttg, ap.stop_line_pos, b=cfg.idm.b)
                eff = nearer_leader(veh, real, virt)
                kind = veh.controller_kind
                if kind == CAV and not controlled:
                    kind = V_IDM  # warm-up: control not introduced yet
                if kind in HUMAN_KINDS:
                    a_raw = control_human(
                        kind, veh, eff, veh.idm, ap.speed_limit,
                        self._noise.get(veh.id), cfg.noise_halfwidth_mps2,
                    )
                elif kind == ECO_GLIDE:
                    a_raw = control_eco_glide(
                        veh, self.plan, self.t, ap.stop_line_pos, real, virt,
                        n_before_line, self._glide, veh.idm, ap.tag,
                    )
                else:
                    if veh.id not in actions:
                        raise ValueError(f"missing action for CAV {veh.id}")
                    a_raw = float(actions[veh.id])
                a_cmd = min(a_raw, speed_limit_accel(veh.vel, ap.speed_limit, dt))
                a_cmd = safety_guard(
                    veh, eff, a_cmd, dt, cfg.h_min_m, cfg.a_min_mps2, cfg.a_max_mps2
                )
                cmds.append((veh, a_cmd))
                if veh.pos < ap.stop_line_pos:
                    n_before_line += 1

        # pass 2: synchronous integration, crossing detection, energy
        for veh, a_cmd in cmds:
            sl = self.network.approaches[veh.approach].stop_line_pos
            prev = veh.pos
            step_vehicle(veh, a_cmd, dt, cfg.a_min_mps2, cfg.a_max_mps2)
            if prev < sl <= veh.pos:
                # stamped with the control snapshot time, so a crossing
                # falls inside the signal window that allowed it
                self.crossings.append((self.t, veh.approach, veh.id))
            accumulate(veh, dt, cfg.energy, cfg.co2)

        t_new = (self.t_index + 1) * dt
        self._retire(t_new)
        self._spawn(t_new)
        for lane in self.lanes:
            for front, back in zip(lane, lane[1:]):
                gap = front.pos - front.length_m - back.pos
                if gap < self.min_gap_seen:
                    self.min_gap_seen = gap

        rewards: dict[str, float] = {}
        cavs = self.active_cavs()
        if controlled and cavs:
            per_phase = [
                reward(phase_stats(self, p), cfg.reward) for p in range(self.n_phases)
            ]
            for veh in cavs:
                rewards[veh.id] = per_phase[self._phase_of_approach[veh.approach]]

        if self.log is not None:
            self._append_log(t_new)
        self.t_index += 1
        obs = self.observations() if (self.t_index >= cfg.warmup_steps and cavs) else {}
        return obs, rewards, self.done

    # -- observation --------------------------------------------------------

    def _observe_vehicle(self, lane, i, phase: PhaseState) -> Observation:
        cfg = self.cfg
        veh = lane[i]
        ap = self.network.approaches[veh.approach]
        v_norm = ap.speed_limit
        sl = ap.stop_line_pos
        one_hot = [0.0] * self.n_phases
        one_hot[self._phase_of_approach[veh.approach]] = 1.0
        v_lead = p_lead = v_follow = p_follow = 1.0
        if i > 0:
            lead = lane[i - 1]
            dist = lead.pos - veh.pos
            if dist < cfg.r_v2v_m:
                v_lead = min(lead.vel / v_norm, 1.0)
                p_lead = dist / cfg.r_v2v_m
        if i + 1 < len(lane):
            fol = lane[i + 1]
            dist = veh.pos - fol.pos
            if dist < cfg.r_v2v_m:
                v_follow = min(fol.vel / v_norm, 1.0)
                p_follow = dist / cfg.r_v2v_m
        d_line = sl - veh.pos
        tl_time = 1.0
        if 0.0 <= d_line < cfg.r_i2v_m:
            tl_time = phase.time_to_green[ap.tag] / self.plan.cycle_s
        return Observation(
            v_cav=min(veh.vel / v_norm, 1.0),
            p_cav=min(max(veh.pos / sl, 0.0), 1.0),
            tl_phase=tuple(one_hot),
            v_lead=v_lead,
            p_lead=p_lead,
            v_follow=v_follow,
            p_follow=p_follow,
            tl_time=tl_time,
        )

    def observations(self) -> dict[str, np.ndarray]:
        """Observation arrays for every active policy CAV, keyed by vehicle id."""
        phase = signal_state(self.plan, self.t)
        out: dict[str, np.ndarray] = {}
        for lane in self.lanes:
            for i, veh in enumerate(lane):
                if veh.controller_kind == CAV:
                    out[veh.id] = self._observe_vehicle(lane, i, phase).as_array()
        return out

    @property
    def obs_dim(self) -> int:
        return 7 + self.n_phases

    def _append_log(self, t_now: float) -> None:
        cfg = self.cfg
        rows = []
        for lane in self.lanes:
            for veh in lane:
                rows.append((
                    t_now, veh.id, APPROACH_TAGS[veh.approach], veh.pos, veh.vel,
                    veh.accel, fuel_rate(veh.vel, veh.accel, cfg.energy),
                    co2_rate(veh.vel, veh.accel, cfg.co2),
                ))
        rows.sort(key=lambda r: r[1])
        self.log.rows.extend(rows)


def reset(cfg: ScenarioConfig, seed: int = 0, log_trajectories: bool = False) -> World:
    """Fresh world at t = 0; warm-up runs inside the horizon via step()."""
    return World(cfg, seed=seed, log_trajectories=log_trajectories)


def observe(world: World, cav_id: str, comms: Optional[CommsConfig] = None) -> Observation:
    """Observation for one CAV; ranges default to the world's comms config."""
    if comms is not None and (
        comms.r_v2v != world.cfg.r_v2v_m or comms.r_i2v != world.cfg.r_i2v_m
    ):
        raise ValueError("observe() uses the world's configured comms ranges")
    veh = world.find(cav_id)
    lane = world.lanes[veh.approach]
    phase = signal_state(world.plan, world.t)
    return world._observe_vehicle(lane, lane.index(veh), phase)


def phase_stats(world: World, phase_index: int) -> PhaseGroupStats:
    """Aggregate fuel / speed / stopped-fraction over one phase group this step."""
    if not 0 <= phase_index < world.n_phases:
        raise ValueError(f"no such phase: {phase_index}")
    cfg = world.cfg
    group = [
        veh
        for ai, lane in enumerate(world.lanes)
        for veh in lane
        if world._phase_of_approach[ai] == phase_index
    ]
    if not group:
        return PhaseGroupStats(0.0, 0.0, 0.0, False)
    n = len(group)
    step_fuel = sum(fuel_rate(v.vel, v.accel, cfg.energy) for v in group) * world.dt / n
    f_span = world._f_max - world._f_min
    f_bar = min(max((step_fuel - world._f_min) / f_span, 0.0), 1.0)
    v_bar = min(sum(v.vel for v in group) / n / cfg.speed_limit_mps, 1.0)
    stopped = [v for v in group if v.vel < STOP_SPEED]
    s_bar = len(stopped) / n
    start_stop = any(v.pos <= cfg.start_zone_m for v in stopped)
    return PhaseGroupStats(f_bar, v_bar, s_bar, start_stop)
