"""Scenario runner, metrics aggregation, penetration sweeps, and exports."""
from __future__ import annotations

import json
import statistics
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .config import ScenarioConfig
from .controllers import PolicyParams
from .dynamics import ALL_KINDS, CAV
from .environment import TrajectoryLog, World
from .scenario import APPROACH_TAGS, Arrival, ArrivalSchedule, SignalPlan, build_scenario


@dataclass
class MetricsReport:
    """Per-vehicle averages over trips fully inside the measured window."""

    mean_fuel_l: float
    mean_co2_kg: float
    mean_speed_mps: float
    throughput_per_green: dict[str, float]
    stops_per_vehicle: float
    episode_s: float
    n_vehicles: int
    config_digest: str
    empty: bool = False
    replicates: list["MetricsReport"] = field(default_factory=list)
    log: Optional[TrajectoryLog] = field(default=None, repr=False, compare=False)

    def to_dict(self) -> dict:
        return {
            "mean_fuel_l": self.mean_fuel_l,
            "mean_co2_kg": self.mean_co2_kg,
            "mean_speed_mps": self.mean_speed_mps,
            "throughput_per_green": self.throughput_per_green,
            "stops_per_vehicle": self.stops_per_vehicle,
            "episode_s": self.episode_s,
            "n_vehicles": self.n_vehicles,
            "config_digest": self.config_digest,
            "empty": self.empty,
            "replicates": [r.to_dict() for r in self.replicates],
        }


def _windows(
    plan: SignalPlan, tag: str, t_end: float, t_start: float = 0.0
) -> list[tuple[float, float]]:
    """Complete service windows [green onset, end of yellow) inside [t_start, t_end]."""
    i = plan.phase_of(tag)
    y = plan.phases[i].yellow_s
    return [
        (on, off + y)
        for on, off in plan.green_windows(tag, t_end)
        if on >= t_start - 1e-9 and off + y <= t_end + 1e-9
    ]


def _throughput(
    crossings, plan: SignalPlan, t_end: float, t_start: float = 0.0
) -> dict[str, float]:
    out = {}
    for ai, tag in enumerate(APPROACH_TAGS):
        windows = _windows(plan, tag, t_end, t_start)
        if not windows:
            out[tag] = 0.0
            continue
        times = sorted(t for t, a, _ in crossings if a == ai)
        counts = [sum(1 for t in times if on <= t < off) for on, off in windows]
        out[tag] = float(np.mean(counts))
    return out


def metrics_from_world(world: World) -> MetricsReport:
    """Fuel / CO2 / speed / stop metrics over post-warm-up complete trips."""
    cfg = world.cfg
    t_warm = cfg.warmup_steps * cfg.dt_s
    episode_s = cfg.horizon_steps * cfg.dt_s
    measured = [v for v in world.exited if v.entry_time >= t_warm]
    throughput = _throughput(world.crossings, world.plan, episode_s, t_warm)
    if not measured:
        return MetricsReport(0.0, 0.0, 0.0, throughput, 0.0, episode_s, 0,
                             cfg.digest(), empty=True)
    n = len(measured)
    return MetricsReport(
        mean_fuel_l=sum(v.cumulative_fuel for v in measured) / n,
        mean_co2_kg=sum(v.cumulative_co2 for v in measured) / n,
        mean_speed_mps=sum(v.pos / (v.exit_time - v.entry_time) for v in measured) / n,
        throughput_per_green=throughput,
        stops_per_vehicle=sum(v.stop_count for v in measured) / n,
        episode_s=episode_s,
        n_vehicles=n,
        config_digest=cfg.digest(),
    )


def _retag(schedule: ArrivalSchedule, kind: str) -> ArrivalSchedule:
    return ArrivalSchedule(tuple(
        tuple(Arrival(a.entry_time, a.entry_speed, kind) for a in lane)
        for lane in schedule.per_approach
    ))


def run_episode(
    cfg: ScenarioConfig,
    seed: int = 0,
    policy: Optional[PolicyParams] = None,
    controller_override: Optional[str] = None,
    log_trajectories: bool = False,
) -> World:
    """One full episode; policy CAVs use deterministic mean actions."""
    scenario = build_scenario(cfg)
    if controller_override is not None:
        if controller_override not in ALL_KINDS:
            raise ValueError(f"unknown controller {controller_override!r}")
        scenario = (scenario[0], scenario[1], _retag(scenario[2], controller_override))
    has_cav = any(
        a.controller_kind == CAV for lane in scenario[2].per_approach for a in lane
    )
    if has_cav and policy is None:
        raise ValueError("scenario contains policy CAVs but no policy was given")
    world = World(cfg, seed=seed, log_trajectories=log_trajectories, scenario=scenario)
    obs_map: dict[str, np.ndarray] = {}
    while not world.done:
        actions: dict[str, float] = {}
        if policy is not None and obs_map:
            ids = sorted(obs_map)
            mu, _ = policy.net.forward(np.stack([obs_map[i] for i in ids]))
            a = np.clip(mu, cfg.a_min_mps2, cfg.a_max_mps2)
            actions = dict(zip(ids, a.tolist()))
        obs_map, _, _ = world.step(actions)
    return world


def _aggregate(reports: list[MetricsReport]) -> MetricsReport:
    if len(reports) == 1:
        return reports[0]
    mean = lambda vals: float(np.mean(vals))
    return MetricsReport(
        mean_fuel_l=mean([r.mean_fuel_l for r in reports]),
        mean_co2_kg=mean([r.mean_co2_kg for r in reports]),
        mean_speed_mps=mean([r.mean_speed_mps for r in reports]),
        throughput_per_green={
            tag: mean([r.throughput_per_green[tag] for r in reports])
            for tag in APPROACH_TAGS
        },
        stops_per_vehicle=mean([r.stops_per_vehicle for r in reports]),
        episode_s=reports[0].episode_s,
        n_vehicles=int(round(mean([r.n_vehicles for r in reports]))),
        config_digest=reports[0].config_digest,
        empty=all(r.empty for r in reports),
        replicates=reports,
    )


def run_scenario(
    cfg: ScenarioConfig,
    seed: int = 0,
    n_replicates: int = 1,
    policy: Optional[PolicyParams] = None,
    controller_override: Optional[str] = None,
    log_trajectories: bool = False,
) -> MetricsReport:
    """Metrics averaged across replicates that differ only in noise seeds."""
    if n_replicates < 1:
        raise ValueError("n_replicates must be >= 1")
    reports = []
    last_world = None
    for r in range(n_replicates):
        world = run_episode(
            cfg, seed=seed + r, policy=policy, controller_override=controller_override,
            log_trajectories=log_trajectories and r == n_replicates - 1,
        )
        reports.append(metrics_from_world(world))
        last_world = world
    out = _aggregate(reports)
    if log_trajectories:
        out.log = last_world.log
    return out


# --------------------------------------------------------------------------
# Penetration sweep
# --------------------------------------------------------------------------

@dataclass
class SweepCell:
    penetration_pct: float
    human_model: str
    fuel_l: float
    co2_kg: float
    speed_mps: float
    fuel_improvement_pct: float
    co2_improvement_pct: float
    speed_improvement_pct: float


@dataclass
class SweepResult:
    cells: list[SweepCell]

    def cell(self, penetration: float, human_model: str) -> SweepCell:
        for c in self.cells:
            if c.penetration_pct == penetration and c.human_model == human_model:
                return c
        raise KeyError((penetration, human_model))


def _median_metrics(reports: list[MetricsReport]) -> tuple[float, float, float]:
    return (
        statistics.median(r.mean_fuel_l for r in reports),
        statistics.median(r.mean_co2_kg for r in reports),
        statistics.median(r.mean_speed_mps for r in reports),
    )


def penetration_sweep(
    policy: PolicyParams,
    cfg: ScenarioConfig,
    human_model: str = "vidm",
    percents: Sequence[float] = (25, 50, 75, 100),
    seeds: Sequence[int] = (0, 1, 2, 3, 4),
) -> SweepResult:
    """Zero-shot transfer grid: frozen mean-action policy vs one human model.

    Improvements are computed against the matching pure-human run (the 0%
    cell, included in the result as a validation row that is 0 by
    construction). Cell values are medians over the given seeds; each seed
    drives both the CAV assignment and the human noise streams.
    """
    baseline_reports = [
        metrics_from_world(run_episode(
            replace(cfg, penetration_pct=0.0, human_model=human_model, seed=s), seed=s
        ))
        for s in seeds
    ]
    base = _median_metrics(baseline_reports)
    cells = []
    for pct in [0.0, *percents]:
        if pct == 0.0:
            reports = baseline_reports
        else:
            reports = [
                metrics_from_world(run_episode(
                    replace(cfg, penetration_pct=pct, human_model=human_model, seed=s),
                    seed=s, policy=policy,
                ))
                for s in seeds
            ]
        fuel, co2, speed = _median_metrics(reports)
        cells.append(SweepCell(
            penetration_pct=pct,
            human_model=human_model,
            fuel_l=fuel,
            co2_kg=co2,
            speed_mps=speed,
            fuel_improvement_pct=(base[0] - fuel) / base[0] * 100.0 if base[0] else 0.0,
            co2_improvement_pct=(base[1] - co2) / base[1] * 100.0 if base[1] else 0.0,
            speed_improvement_pct=(speed - base[2]) / base[2] * 100.0 if base[2] else 0.0,
        ))
    return SweepResult(cells)


# --------------------------------------------------------------------------
# Exports
# --------------------------------------------------------------------------

TRAJECTORY_HEADER = "t,veh_id,approach,pos_m,vel_mps,accel_mps2,fuel_Lps,co2_mgps"


def export_trajectories(log: TrajectoryLog, path: str | Path) -> Path:
    """Write the trajectory log as CSV, rows sorted by (t, veh_id)."""
    path = Path(path)
    rows = sorted(log.rows, key=lambda r: (r[0], r[1]))
    lines = [TRAJECTORY_HEADER]
    for t, vid, tag, pos, vel, acc, fr, cr in rows:
        lines.append(
            f"{t:.3f},{vid},{tag},{pos:.6f},{vel:.6f},{acc:.6f},{fr:.9f},{cr:.6f}"
        )
    path.write_text("\n".join(lines) + "\n")
    return path


def throughput_per_green(log: TrajectoryLog, approach: str) -> float:
    """Mean stop-line crossings per complete post-warm-up service window."""
    ai = APPROACH_TAGS.index(approach)
    sl = log.stop_lines[ai]
    last: dict[str, tuple[float, float]] = {}
    crossings = []
    for t, vid, tag, pos, *_ in log.rows:
        if tag != approach:
            continue
        if vid in last:
            t_prev, p_prev = last[vid]
            if p_prev < sl <= pos:
                crossings.append((t_prev, ai, vid))
        last[vid] = (t, pos)
    t_end = max((r[0] for r in log.rows), default=0.0)
    return _throughput(crossings, log.plan, t_end, log.warmup_s)[approach]


def report_to_json(report: MetricsReport) -> str:
    return json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n"


def write_baseline_csv(rows: dict[str, MetricsReport], path: str | Path) -> Path:
    path = Path(path)
    lines = ["model,fuel_L,co2_kg,speed_mps,throughput_per_green,stops_per_vehicle"]
    for name, rep in rows.items():
        thr = float(np.mean(list(rep.throughput_per_green.values())))
        lines.append(
            f"{name},{rep.mean_fuel_l:.6f},{rep.mean_co2_kg:.6f},"
            f"{rep.mean_speed_mps:.4f},{thr:.3f},{rep.stops_per_vehicle:.3f}"
        )
    path.write_text("\n".join(lines) + "\n")
    return path


def write_sweep_csv(result: SweepResult, path: str | Path) -> Path:
    path = Path(path)
    lines = ["penetration_pct,human_model,fuel_L,co2_kg,speed_mps,"
             "fuel_improvement_pct,co2_improvement_pct,speed_improvement_pct"]
    for c in result.cells:
        lines.append(
            f"{c.penetration_pct:.0f},{c.human_model},{c.fuel_l:.6f},{c.co2_kg:.6f},"
            f"{c.speed_mps:.4f},{c.fuel_improvement_pct:.4f},"
            f"{c.co2_improvement_pct:.4f},{c.speed_improvement_pct:.4f}"
        )
    path.write_text("\n".join(lines) + "\n")
    return path


def write_curve_csv(curve, path: str | Path) -> Path:
    path = Path(path)
    lines = ["iteration,mean_return,mean_fuel_L,mean_speed_mps,kl,accepted,"
             "eval_fuel_L,eval_speed_mps"]
    for r in curve:
        ev_f = "" if r.eval_fuel_l is None else f"{r.eval_fuel_l:.6f}"
        ev_s = "" if r.eval_speed_mps is None else f"{r.eval_speed_mps:.4f}"
        lines.append(
            f"{r.iteration},{r.mean_return:.6g},{r.mean_fuel_l:.6f},"
            f"{r.mean_speed_mps:.4f},{r.kl:.6g},{int(r.accepted)},{ev_f},{ev_s}"
        )
    path.write_text("\n".join(lines) + "\n")
    return path
