"""Vehicle longitudinal dynamics.

IDM car following with noisy / heterogeneous-driver variants, red-light
stopping via a virtual stop-line leader, discrete-time integration, and a
hard one-step safety guard that keeps bumper-to-bumper gaps above a floor.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

# Controller kind tags carried by every vehicle for its lifetime.
V_IDM = "vidm"
N_IDM = "nidm"
M_IDM = "midm"
ECO_GLIDE = "ecoglide"
CAV = "cav"
HUMAN_KINDS = (V_IDM, N_IDM, M_IDM)
ALL_KINDS = HUMAN_KINDS + (ECO_GLIDE, CAV)

# Speed below which a vehicle counts as stopped for stop accounting.
STOP_SPEED = 0.1


class SafetyViolation(RuntimeError):
    """A car-following computation saw a non-positive bumper-to-bumper gap."""


class Leader(NamedTuple):
    """Minimal view of the vehicle (real or virtual) ahead of an ego vehicle."""

    pos: float
    vel: float
    length: float


@dataclass
class IdmParams:
    """Intelligent Driver Model parameters, calibrated for human-like driving.

    Attributes
    ----------
    v0 : desired velocity, m/s
    T : desired time headway, s
    h0 : jam space headway, m
    c : maximum acceleration, m/s^2
    b : comfortable braking deceleration, m/s^2
    delta : free-road acceleration exponent
    """

    v0: float = 30.0
    T: float = 1.0
    h0: float = 1.5
    c: float = 1.0
    b: float = 1.5
    delta: float = 4.0

    def __post_init__(self) -> None:
        for name in ("v0", "T", "h0", "c", "b", "delta"):
            if getattr(self, name) <= 0:
                raise ValueError(f"IdmParams.{name} must be > 0, got {getattr(self, name)}")


@dataclass
class HumanDriverModel:
    """Spec of one naturalistic-driving baseline.

    kind selects the behavior: ``vidm`` is deterministic IDM, ``nidm`` adds
    uniform acceleration noise, ``midm`` additionally samples per-driver
    IDM parameters from Gaussians around the calibrated means.
    """

    kind: str = V_IDM
    noise_halfwidth: float = 0.2   # m/s^2, unif(-w, w) added for nidm/midm
    param_rel_std: float = 0.10    # midm: Gaussian std as a fraction of each mean
    base: IdmParams = field(default_factory=IdmParams)

    def __post_init__(self) -> None:
        if self.kind not in HUMAN_KINDS:
            raise ValueError(f"unknown human driver model {self.kind!r}")

    def sample_params(self, rng) -> IdmParams:
        """Draw per-driver IDM parameters (midm) or return the base set."""
        if self.kind != M_IDM:
            return self.base
        return sample_idm_params(self.base, self.param_rel_std, rng)


def sample_idm_params(base: IdmParams, rel_std: float, rng) -> IdmParams:
    """Per-driver Gaussian draw around ``base``, truncated at 2 sigma, positive."""
    drawn = {}
    for name in ("v0", "T", "h0", "c", "b", "delta"):
        mean = getattr(base, name)
        std = rel_std * mean
        x = rng.normal(mean, std)
        x = min(max(x, mean - 2.0 * std), mean + 2.0 * std)
        drawn[name] = max(x, 1e-3)
    return IdmParams(**drawn)


@dataclass
class VehicleState:
    """Kinematic state plus controller tag and cumulative energy tallies."""

    id: str
    approach: int                 # index into RoadNetwork.approaches
    pos: float                    # front-bumper position along the approach axis, m
    vel: float                    # m/s, >= 0
    accel: float = 0.0            # last applied acceleration, m/s^2
    length_m: float = 5.0
    controller_kind: str = V_IDM
    cumulative_fuel: float = 0.0  # liters
    cumulative_co2: float = 0.0   # kg
    entry_time: float = 0.0
    exit_time: Optional[float] = None
    stop_count: int = 0
    stopped_flag: bool = False
    idm: IdmParams = field(default_factory=IdmParams)

    def leader_view(self) -> Leader:
        return Leader(self.pos, self.vel, self.length_m)


def gap_to(ego: VehicleState, leader: Leader) -> float:
    """Bumper-to-bumper gap from ego's front to the leader's rear."""
    return leader.pos - leader.length - ego.pos


def idm_accel(ego: VehicleState, leader: Optional[Leader], params: IdmParams) -> float:
    """IDM instantaneous acceleration.

    With a leader, the interaction term uses the desired gap
    H = h0 + max(0, v*T + v*dv / (2*sqrt(c*b))) against the actual gap;
    without one only the free-road term remains.

    Raises
    ------
    SafetyViolation
        If the bumper-to-bumper gap to the leader is not positive.
    """
    v = ego.vel
    free = 1.0 - (v / params.v0) ** params.delta
    if leader is None:
        return params.c * free
    h = gap_to(ego, leader)
    if h <= 0.0:
        raise SafetyViolation(
            f"non-positive gap {h:.3f} m between {ego.id} and its leader"
        )
    dv = v - leader.vel
    desired = params.h0 + max(0.0, v * params.T + v * dv / (2.0 * math.sqrt(params.c * params.b)))
    return params.c * (free - (desired / h) ** 2)


def red_light_leader(
    ego: VehicleState,
    indication: str,
    time_to_green: float,
    stop_line: float,
    b: float = 1.5,
) -> Optional[Leader]:
    """Virtual zero-speed, zero-length leader at the stop line, when it binds.

    Returns the virtual leader when the signal is red, or yellow and the
    vehicle can still stop at comfortable deceleration ``b``. Green, or a
    vehicle already past the line, yields ``None``. ``time_to_green`` is
    unused by the rule but kept alongside the indication for callers that
    already hold a PhaseState.
    """
    if ego.pos >= stop_line or indication == "green":
        return None
    if indication == "yellow":
        dist = stop_line - ego.pos
        if ego.vel * ego.vel / (2.0 * b) > dist:
            return None  # cannot stop comfortably: proceed through
    return Leader(stop_line, 0.0, 0.0)


def nearer_leader(ego: VehicleState, a: Optional[Leader], b: Optional[Leader]) -> Optional[Leader]:
    """The more constraining (nearer) of two candidate leaders."""
    if a is None:
        return b
    if b is None:
        return a
    return a if a.pos - a.length <= b.pos - b.length else b


def step_vehicle(
    state: VehicleState,
    a_cmd: float,
    dt: float,
    a_min: float = -3.0,
    a_max: float = 3.0,
) -> VehicleState:
    """Advance one vehicle by ``dt`` under commanded acceleration.

    The command is clamped to the action bounds, speed is truncated at
    zero, and position advances by the trapezoid of old and new speed;
    the trapezoid IS the definition of traveled distance, so logged
    speeds reconstruct positions exactly. Mutates and returns ``state``.
    """
    if dt <= 0:
        raise ValueError("dt must be > 0")
    a = min(max(a_cmd, a_min), a_max)
    v_new = max(0.0, state.vel + a * dt)
    state.pos += 0.5 * (state.vel + v_new) * dt
    state.vel = v_new
    state.accel = a
    was_stopped = state.stopped_flag
    state.stopped_flag = v_new < STOP_SPEED
    if state.stopped_flag and not was_stopped:
        state.stop_count += 1
    return state


def safety_guard(
    ego: VehicleState,
    leader: Optional[Leader],
    a_cmd: float,
    dt: float,
    h_min: float = 1.0,
    a_min: float = -3.0,
    a_max: float = 3.0,
) -> float:
    """Clip a command so the next-step gap stays at or above ``h_min``.

    Assumes the leader holds its speed for one step. When even full
    braking cannot honor ``h_min``, emergency braking at ``a_min`` is the
    floor. No leader leaves the command untouched.
    """
    if leader is None:
        return a_cmd
    gap = gap_to(ego, leader)
    # largest admissible end-of-step speed from the trapezoid position update
    v_allow = 2.0 * ((gap - h_min) / dt + leader.vel) - ego.vel
    if v_allow <= 0.0:
        a_safe = a_min
    else:
        a_safe = min(max((v_allow - ego.vel) / dt, a_min), a_max)
    return min(a_cmd, a_safe)


def speed_limit_accel(vel: float, v_limit: float, dt: float) -> float:
    """Largest acceleration that keeps the end-of-step speed within the limit."""
    return (v_limit - vel) / dt
