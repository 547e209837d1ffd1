"""Pluggable longitudinal controllers.

Human baselines (deterministic IDM plus noisy and heterogeneous variants),
a signal-aware glide controller ("EcoGlide") that times its stop-line
arrival to the green window, and the learned Gaussian policy head with
exact analytic log-probability gradients.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .dynamics import (
    CAV,
    HUMAN_KINDS,
    M_IDM,
    N_IDM,
    V_IDM,
    IdmParams,
    Leader,
    VehicleState,
    idm_accel,
    nearer_leader,
)
from .scenario import GREEN, SignalPlan

LOG_2PI = math.log(2.0 * math.pi)


def _with_speed_cap(params: IdmParams, v_limit: float) -> IdmParams:
    """Clone params with the desired speed capped at the road's limit."""
    if params.v0 <= v_limit:
        return params
    return IdmParams(v_limit, params.T, params.h0, params.c, params.b, params.delta)


def control_human(
    kind: str,
    ego: VehicleState,
    effective_leader: Optional[Leader],
    params: IdmParams,
    v_limit: float,
    noise_stream=None,
    noise_halfwidth: float = 0.2,
) -> float:
    """One human baseline acceleration: IDM, optionally with uniform noise.

    vidm is the plain IDM output; nidm and midm add unif(-w, w) noise from
    the vehicle's own seeded stream (midm differs only by its per-driver
    sampled ``params``).
    """
    if kind not in HUMAN_KINDS:
        raise ValueError(f"not a human controller kind: {kind!r}")
    a = idm_accel(ego, effective_leader, _with_speed_cap(params, v_limit))
    if kind in (N_IDM, M_IDM):
        a += noise_stream.uniform(-noise_halfwidth, noise_halfwidth)
    return a


# --------------------------------------------------------------------------
# EcoGlide: queue-aware green-window glide planner
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class GlideLimits:
    v_max: float = 15.0
    v_min_glide: float = 2.0
    margin_s: float = 1.0           # target arrival this long after green onset
    queue_headway_s: float = 1.5    # stop-line clearance per queued vehicle ahead
    track_tau_s: float = 2.0        # speed-tracking time constant


def earliest_arrival_s(v: float, d: float, v_max: float, a_acc: float) -> float:
    """Minimum time to cover ``d`` while accelerating at ``a_acc`` up to ``v_max``."""
    if d <= 0:
        return 0.0
    d_to_vmax = max(0.0, (v_max * v_max - v * v) / (2.0 * a_acc))
    if d_to_vmax <= d:
        return (v_max - v) / a_acc + (d - d_to_vmax) / v_max
    return (-v + math.sqrt(v * v + 2.0 * a_acc * d)) / a_acc


def _upcoming_green_windows(plan: SignalPlan, tag: str, t: float, n: int = 3):
    """The next ``n`` green intervals [on, off) for an approach, including a current one."""
    i = plan.phase_of(tag)
    cycle = plan.cycle_s
    on0 = plan.phase_start(i) - plan.offset_s
    g = plan.phases[i].green_s
    k = math.floor((t - on0 - g) / cycle) + 1  # first window with off > t
    return [(on0 + j * cycle, on0 + j * cycle + g) for j in range(k, k + n)]


def control_eco_glide(
    ego: VehicleState,
    plan: SignalPlan,
    t: float,
    stop_line: float,
    real_leader: Optional[Leader],
    signal_leader: Optional[Leader],
    n_ahead: int,
    limits: GlideLimits,
    params: IdmParams,
    approach_tag: str,
) -> float:
    """Glide toward a stop-line arrival inside a green window, never
    planning a stop while a no-stop trajectory at or above ``v_min_glide``
    exists; IDM following takes over whenever the leader binds harder, and
    the red-light stop behavior is the fallback when no glide is feasible.
    """
    cf = _with_speed_cap(params, limits.v_max)
    d = stop_line - ego.pos
    if d <= 0:  # past the line: free driving behind the real leader
        return idm_accel(ego, real_leader, cf)

    t_a = earliest_arrival_s(ego.vel, d, limits.v_max, params.c)
    per_window = max(1, int(plan.phases[plan.phase_of(approach_tag)].green_s
                            // limits.queue_headway_s))
    v_tgt = None
    for w, (on, off) in enumerate(_upcoming_green_windows(plan, approach_tag, t)):
        queue = max(0, n_ahead - w * per_window)
        release = max(on + limits.margin_s + queue * limits.queue_headway_s, t)
        t_target = max(t + t_a, release)
        if t_target >= off:
            continue
        if t_target <= t + t_a + 1e-9:
            v_tgt = limits.v_max
        else:
            v_req = d / (t_target - t)
            if v_req < limits.v_min_glide:
                v_tgt = None  # would have to crawl: treat as no feasible glide
            else:
                v_tgt = min(v_req, limits.v_max)
        break

    if v_tgt is None:
        # no no-stop trajectory: behave like IDM facing the red light
        return idm_accel(ego, nearer_leader(ego, real_leader, signal_leader), cf)

    a_track = min(max((v_tgt - ego.vel) / limits.track_tau_s, -params.b), params.c)
    if real_leader is not None:
        a_track = min(a_track, idm_accel(ego, real_leader, cf))
    return a_track


# --------------------------------------------------------------------------
# Gaussian policy / value networks (two hidden tanh layers)
# --------------------------------------------------------------------------

@dataclass
class Mlp:
    """Fully-connected trunk with tanh hidden layers and a linear scalar head."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray

    @staticmethod
    def init(in_dim: int, hidden: int, rng, out_scale: float = 0.01, out_bias: float = 0.0) -> "Mlp":
        def glorot(n_in, n_out):
            lim = math.sqrt(6.0 / (n_in + n_out))
            return rng.uniform(-lim, lim, size=(n_in, n_out))

        return Mlp(
            w1=glorot(in_dim, hidden),
            b1=np.zeros(hidden),
            w2=glorot(hidden, hidden),
            b2=np.zeros(hidden),
            w3=glorot(hidden, 1) * out_scale,
            b3=np.full(1, out_bias),
        )

    @property
    def arrays(self) -> list[np.ndarray]:
        return [self.w1, self.b1, self.w2, self.b2, self.w3, self.b3]

    def forward(self, x: np.ndarray):
        """Batched forward pass; returns (out, cache) with cache for backprop."""
        h1 = np.tanh(x @ self.w1 + self.b1)
        h2 = np.tanh(h1 @ self.w2 + self.b2)
        out = (h2 @ self.w3).ravel() + self.b3[0]
        return out, (x, h1, h2)

    def backward(self, cache, dout: np.ndarray) -> list[np.ndarray]:
        """Parameter gradients of sum(dout * out); same order as ``arrays``."""
        x, h1, h2 = cache
        dv = dout[:, None]
        dw3 = h2.T @ dv
        db3 = np.array([dout.sum()])
        dh2 = dv @ self.w3.T
        dz2 = dh2 * (1.0 - h2 * h2)
        dw2 = h1.T @ dz2
        db2 = dz2.sum(axis=0)
        dh1 = dz2 @ self.w2.T
        dz1 = dh1 * (1.0 - h1 * h1)
        dw1 = x.T @ dz1
        db1 = dz1.sum(axis=0)
        return [dw1, db1, dw2, db2, dw3, db3]

    def jvp(self, x: np.ndarray, tangents: list[np.ndarray]) -> np.ndarray:
        """Forward-mode directional derivative of the output w.r.t. parameters."""
        tw1, tb1, tw2, tb2, tw3, tb3 = tangents
        h1 = np.tanh(x @ self.w1 + self.b1)
        th1 = (1.0 - h1 * h1) * (x @ tw1 + tb1)
        h2 = np.tanh(h1 @ self.w2 + self.b2)
        th2 = (1.0 - h2 * h2) * (th1 @ self.w2 + h1 @ tw2 + tb2)
        return (th2 @ self.w3).ravel() + (h2 @ tw3).ravel() + tb3[0]


@dataclass
class PolicyParams:
    """Actor trunk plus a state-independent log standard deviation."""

    net: Mlp
    log_std: float
    obs_dim: int
    hidden: int

    def validate(self) -> None:
        if not math.isfinite(self.log_std):
            raise ValueError("non-finite log_std in policy parameters")
        for a in self.net.arrays:
            if not np.all(np.isfinite(a)):
                raise ValueError("non-finite weights in policy parameters")

    @property
    def n_params(self) -> int:
        return sum(a.size for a in self.net.arrays) + 1

    def get_flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.net.arrays] + [[self.log_std]])

    def set_flat(self, theta: np.ndarray) -> None:
        i = 0
        for a in self.net.arrays:
            a[...] = theta[i : i + a.size].reshape(a.shape)
            i += a.size
        self.log_std = float(theta[i])

    def copy(self) -> "PolicyParams":
        p = init_policy(self.obs_dim, self.hidden, seed=0)
        p.set_flat(self.get_flat())
        return p


def init_policy(
    obs_dim: int,
    hidden: int = 64,
    seed: int = 0,
    init_log_std: float = math.log(0.5),
    out_bias: float = 0.5,
) -> PolicyParams:
    """Fresh policy; the small positive output bias starts traffic flowing."""
    rng = np.random.default_rng([seed, 11])
    net = Mlp.init(obs_dim, hidden, rng, out_scale=0.01, out_bias=out_bias)
    return PolicyParams(net=net, log_std=init_log_std, obs_dim=obs_dim, hidden=hidden)


def policy_mean(params: PolicyParams, obs: np.ndarray) -> np.ndarray:
    mu, _ = params.net.forward(np.atleast_2d(obs))
    return mu


def policy_action(
    obs: np.ndarray,
    params: PolicyParams,
    mode: str = "mean",
    rng=None,
    a_min: float = -3.0,
    a_max: float = 3.0,
) -> float:
    """Acceleration command for one observation, clamped into (a_min, a_max)."""
    params.validate()
    mu = float(policy_mean(params, obs)[0])
    if mode == "mean":
        a = mu
    elif mode == "sample":
        if rng is None:
            raise ValueError("sample mode needs an rng or seed")
        if isinstance(rng, (int, np.integer)):
            rng = np.random.default_rng(rng)
        a = mu + math.exp(params.log_std) * rng.standard_normal()
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return min(max(a, a_min), a_max)


def gaussian_logprob(mu: np.ndarray, log_std: float, actions: np.ndarray) -> np.ndarray:
    z = (actions - mu) / math.exp(log_std)
    return -0.5 * z * z - log_std - 0.5 * LOG_2PI


def policy_logprob_and_grad(
    obs: np.ndarray, action: float, params: PolicyParams
) -> tuple[float, np.ndarray]:
    """Log-density of ``action`` and its exact gradient w.r.t. the flat parameters."""
    x = np.atleast_2d(obs)
    mu, cache = params.net.forward(x)
    sigma = math.exp(params.log_std)
    z = (action - mu[0]) / sigma
    logp = -0.5 * z * z - params.log_std - 0.5 * LOG_2PI
    dmu = np.array([z / sigma])
    grads = params.net.backward(cache, dmu)
    dlog_std = z * z - 1.0
    flat = np.concatenate([g.ravel() for g in grads] + [[dlog_std]])
    return float(logp), flat


# --------------------------------------------------------------------------
# Checkpoint I/O: text header with shapes, then raw little-endian float64
# --------------------------------------------------------------------------

_MAGIC = b"ECODRIVE-POLICY 1\n"


def save_checkpoint(params: PolicyParams, path: str | Path) -> None:
    header = {
        "obs_dim": params.obs_dim,
        "hidden": params.hidden,
        "shapes": [list(a.shape) for a in params.net.arrays],
        "dtype": "<f8",
    }
    blob = np.ascontiguousarray(params.get_flat(), dtype="<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(blob)


def load_checkpoint(path: str | Path) -> PolicyParams:
    with open(path, "rb") as fh:
        if fh.readline() != _MAGIC:
            raise ValueError(f"not a policy checkpoint: {path}")
        header = json.loads(fh.readline().decode())
        flat = np.frombuffer(fh.read(), dtype="<f8").copy()
    params = init_policy(header["obs_dim"], header["hidden"])
    if flat.size != params.n_params:
        raise ValueError("checkpoint parameter count does not match its header")
    params.set_flat(flat)
    return params
