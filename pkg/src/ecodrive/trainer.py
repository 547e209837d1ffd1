"""Desk-scale policy-gradient trainer.

Centralized training with decentralized execution: every CAV shares one
Gaussian policy, each contributes (obs, action, logprob, reward) tuples
against the fleet reward of its own phase group. Updates are
KL-constrained natural-gradient steps (conjugate gradient on Fisher-vector
products, backtracking line search), with a value-baseline network fit by
plain least-squares gradient descent.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .config import ScenarioConfig, TrainConfig
from .controllers import Mlp, PolicyParams, gaussian_logprob, init_policy
from .environment import World
from .harness import MetricsReport, metrics_from_world, run_scenario


@dataclass
class RolloutBatch:
    """Flat arrays of per-(episode, CAV, step) tuples plus episode metrics."""

    obs: np.ndarray        # (N, obs_dim)
    actions: np.ndarray    # (N,)
    logprobs: np.ndarray   # (N,)
    rewards: np.ndarray    # (N,)
    dones: np.ndarray      # (N,) bool, True on the last tuple of a stream
    returns: Optional[np.ndarray] = None
    advantages: Optional[np.ndarray] = None
    n_episodes: int = 0
    episode_metrics: list[MetricsReport] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.actions)

    @property
    def mean_stream_return(self) -> float:
        """Mean over CAV streams of the undiscounted reward sum."""
        n_streams = int(self.dones.sum()) or 1
        return float(self.rewards.sum() / n_streams)


@dataclass
class Critic:
    """Value baseline: MLP over standardized targets, plus the target affine map.

    A fresh critic has target_scale 0 and predicts exactly 0 everywhere.
    """

    net: Mlp
    target_mean: float = 0.0
    target_scale: float = 0.0
    last_losses: list = field(default_factory=list)

    def predict(self, obs: np.ndarray) -> np.ndarray:
        if self.target_scale == 0.0:
            return np.full(len(np.atleast_2d(obs)), self.target_mean)
        out, _ = self.net.forward(np.atleast_2d(obs))
        return self.target_mean + self.target_scale * out


def init_critic(obs_dim: int, hidden: int = 64, seed: int = 0) -> Critic:
    rng = np.random.default_rng([seed, 17])
    return Critic(net=Mlp.init(obs_dim, hidden, rng, out_scale=0.01, out_bias=0.0))


def collect_rollouts(
    policy: PolicyParams,
    cfg: ScenarioConfig,
    n_steps: int,
    seed: int = 0,
    mode: str = "sample",
) -> RolloutBatch:
    """Roll whole episodes until at least ``n_steps`` CAV tuples are gathered."""
    if n_steps <= 0:
        raise ValueError("n_steps must be > 0")
    sigma = math.exp(policy.log_std)
    obs_list: list[np.ndarray] = []
    act_list: list[float] = []
    logp_list: list[float] = []
    streams_rewards: list[list[float]] = []
    metrics: list[MetricsReport] = []
    n_tuples = 0
    episode = 0
    while n_tuples < n_steps:
        ep_seed = int(np.random.SeedSequence([seed, episode]).generate_state(1)[0])
        rng = np.random.default_rng([seed, 13, episode])
        world = World(cfg, seed=ep_seed)
        if episode == 0 and not any(
            a.controller_kind == "cav"
            for lane in world.schedule.per_approach for a in lane
        ):
            raise ValueError("scenario has no policy CAVs: nothing to train")
        while not world.done and world.in_warmup:
            world.step({})
        obs_map = world.observations()
        streams: dict[str, dict] = {}
        while not world.done:
            ids = sorted(obs_map)
            actions: dict[str, float] = {}
            if ids:
                X = np.stack([obs_map[i] for i in ids])
                mu, _ = policy.net.forward(X)
                noise = rng.standard_normal(len(ids)) if mode == "sample" else 0.0
                a = mu + sigma * noise if mode == "sample" else mu
                logp = gaussian_logprob(mu, policy.log_std, a)
                actions = dict(zip(ids, a.tolist()))
            new_obs, rewards, _ = world.step(actions)
            for k, vid in enumerate(ids):
                if vid not in rewards:
                    continue  # CAV exited during this step: stream already ended
                s = streams.setdefault(vid, {"obs": [], "act": [], "logp": [], "rew": []})
                s["obs"].append(obs_map[vid])
                s["act"].append(actions[vid])
                s["logp"].append(float(logp[k]))
                s["rew"].append(rewards[vid])
            obs_map = new_obs
        for vid in sorted(streams):
            s = streams[vid]
            obs_list.extend(s["obs"])
            act_list.extend(s["act"])
            logp_list.extend(s["logp"])
            streams_rewards.append(s["rew"])
            n_tuples += len(s["rew"])
        metrics.append(metrics_from_world(world))
        episode += 1
    rewards = np.concatenate([np.asarray(r) for r in streams_rewards])
    dones = np.zeros(len(rewards), dtype=bool)
    dones[np.cumsum([len(r) for r in streams_rewards]) - 1] = True
    return RolloutBatch(
        obs=np.stack(obs_list),
        actions=np.asarray(act_list),
        logprobs=np.asarray(logp_list),
        rewards=rewards,
        dones=dones,
        n_episodes=episode,
        episode_metrics=metrics,
    )


def discounted_returns(rewards: np.ndarray, dones: np.ndarray, gamma: float) -> np.ndarray:
    out = np.empty_like(rewards)
    g = 0.0
    for i in range(len(rewards) - 1, -1, -1):
        g = rewards[i] + (0.0 if dones[i] else gamma * g)
        out[i] = g
    return out


def estimate_advantages(batch: RolloutBatch, critic: Critic, gamma: float) -> RolloutBatch:
    """Discounted per-stream returns, baseline-subtracted, batch-normalized."""
    batch.returns = discounted_returns(batch.rewards, batch.dones, gamma)
    adv = batch.returns - critic.predict(batch.obs)
    std = adv.std()
    batch.advantages = (adv - adv.mean()) / std if std > 1e-12 else adv - adv.mean()
    return batch


def fit_critic(
    batch: RolloutBatch, critic: Critic, lr: float = 0.001, epochs: int = 100
) -> Critic:
    """Least-squares regression of returns on observations, a few GD epochs."""
    if epochs == 0:
        return critic
    if batch.returns is None:
        raise ValueError("estimate_advantages must run before fit_critic")
    targets = batch.returns
    critic.target_mean = float(targets.mean())
    critic.target_scale = float(targets.std())
    if critic.target_scale == 0.0:
        critic.last_losses = [0.0]
        return critic
    y = (targets - critic.target_mean) / critic.target_scale
    X = batch.obs
    n = len(y)
    losses = []
    for _ in range(epochs):
        pred, cache = critic.net.forward(X)
        err = pred - y
        losses.append(float(np.mean(err * err)))
        grads = critic.net.backward(cache, 2.0 * err / n)
        for a, g in zip(critic.net.arrays, grads):
            a -= lr * g
    critic.last_losses = losses
    return critic


def _conjugate_gradient(
    f_Ax: Callable[[np.ndarray], np.ndarray], b: np.ndarray, iters: int
) -> np.ndarray:
    x = np.zeros_like(b)
    r = b.copy()
    p = b.copy()
    rdr = float(r @ r)
    for _ in range(iters):
        Ap = f_Ax(p)
        pAp = float(p @ Ap)
        if pAp <= 0:
            break
        alpha = rdr / pAp
        x += alpha * p
        r -= alpha * Ap
        new = float(r @ r)
        if new < 1e-12:
            break
        p = r + (new / rdr) * p
        rdr = new
    return x


def _unflatten_like(net: Mlp, v: np.ndarray) -> list[np.ndarray]:
    out = []
    i = 0
    for a in net.arrays:
        out.append(v[i : i + a.size].reshape(a.shape))
        i += a.size
    return out


def policy_update(
    batch: RolloutBatch,
    policy: PolicyParams,
    kl_bound: float = 0.01,
    cg_iters: int = 10,
    damping: float = 0.1,
    backtrack_ratio: float = 0.8,
    max_backtracks: int = 10,
) -> tuple[PolicyParams, dict]:
    """One KL-constrained natural-gradient step; unchanged policy if none qualifies."""
    if len(batch) == 0:
        raise ValueError("empty rollout batch")
    if batch.advantages is None:
        raise ValueError("estimate_advantages must run before policy_update")
    X = batch.obs
    acts = batch.actions
    adv = batch.advantages
    old_logp = batch.logprobs
    n = len(adv)
    sigma_old = math.exp(policy.log_std)
    log_std_old = policy.log_std

    mu_old, cache = policy.net.forward(X)
    z = (acts - mu_old) / sigma_old
    dmu = adv * z / sigma_old / n
    grads = policy.net.backward(cache, dmu)
    g_log_std = float(np.mean(adv * (z * z - 1.0)))
    g = np.concatenate([gr.ravel() for gr in grads] + [[g_log_std]])
    if not np.all(np.isfinite(g)):
        return policy, {"accepted": False, "reason": "non-finite gradient"}
    if float(g @ g) == 0.0:
        return policy, {"accepted": False, "reason": "zero gradient"}

    inv_var = 1.0 / (sigma_old * sigma_old)

    def fvp(v: np.ndarray) -> np.ndarray:
        tangents = _unflatten_like(policy.net, v[:-1])
        jv = policy.net.jvp(X, tangents)
        back = policy.net.backward(cache, jv * inv_var / n)
        out = np.concatenate([b.ravel() for b in back] + [[2.0 * v[-1]]])
        return out + damping * v

    x = _conjugate_gradient(fvp, g, cg_iters)
    shs = 0.5 * float(x @ fvp(x))
    if shs <= 0 or not math.isfinite(shs):
        return policy, {"accepted": False, "reason": "non-positive step scale"}
    full_step = x * math.sqrt(kl_bound / shs)

    theta_old = policy.get_flat()

    def surrogate_and_kl(theta: np.ndarray) -> tuple[float, float]:
        policy.set_flat(theta)
        mu_new, _ = policy.net.forward(X)
        ls_new = policy.log_std
        sig_new = math.exp(ls_new)
        logp_new = gaussian_logprob(mu_new, ls_new, acts)
        surr = float(np.mean(np.exp(logp_new - old_logp) * adv))
        kl = float(np.mean(
            ls_new - log_std_old
            + (sigma_old ** 2 + (mu_old - mu_new) ** 2) / (2.0 * sig_new ** 2)
            - 0.5
        ))
        return surr, kl

    surr_before, _ = surrogate_and_kl(theta_old)
    for j in range(max_backtracks):
        step = full_step * backtrack_ratio ** j
        surr, kl = surrogate_and_kl(theta_old + step)
        if math.isfinite(surr) and math.isfinite(kl) and kl <= kl_bound and surr - surr_before >= 0:
            return policy, {"accepted": True, "kl": kl, "improvement": surr - surr_before,
                            "backtracks": j}
    policy.set_flat(theta_old)
    return policy, {"accepted": False, "reason": "line search exhausted"}


@dataclass
class TrainRecord:
    iteration: int
    mean_return: float
    mean_fuel_l: float
    mean_speed_mps: float
    kl: float
    accepted: bool
    eval_fuel_l: Optional[float] = None
    eval_speed_mps: Optional[float] = None


def train(config: TrainConfig) -> tuple[PolicyParams, list[TrainRecord]]:
    """Full training loop; returns the trained policy and its learning curve."""
    probe = World(config.scenario, seed=0)
    policy = init_policy(
        probe.obs_dim, config.hidden, seed=config.seed, init_log_std=config.init_log_std
    )
    critic = init_critic(probe.obs_dim, config.hidden, seed=config.seed + 1)
    curve: list[TrainRecord] = []
    for it in range(config.iterations):
        batch = collect_rollouts(
            policy, config.scenario, config.batch_steps,
            seed=int(np.random.SeedSequence([config.seed, 29, it]).generate_state(1)[0]),
        )
        estimate_advantages(batch, critic, config.gamma)
        fit_critic(batch, critic, config.critic_lr, config.critic_epochs)
        policy, info = policy_update(
            batch, policy, config.kl_bound, config.cg_iters, config.cg_damping,
            config.backtrack_ratio, config.max_backtracks,
        )
        if info["accepted"]:
            assert info["kl"] <= config.kl_bound + 1e-12
        record = TrainRecord(
            iteration=it,
            mean_return=batch.mean_stream_return,
            mean_fuel_l=float(np.mean([m.mean_fuel_l for m in batch.episode_metrics])),
            mean_speed_mps=float(np.mean([m.mean_speed_mps for m in batch.episode_metrics])),
            kl=info.get("kl", 0.0),
            accepted=info["accepted"],
        )
        if config.eval_every and (it + 1) % config.eval_every == 0:
            report = run_scenario(config.scenario, seed=config.seed, policy=policy)
            record.eval_fuel_l = report.mean_fuel_l
            record.eval_speed_mps = report.mean_speed_mps
        curve.append(record)
    return policy, curve
