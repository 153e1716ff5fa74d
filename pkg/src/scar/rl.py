"""Reinforcement-learning controllers for the scheduler's fairness parameters.

Value-based agents (Q, DoubleQ, SARSA) pick alpha from a fixed grid with
beta held at 1. CACLA1 outputs a continuous alpha, CACLA2 a continuous
(alpha, beta) pair. All approximators are one-hidden-layer tanh networks.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .scheduler import (REGIONS, FairnessRegion, SchedulerEnv, mean_cell_throughput,
                        region_shares)

ALGORITHMS = ("Q", "DoubleQ", "SARSA", "CACLA1", "CACLA2")
DISCRETE = ("Q", "DoubleQ", "SARSA")
EVAL_HEADER = ("algorithm", "M", "K", "seed", "p_uf", "p_fa", "p_of", "mean_cell_throughput")
POLICY_VERSION = 1


def reward(region: FairnessRegion) -> float:
    if region.region == "FA":
        return 1.0
    if region.region == "UF":
        return -min(1.0, 10.0 * region.max_upper_violation)
    return -0.5 * min(1.0, 10.0 * region.max_lower_deficit)


class Mlp:
    """``sizes[0] -> tanh(sizes[1]) -> linear(sizes[2])``."""

    def __init__(self, sizes=(9, 60, 1), rng: np.random.Generator | None = None,
                 params=None):
        self.sizes = tuple(int(s) for s in sizes)
        n_in, n_hid, n_out = self.sizes
        if params is None:
            rng = rng if rng is not None else np.random.default_rng(0)
            b1, b2 = 1.0 / np.sqrt(n_in), 1.0 / np.sqrt(n_hid)
            params = [rng.uniform(-b1, b1, (n_in, n_hid)), np.zeros(n_hid),
                      rng.uniform(-b2, b2, (n_hid, n_out)), np.zeros(n_out)]
        self.params = [np.array(p, dtype=float) for p in params]

    def forward(self, x):
        w1, b1, w2, b2 = self.params
        h = np.tanh(np.asarray(x, dtype=float) @ w1 + b1)
        return h, h @ w2 + b2

    def __call__(self, x) -> np.ndarray:
        return self.forward(x)[1]

    def gradients(self, x, d_out) -> list:
        """Parameter gradients for one input given ``dL/d(output)``."""
        x = np.asarray(x, dtype=float)
        d_out = np.asarray(d_out, dtype=float)
        h, _ = self.forward(x)
        w2 = self.params[2]
        d_h = (w2 @ d_out) * (1.0 - h * h)
        return [np.outer(x, d_h), d_h, np.outer(h, d_out), d_out.copy()]

    def descend(self, x, d_out, lr: float) -> None:
        for p, g in zip(self.params, self.gradients(x, d_out)):
            p -= lr * g

    def copy(self) -> "Mlp":
        return Mlp(self.sizes, params=[p.copy() for p in self.params])

    def to_dict(self) -> dict:
        return {"sizes": list(self.sizes), "params": [p.tolist() for p in self.params]}

    @classmethod
    def from_dict(cls, doc) -> "Mlp":
        return cls(doc["sizes"], params=[np.array(p) for p in doc["params"]])


@dataclass(frozen=True)
class RlConfig:
    algorithm: str = "CACLA2"
    discount: float = 0.9
    critic_lr: float = 0.01
    actor_lr: float = 0.01
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    sigma_start: float = 0.3
    sigma_end: float = 0.02
    grid_size: int = 21
    hidden: int = 60
    training_ttis: int = 50_000
    episode_ttis: int = 5_000   # training restarts on a fresh cell seed this often
    eval_ttis: int = 5_000
    eval_runs: int = 5

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if not 0 <= self.discount < 1:
            raise ValueError("discount must lie in [0, 1)")
        if self.critic_lr <= 0 or self.actor_lr <= 0:
            raise ValueError("learning rates must be positive")
        if self.grid_size < 2:
            raise ValueError("grid_size must be >= 2")
        if self.episode_ttis < 1:
            raise ValueError("episode_ttis must be >= 1")

    @property
    def action_grid(self) -> np.ndarray:
        return np.linspace(-1.0, 1.0, self.grid_size)

    @property
    def action_dim(self) -> int:
        return 2 if self.algorithm == "CACLA2" else 1

    def exploration(self, progress: float) -> float:
        """Linearly decayed epsilon (discrete) or Gaussian std (continuous)."""
        p = min(max(progress, 0.0), 1.0)
        if self.algorithm in DISCRETE:
            return self.epsilon_start + (self.epsilon_end - self.epsilon_start) * p
        return self.sigma_start + (self.sigma_end - self.sigma_start) * p


def td_target(r: float, next_value: float, discount: float) -> float:
    return r + discount * next_value


def q_update(net: Mlp, s, a: int, r: float, s_next, discount: float, lr: float,
             next_value: float | None = None) -> float:
    """One squared-TD-loss step on head ``a``; default target uses the max."""
    if next_value is None:
        next_value = float(np.max(net(s_next)))
    target = td_target(r, next_value, discount)
    q = net(s)
    d_out = np.zeros_like(q)
    d_out[a] = q[a] - target
    net.descend(s, d_out, lr)
    return target - q[a]


def sarsa_update(net: Mlp, s, a: int, r: float, s_next, a_next: int, discount: float,
                 lr: float) -> float:
    return q_update(net, s, a, r, s_next, discount, lr, float(net(s_next)[a_next]))


def double_q_update(nets, s, a: int, r: float, s_next, discount: float, lr: float,
                    which: int) -> float:
    """Update ``nets[which]`` with the action chosen by it and valued by the twin."""
    own, twin = nets[which], nets[1 - which]
    a_star = int(np.argmax(own(s_next)))
    return q_update(own, s, a, r, s_next, discount, lr, float(twin(s_next)[a_star]))


def cacla_update(actor: Mlp, critic: Mlp, s, a_taken, r: float, s_next, discount: float,
                 critic_lr: float, actor_lr: float) -> float:
    """Critic always moves to the TD target; actor moves to the taken action if it helped."""
    v = float(critic(s)[0])
    delta = td_target(r, float(critic(s_next)[0]), discount) - v
    critic.descend(s, np.array([-delta]), critic_lr)
    if delta > 0:
        out = actor(s)
        actor.descend(s, out - np.asarray(a_taken, dtype=float), actor_lr)
    return delta


class Action(NamedTuple):
    alpha: float
    beta: float
    raw: object     # grid index or continuous vector


class Controller:
    """Trainable policy for one algorithm."""

    def __init__(self, config: RlConfig, rng: np.random.Generator | None = None,
                 state_dim: int = 9, nets: dict | None = None):
        self.config = config
        rng = rng if rng is not None else np.random.default_rng(0)
        h = config.hidden
        if nets is not None:
            self.nets = nets
        elif config.algorithm in DISCRETE:
            self.nets = {"q": Mlp((state_dim, h, config.grid_size), rng)}
            if config.algorithm == "DoubleQ":
                self.nets["q2"] = Mlp((state_dim, h, config.grid_size), rng)
        else:
            self.nets = {"actor": Mlp((state_dim, h, config.action_dim), rng),
                         "critic": Mlp((state_dim, h, 1), rng)}
            # start near the proportional-fair setting
            self.nets["actor"].params[3][:] = 1.0

    @property
    def discrete(self) -> bool:
        return self.config.algorithm in DISCRETE

    def q_values(self, s) -> np.ndarray:
        q = self.nets["q"](s)
        if "q2" in self.nets:
            q = q + self.nets["q2"](s)
        return q

    def act(self, s, explore: bool = False, rng: np.random.Generator | None = None,
            progress: float = 1.0) -> Action:
        cfg = self.config
        if self.discrete:
            if explore and rng.random() < cfg.exploration(progress):
                idx = int(rng.integers(cfg.grid_size))
            else:
                idx = int(np.argmax(self.q_values(s)))
            alpha = float(cfg.action_grid[idx])
            return Action(alpha, 1.0, idx)
        out = self.nets["actor"](s)
        if explore:
            out = out + rng.normal(0.0, cfg.exploration(progress), size=out.shape)
        out = np.clip(out, -1.0, 1.0)
        beta = float(out[1]) if out.size > 1 else 1.0
        assert np.all(np.abs(out) <= 1.0)
        return Action(float(out[0]), beta, out)

    def update(self, s, action: Action, r: float, s_next, next_action: Action,
               rng: np.random.Generator) -> float:
        cfg = self.config
        alg = cfg.algorithm
        if alg == "Q":
            return q_update(self.nets["q"], s, action.raw, r, s_next, cfg.discount, cfg.critic_lr)
        if alg == "SARSA":
            return sarsa_update(self.nets["q"], s, action.raw, r, s_next, next_action.raw,
                                cfg.discount, cfg.critic_lr)
        if alg == "DoubleQ":
            which = int(rng.integers(2))
            return double_q_update((self.nets["q"], self.nets["q2"]), s, action.raw, r,
                                   s_next, cfg.discount, cfg.critic_lr, which)
        return cacla_update(self.nets["actor"], self.nets["critic"], s, action.raw, r,
                            s_next, cfg.discount, cfg.critic_lr, cfg.actor_lr)

    def to_dict(self) -> dict:
        return {"version": POLICY_VERSION, "config": asdict(self.config),
                "nets": {k: v.to_dict() for k, v in self.nets.items()}}

    @classmethod
    def from_dict(cls, doc) -> "Controller":
        if doc.get("version") != POLICY_VERSION:
            raise ValueError(f"unsupported policy version {doc.get('version')!r}")
        config = RlConfig(**doc["config"])
        nets = {k: Mlp.from_dict(v) for k, v in doc["nets"].items()}
        return cls(config, nets=nets)


def save_policy(path, controller: Controller, **meta) -> None:
    """JSON policy file; ``meta`` keys are stored alongside and ignored on load."""
    doc = controller.to_dict()
    doc.update(meta)
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_policy(path) -> Controller:
    return Controller.from_dict(json.loads(Path(path).read_text()))


class FixedPolicy:
    """Constant parameters; learns nothing."""

    def __init__(self, alpha: float = 1.0, beta: float = 1.0):
        self.alpha, self.beta = alpha, beta

    def act(self, s, explore=False, rng=None, progress=1.0) -> Action:
        return Action(self.alpha, self.beta, None)

    def update(self, *args, **kwargs) -> float:
        return 0.0


@dataclass
class EpisodeLog:
    states: np.ndarray
    alphas: np.ndarray
    betas: np.ndarray
    rewards: np.ndarray
    regions: list
    cell_throughput: np.ndarray

    @property
    def shares(self) -> dict:
        return region_shares(self.regions)

    @property
    def p_uf(self) -> float:
        return self.shares["UF"]

    @property
    def p_fa(self) -> float:
        return self.shares["FA"]

    @property
    def p_of(self) -> float:
        return self.shares["OF"]


def run_episode(env: SchedulerEnv, policy, ttis: int, *, learn: bool, explore: bool,
                rng: np.random.Generator, progress_start: int = 0,
                progress_total: int | None = None) -> EpisodeLog:
    """Observe, act, schedule, reward; optionally learning online.

    Exploration decays with ``(progress_start + t) / progress_total`` so a
    schedule can span several episodes.
    """
    total = progress_total or ttis
    state = env.reset()
    s = state.vector(env.scales)
    action = policy.act(s, explore, rng, progress_start / total)
    states = np.empty((ttis, s.size))
    alphas, betas, rewards, cells = (np.empty(ttis) for _ in range(4))
    regions = []
    for t in range(ttis):
        info = env.step(action.alpha, action.beta)
        r = reward(info.region)
        s_next = env.observe().vector(env.scales)
        next_action = policy.act(s_next, explore, rng, (progress_start + t + 1) / total)
        if learn:
            policy.update(s, action, r, s_next, next_action, rng)
        states[t], alphas[t], betas[t], rewards[t] = s, info.alpha, info.beta, r
        cells[t] = info.cell_throughput
        regions.append(info.region.region)
        s, action = s_next, next_action
    return EpisodeLog(states, alphas, betas, rewards, regions, cells)


def concat_logs(logs) -> EpisodeLog:
    return EpisodeLog(np.concatenate([l.states for l in logs]),
                      np.concatenate([l.alphas for l in logs]),
                      np.concatenate([l.betas for l in logs]),
                      np.concatenate([l.rewards for l in logs]),
                      [r for l in logs for r in l.regions],
                      np.concatenate([l.cell_throughput for l in logs]))


def train_controller(env: SchedulerEnv, config: RlConfig, seed: int = 0, policy=None):
    """Online training for ``config.training_ttis``; returns (policy, log).

    Training runs in episodes of ``config.episode_ttis``; episode ``e``
    resets the cell with seed ``base + e`` where ``base`` is the seed the
    environment was configured with.
    """
    rng = np.random.default_rng([seed, 2])
    if policy is None:
        policy = Controller(config, np.random.default_rng([seed, 3]))
    base = env.config.seed
    logs = []
    done = 0
    episode = 0
    while done < config.training_ttis:
        n = min(config.episode_ttis, config.training_ttis - done)
        env.reset(base + episode)
        logs.append(run_episode(env, policy, n, learn=True, explore=True, rng=rng,
                                progress_start=done, progress_total=config.training_ttis))
        done += n
        episode += 1
    env.reset(base)
    return policy, concat_logs(logs)


class EvalResult(NamedTuple):
    p_uf: float
    p_fa: float
    p_of: float
    mean_cell_throughput: float
    runs: list


def evaluate_controller(policy, env_factory, runs: int, ttis: int) -> EvalResult:
    """Greedy runs on fresh environments ``env_factory(run_index)``; mean shares."""
    logs = []
    for i in range(runs):
        env = env_factory(i)
        logs.append(run_episode(env, policy, ttis, learn=False, explore=False,
                                rng=np.random.default_rng(0)))
    shares = [log.shares for log in logs]
    mean = {r: float(np.mean([s[r] for s in shares])) for r in REGIONS}
    cell = float(np.mean([mean_cell_throughput_of(log) for log in logs]))
    return EvalResult(mean["UF"], mean["FA"], mean["OF"], cell, logs)


def mean_cell_throughput_of(log: EpisodeLog) -> float:
    return float(log.cell_throughput.mean())


def eval_csv(rows) -> str:
    """Rows of ``(algorithm, M, K, seed, EvalResult)``."""
    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    out.writerow(EVAL_HEADER)
    for alg, m, k, seed, res in rows:
        out.writerow([alg, m, k, seed, f"{res.p_uf:.4f}", f"{res.p_fa:.4f}",
                      f"{res.p_of:.4f}", repr(res.mean_cell_throughput)])
    return buf.getvalue()


__all__ = ["ALGORITHMS", "Mlp", "RlConfig", "Controller", "FixedPolicy", "reward",
           "q_update", "sarsa_update", "double_q_update", "cacla_update",
           "train_controller", "evaluate_controller", "run_episode", "save_policy",
           "load_policy", "eval_csv", "EpisodeLog", "EvalResult", "mean_cell_throughput"]
