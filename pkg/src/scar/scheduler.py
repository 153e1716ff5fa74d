"""OFDMA downlink cell with a generalized proportional-fair scheduler.

Per TTI every resource block goes to the active user maximizing
``rate ** beta / throughput ** alpha``; throughputs are tracked with an
exponential moving average and the resulting distribution is graded
against the NGMN normalized-throughput criterion.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple

import numpy as np

from .channel import ChannelConfig, ChannelModel
from .compress import (StateScales, build_state, classify_population,
                       extract_features, raw_features)
from .preprocess import histograms, top_m_reduce_batch

CQI_EFFICIENCY = np.array([
    0.1523, 0.2344, 0.3770, 0.6016, 0.8770, 1.1758, 1.4766, 1.9141,
    2.4063, 2.7305, 3.3223, 3.9023, 4.5234, 5.1152, 5.5547])
RES_PER_RB = 168
TTI_SECONDS = 1e-3
THROUGHPUT_FLOOR = 1e-6     # Mbps
REGIONS = ("UF", "FA", "OF")
TRACE_HEADER = ("tti", "alpha", "beta", "region", "jfi", "mean_thr", "std_thr",
                "cell_throughput")

BITS_PER_RB = np.rint(RES_PER_RB * CQI_EFFICIENCY).astype(np.int64)


def cqi_bits(cqi) -> np.ndarray:
    """Bits one RB carries in one TTI at the given CQI (1..15)."""
    cqi = np.asarray(cqi)
    if np.any((cqi < 1) | (cqi > CQI_EFFICIENCY.size)):
        raise ValueError("CQI must lie in [1, 15]")
    return BITS_PER_RB[cqi - 1]


def cqi_rate(cqi):
    """Rate in bit/s of one RB at the given CQI."""
    out = cqi_bits(cqi) / TTI_SECONDS
    return float(out) if np.ndim(out) == 0 else out


def clamp_param(x: float) -> float:
    return min(1.0, max(-1.0, float(x)))


def gpf_metric(rates, throughputs, alpha: float, beta: float) -> np.ndarray:
    """``(users, J)`` scheduling metric; throughputs are floored first."""
    gamma = np.maximum(np.asarray(throughputs, dtype=float), THROUGHPUT_FLOOR)
    return np.asarray(rates, dtype=float) ** beta / gamma[:, None] ** alpha


def gpf_allocate(rates, throughputs, alpha: float, beta: float) -> np.ndarray:
    """User index per RB (lowest index wins ties); empty when no users."""
    rates = np.asarray(rates, dtype=float)
    if rates.shape[0] == 0:
        return np.empty(0, dtype=np.int64)
    alloc = np.argmax(gpf_metric(rates, throughputs, alpha, beta), axis=0)
    assert alloc.shape == (rates.shape[1],)
    return alloc


def update_throughput(throughputs, rates, allocation, window: float) -> np.ndarray:
    """EWMA update in Mbps with rates in bit/s; unscheduled users decay."""
    if window < 1:
        raise ValueError("window must be >= 1")
    thr = np.asarray(throughputs, dtype=float)
    rates = np.asarray(rates, dtype=float)
    delivered = np.zeros(thr.shape[0])
    if len(allocation):
        np.add.at(delivered, allocation, rates[allocation, np.arange(len(allocation))])
    return (1.0 - 1.0 / window) * thr + (delivered / 1e6) / window


def jain_index(throughputs) -> float:
    thr = np.asarray(throughputs, dtype=float)
    total = thr.sum()
    if total <= 0:
        raise ValueError("Jain's index needs some positive throughput")
    return float(total * total / (thr.size * np.sum(thr * thr)))


@dataclass(frozen=True)
class NgmnConfig:
    confidence: float = 0.05
    grid_points: int = 100

    def __post_init__(self):
        if not 0 < self.confidence < 1:
            raise ValueError("confidence must lie in (0, 1)")
        if self.grid_points < 1:
            raise ValueError("grid_points must be >= 1")

    @property
    def grid(self) -> np.ndarray:
        return np.arange(1, self.grid_points + 1) / self.grid_points


class FairnessRegion(NamedTuple):
    region: str
    max_upper_violation: float
    max_lower_deficit: float


def throughput_cdf(throughputs, grid) -> np.ndarray:
    """Share of users whose normalized throughput lies strictly below each grid point."""
    thr = np.asarray(throughputs, dtype=float)
    x = np.sort(thr / thr.mean())
    return np.searchsorted(x, grid, side="left") / x.size


def fairness_region(throughputs, config: NgmnConfig | None = None) -> FairnessRegion:
    config = config or NgmnConfig()
    thr = np.asarray(throughputs, dtype=float)
    if thr.size < 2:
        raise ValueError("need at least two users")
    if thr.mean() <= 0:
        return FairnessRegion("UF", 1.0, 0.0)
    grid = config.grid
    cdf = throughput_cdf(thr, grid)
    upper = cdf - grid
    lower = np.maximum(grid - config.confidence, 0.0) - cdf
    max_upper = float(upper.max())
    max_lower = float(lower.max())
    if max_upper > 1e-9:
        region = "UF"
    elif np.all(lower[grid > config.confidence] > 0):
        region = "OF"
    else:
        region = "FA"
    return FairnessRegion(region, max_upper, max_lower)


# -- environment -------------------------------------------------------------

@dataclass(frozen=True)
class EnvConfig:
    num_rbs: int = 12
    cqi_levels: int = 15
    m: int = 3
    min_users: int = 5
    max_users: int = 20
    churn_prob: float = 0.01
    window: float = 100.0
    warmup_ttis: int = 100      # unreported PF steps after reset to fill the averages
    ngmn: NgmnConfig = field(default_factory=NgmnConfig)
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.min_users <= self.max_users:
            raise ValueError("need 1 <= min_users <= max_users")
        if self.min_users < 2:
            raise ValueError("fairness needs at least two active users")
        if self.warmup_ttis < 0:
            raise ValueError("warmup_ttis must be >= 0")

    def channel_config(self) -> ChannelConfig:
        return replace(self.channel, num_rbs=self.num_rbs, cqi_levels=self.cqi_levels,
                       num_users=self.max_users, seed=self.seed)

    @property
    def scales(self) -> StateScales:
        return StateScales(thr_max=self.num_rbs * BITS_PER_RB[-1] / 1e3,
                           max_users=self.max_users)


@dataclass
class StepInfo:
    tti: int
    alpha: float
    beta: float
    region: FairnessRegion
    jfi: float
    mean_thr: float
    std_thr: float
    cell_throughput: float


class SchedulerEnv:
    """Single cell advanced one TTI per :meth:`step`.

    ``model`` is the RBF classifier used for the compressed state; with
    ``state_mode="raw"`` the controller sees raw CQI statistics instead.
    """

    def __init__(self, config: EnvConfig, model=None, state_mode: str = "compressed"):
        if state_mode not in ("compressed", "raw"):
            raise ValueError("state_mode must be 'compressed' or 'raw'")
        if state_mode == "compressed" and model is None:
            raise ValueError("compressed state needs an RBF model")
        self.config = config
        self.model = model
        self.state_mode = state_mode
        self.scales = StateScales(k=model.k if model is not None else 64,
                                  thr_max=config.scales.thr_max,
                                  max_users=config.max_users)
        self.reset()

    def reset(self, seed: int | None = None):
        """Fresh cell (optionally reseeded), warmed up under PF."""
        if seed is not None:
            self.config = replace(self.config, seed=int(seed))
        cfg = self.config
        self.rng = np.random.default_rng([cfg.seed, 1])
        self.channel = ChannelModel(cfg.channel_config())
        n0 = int(self.rng.integers(cfg.min_users, cfg.max_users + 1))
        self.active = np.zeros(cfg.max_users, dtype=bool)
        self.active[self.rng.choice(cfg.max_users, n0, replace=False)] = True
        self.throughput = np.zeros(cfg.max_users)
        self.tti = 0
        self.clock = 0          # channel time, warm-up included
        self.alpha = 1.0
        self.beta = 1.0
        self._cqi = self.channel.cqi(0)
        for _ in range(cfg.warmup_ttis):
            self.step(1.0, 1.0)
        self.tti = 0
        return self.observe()

    @property
    def user_count(self) -> int:
        return int(self.active.sum())

    def observe(self):
        """Controller state for the current TTI's CQI reports."""
        idx = np.flatnonzero(self.active)
        hist = histograms(self._cqi[idx], self.config.cqi_levels)
        if self.state_mode == "raw":
            feats = raw_features(hist)
        else:
            y = top_m_reduce_batch(hist, self.config.m)
            feats = extract_features(classify_population(y, self.model, idx.size))
        return build_state(self.alpha, self.beta, self.throughput[idx], feats, idx.size,
                           raw=self.state_mode == "raw")

    def _churn(self):
        cfg = self.config
        if self.rng.random() >= cfg.churn_prob:
            return
        n = self.user_count
        arrive = self.rng.random() < 0.5
        if n >= cfg.max_users:
            arrive = False
        elif n <= cfg.min_users:
            arrive = True
        if arrive:
            slot = int(self.rng.choice(np.flatnonzero(~self.active)))
            # a newcomer starts at the current mean so it neither hogs nor starves
            self.throughput[slot] = self.throughput[self.active].mean()
            self.active[slot] = True
        else:
            slot = int(self.rng.choice(np.flatnonzero(self.active)))
            self.active[slot] = False
            self.throughput[slot] = 0.0

    def step(self, alpha: float, beta: float = 1.0) -> StepInfo:
        """Schedule one TTI with the given parameters and advance the cell."""
        alpha, beta = clamp_param(alpha), clamp_param(beta)
        assert -1.0 <= alpha <= 1.0 and -1.0 <= beta <= 1.0
        self.alpha, self.beta = alpha, beta
        idx = np.flatnonzero(self.active)
        rates = cqi_rate(self._cqi[idx])
        alloc = gpf_allocate(rates, self.throughput[idx], alpha, beta)
        self.throughput[idx] = update_throughput(self.throughput[idx], rates, alloc,
                                                 self.config.window)
        cell = float(rates[alloc, np.arange(alloc.size)].sum()) / 1e6
        thr = self.throughput[idx]
        region = fairness_region(thr, self.config.ngmn)
        info = StepInfo(self.tti, alpha, beta, region,
                        jain_index(thr) if thr.sum() > 0 else 0.0,
                        float(thr.mean()), float(thr.std()), cell)
        self.tti += 1
        self.clock += 1
        self._churn()
        self._cqi = self.channel.cqi(self.clock)
        return info


def region_shares(regions) -> dict:
    """Percentages of TTIs per region, keyed UF/FA/OF."""
    regions = list(regions)
    n = max(len(regions), 1)
    return {r: 100.0 * sum(1 for x in regions if x == r) / n for r in REGIONS}


def run_policy(env: SchedulerEnv, policy: Callable, ttis: int, reset: bool = True) -> list:
    """Drive the environment with ``policy(state, info_prev) -> (alpha, beta)``."""
    state = env.reset() if reset else env.observe()
    infos = []
    info = None
    for _ in range(ttis):
        alpha, beta = policy(state, info)
        info = env.step(alpha, beta)
        infos.append(info)
        state = env.observe()
    return infos


class MtController:
    """Throughput-leaning baseline nudging alpha toward a Jain's-index target."""

    def __init__(self, kappa: float = 0.05, target: float = 0.9, alpha0: float = 0.0):
        self.kappa = kappa
        self.target = target
        self.alpha = alpha0

    def __call__(self, state, info):
        if info is not None:
            self.alpha = clamp_param(self.alpha + self.kappa * (self.target - info.jfi))
        return self.alpha, 1.0


def run_baseline(env: SchedulerEnv, mode: str, ttis: int):
    """Region percentages for the PF (alpha = beta = 1) or MT baseline."""
    if mode == "PF":
        policy = lambda state, info: (1.0, 1.0)
    elif mode == "MT":
        policy = MtController()
    else:
        raise ValueError(f"unknown baseline {mode!r}")
    infos = run_policy(env, policy, ttis)
    return region_shares(i.region.region for i in infos), infos


def trace_csv(infos) -> str:
    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    out.writerow(TRACE_HEADER)
    for i in infos:
        out.writerow([i.tti, repr(i.alpha), repr(i.beta), i.region.region, repr(i.jfi),
                      repr(i.mean_thr), repr(i.std_thr), repr(i.cell_throughput)])
    return buf.getvalue()


def mean_cell_throughput(infos) -> float:
    return float(np.mean([i.cell_throughput for i in infos])) if infos else math.nan
