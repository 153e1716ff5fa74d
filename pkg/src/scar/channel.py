"""Synthetic downlink CQI source and the saturation-driven dataset collector.

Single-cell stand-in for a system-level simulator: macro-cell path loss,
log-normal shadowing, penetration loss and per-RB Jakes fading from a
sum-of-sinusoids model whose paths also carry a delay, so neighbouring
resource blocks fade coherently.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .preprocess import preprocess_reports

SPEED_OF_LIGHT = 299_792_458.0

CQI_THRESHOLDS_DB = np.array(
    [-6.5, -4.6, -2.7, -0.8, 1.1, 3.0, 4.9, 6.8, 8.7, 10.6, 12.5, 14.4, 16.3, 18.2, 20.1])

DATASET_MAGIC = "# scar-dataset v1"


@dataclass(frozen=True)
class ChannelConfig:
    num_rbs: int = 12
    cqi_levels: int = 15
    num_users: int = 10
    speed_kmh: float = 120.0
    carrier_hz: float = 2.0e9
    num_paths: int = 12
    shadowing_sigma_db: float = 8.0
    seed: int = 0
    tx_power_dbm: float = 23.0          # per RB: 43 dBm over 100 RBs
    noise_density_dbm_hz: float = -174.0
    noise_figure_db: float = 2.5
    penetration_loss_db: float = 10.0
    rb_bandwidth_hz: float = 180e3
    min_distance_m: float = 50.0
    cell_radius_m: float = 1000.0
    delay_spread_s: float = 0.1e-6
    tti_s: float = 1e-3
    mobility: bool = True

    def __post_init__(self):
        if self.num_rbs < 1:
            raise ValueError("num_rbs must be >= 1")
        if self.cqi_levels < 2:
            raise ValueError("cqi_levels must be >= 2")
        if self.num_paths < 1:
            raise ValueError("num_paths must be >= 1")
        if self.num_users < 1:
            raise ValueError("num_users must be >= 1")
        if self.min_distance_m > self.cell_radius_m:
            raise ValueError("min_distance_m exceeds cell_radius_m")

    @property
    def doppler_hz(self) -> float:
        return self.speed_kmh / 3.6 * self.carrier_hz / SPEED_OF_LIGHT


@dataclass
class CqiReport:
    user_id: int
    tti: int
    values: np.ndarray


def cqi_thresholds(n_levels: int = 15) -> np.ndarray:
    if n_levels == 15:
        return CQI_THRESHOLDS_DB
    return np.linspace(CQI_THRESHOLDS_DB[0], CQI_THRESHOLDS_DB[-1], n_levels)


def sinr_to_cqi(sinr_db, n_levels: int = 15):
    """Number of thresholds not above the SINR, floored at 1."""
    thresholds = cqi_thresholds(n_levels)
    cqi = np.searchsorted(thresholds, np.asarray(sinr_db, dtype=float), side="right")
    cqi = np.maximum(cqi, 1)
    return int(cqi) if np.ndim(cqi) == 0 else cqi


def macro_pathloss_db(distance_m):
    """Urban macro-cell path loss, 128.1 + 37.6 log10(d / km)."""
    return 128.1 + 37.6 * np.log10(np.asarray(distance_m) / 1000.0)


class ChannelModel:
    """Per-user, per-RB SINR and CQI for one cell, deterministic per (seed, tti)."""

    def __init__(self, config: ChannelConfig):
        self.config = config
        self._init_state()

    def _init_state(self):
        cfg = self.config
        rng = np.random.default_rng(cfg.seed)
        u, p = cfg.num_users, cfg.num_paths
        # uniform over the annulus area
        r2 = rng.uniform(cfg.min_distance_m ** 2, cfg.cell_radius_m ** 2, size=u)
        angle = rng.uniform(0.0, 2 * math.pi, size=u)
        self._pos0 = np.sqrt(r2)[:, None] * np.stack([np.cos(angle), np.sin(angle)], axis=1)
        self._heading0 = rng.uniform(0.0, 2 * math.pi, size=u)
        self.shadowing_db = rng.normal(0.0, cfg.shadowing_sigma_db, size=u)
        self._aoa = rng.uniform(0.0, 2 * math.pi, size=(u, p))
        self._phase = rng.uniform(0.0, 2 * math.pi, size=(u, p))
        self._delay = rng.exponential(cfg.delay_spread_s, size=(u, p)) if p > 1 else np.zeros((u, p))
        rb_freq = np.arange(cfg.num_rbs) * cfg.rb_bandwidth_hz
        # (u, p, J) phase offset of each path on each RB
        self._rb_phase = self._phase[:, :, None] - 2 * math.pi * self._delay[:, :, None] * rb_freq
        self._omega = 2 * math.pi * cfg.doppler_hz * np.cos(self._aoa)      # (u, p)
        self._pos = self._pos0.copy()
        self._heading = self._heading0.copy()
        self._tti = 0
        noise = (cfg.noise_density_dbm_hz + 10 * math.log10(cfg.rb_bandwidth_hz)
                 + cfg.noise_figure_db)
        self._noise_dbm = noise

    def _advance_to(self, tti: int):
        if tti < self._tti:
            self._init_state()
        cfg = self.config
        step = cfg.speed_kmh / 3.6 * cfg.tti_s
        if not cfg.mobility or step == 0.0:
            self._tti = tti
            return
        while self._tti < tti:
            move = step * np.stack([np.cos(self._heading), np.sin(self._heading)], axis=1)
            new = self._pos + move
            r = np.hypot(new[:, 0], new[:, 1])
            bounce = (r > cfg.cell_radius_m) | (r < cfg.min_distance_m)
            # bounce: turn around instead of leaving the annulus
            self._heading = np.where(bounce, self._heading + math.pi, self._heading)
            self._pos = np.where(bounce[:, None], self._pos, new)
            self._tti += 1

    def distances(self, tti: int) -> np.ndarray:
        self._advance_to(tti)
        return np.hypot(self._pos[:, 0], self._pos[:, 1])

    def fading_gain(self, tti: int) -> np.ndarray:
        """Linear power gain ``(users, J)`` with unit mean."""
        t = tti * self.config.tti_s
        arg = self._omega[:, :, None] * t + self._rb_phase
        re = np.cos(arg).sum(axis=1)
        im = np.sin(arg).sum(axis=1)
        return (re * re + im * im) / self.config.num_paths

    def sinr_db(self, tti: int) -> np.ndarray:
        cfg = self.config
        d = self.distances(tti)
        large_scale = (cfg.tx_power_dbm - macro_pathloss_db(d) - cfg.penetration_loss_db
                       - self.shadowing_db - self._noise_dbm)
        gain = np.maximum(self.fading_gain(tti), 1e-12)
        return large_scale[:, None] + 10 * np.log10(gain)

    def cqi(self, tti: int) -> np.ndarray:
        return sinr_to_cqi(self.sinr_db(tti), self.config.cqi_levels).astype(np.int64)


def generate_tti(config: ChannelConfig, tti: int, fading_state: ChannelModel | None = None):
    """One CQI report per user for the given TTI."""
    model = fading_state if fading_state is not None else ChannelModel(config)
    cqi = model.cqi(tti)
    return [CqiReport(user_id=i, tti=tti, values=cqi[i]) for i in range(cqi.shape[0])]


def update_saturation(u: float, reports_this_tti: int, new_uniques: int,
                      beta: float = 0.005) -> float:
    """EWMA of the share of this TTI's reports that were already known."""
    if reports_this_tti < 1:
        raise ValueError("need at least one report")
    if not 0 <= new_uniques <= reports_this_tti:
        raise ValueError("new_uniques must lie in [0, reports_this_tti]")
    redundancy = (reports_this_tti - new_uniques) / reports_this_tti
    out = (1.0 - beta) * u + beta * redundancy
    assert 0.0 <= out <= 1.0 + 1e-12, out
    return out


class CollectionError(RuntimeError):
    pass


@dataclass
class CollectorState:
    m_values: tuple
    n_levels: int = 15
    beta: float = 0.005
    saturation: dict = field(default_factory=dict)
    seen: dict = field(default_factory=dict)
    vectors: dict = field(default_factory=dict)
    ttis: int = 0

    def __post_init__(self):
        for m in self.m_values:
            if not 1 <= m <= self.n_levels:
                raise ValueError(f"M={m} outside [1, {self.n_levels}]")
            self.saturation.setdefault(m, 0.0)
            self.seen.setdefault(m, set())
            self.vectors.setdefault(m, [])

    @property
    def sizes(self) -> dict:
        return {m: len(v) for m, v in self.vectors.items()}

    def saturated(self, m: int, threshold: float) -> bool:
        return self.saturation[m] > threshold

    def add_tti(self, reports, threshold: float = 0.99) -> None:
        """Fold one TTI of CQI reports ``(users, J)`` into every open M."""
        reports = np.asarray(reports)
        n_reports = reports.shape[0]
        self.ttis += 1
        if n_reports == 0:
            return
        for m in self.m_values:
            if self.saturated(m, threshold):
                continue
            y = preprocess_reports(reports, m, self.n_levels)
            seen = self.seen[m]
            new = 0
            for row in y:
                key = np.round(row, 12).tobytes()
                if key not in seen:
                    seen.add(key)
                    self.vectors[m].append(row)
                    new += 1
            self.saturation[m] = update_saturation(
                self.saturation[m], n_reports, new, self.beta)


def _channel_source(config: ChannelConfig) -> Iterator[np.ndarray]:
    model = ChannelModel(config)
    tti = 0
    while True:
        yield model.cqi(tti)
        tti += 1


def collect_dataset(source, m_values: Iterable[int], threshold: float = 0.99, *,
                    n_levels: int | None = None, beta: float = 0.005,
                    max_ttis: int = 200_000) -> dict:
    """Collect distinct top-M vectors for each M until redundancy saturates.

    ``source`` is a :class:`ChannelConfig` or any iterable yielding one
    ``(users, J)`` CQI matrix per TTI. Returns ``{M: array (U_M, N)}`` with
    rows in order of first appearance.
    """
    if isinstance(source, ChannelConfig):
        n_levels = source.cqi_levels if n_levels is None else n_levels
        source = _channel_source(source)
    n_levels = 15 if n_levels is None else n_levels
    state = CollectorState(tuple(sorted(set(m_values))), n_levels, beta)
    for tti, reports in enumerate(source):
        if tti >= max_ttis:
            break
        state.add_tti(reports, threshold)
        if all(state.saturated(m, threshold) for m in state.m_values):
            return {m: np.array(state.vectors[m]).reshape(-1, n_levels)
                    for m in state.m_values}
    raise CollectionError(
        f"saturation {state.saturation} did not exceed {threshold} "
        f"within {state.ttis} TTIs")


def write_dataset(path, vectors, m: int) -> None:
    vectors = np.asarray(vectors, dtype=float)
    n = vectors.shape[1]
    lines = [f"{DATASET_MAGIC} N={n} M={m}"]
    lines += [" ".join([str(m)] + [repr(float(x)) for x in row]) for row in vectors]
    Path(path).write_text("\n".join(lines) + "\n")


def read_dataset(path):
    """Returns ``(m, vectors)`` from a dataset file."""
    text = Path(path).read_text().splitlines()
    if not text or not text[0].startswith(DATASET_MAGIC):
        raise ValueError(f"{path}: not a scar dataset file")
    fields = dict(tok.split("=") for tok in text[0][len(DATASET_MAGIC):].split())
    n, m = int(fields["N"]), int(fields["M"])
    rows = []
    for line in text[1:]:
        if not line.strip():
            continue
        parts = line.split()
        if int(parts[0]) != m or len(parts) != n + 1:
            raise ValueError(f"{path}: malformed record {line!r}")
        rows.append([float(x) for x in parts[1:]])
    return m, np.array(rows, dtype=float).reshape(-1, n)


def with_seed(config: ChannelConfig, seed: int) -> ChannelConfig:
    return replace(config, seed=seed)


def vector_stream(config: ChannelConfig, m: int) -> Iterator[np.ndarray]:
    """Endless per-user top-M vectors, TTI after TTI, duplicates included."""
    for reports in _channel_source(config):
        yield from preprocess_reports(reports, m, config.cqi_levels)
