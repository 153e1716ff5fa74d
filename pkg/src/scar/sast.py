"""Simulated annealing with stochastic tunneling (SAST).

The primitives here are stateless; :class:`Annealer` bundles them with the
bookkeeping (best energy, warm-up temperature sampling, cooling) that the
clustering and RBFN trainers both need.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

TEMPERATURE_FLOOR = 1e-6


@dataclass(frozen=True)
class TunnelingParams:
    omega: float

    def __post_init__(self):
        if not self.omega > 0:
            raise ValueError(f"omega must be positive, got {self.omega}")


@dataclass(frozen=True)
class AnnealingSchedule:
    temperature: float = 1.0
    cooling_rate: float = 0.95
    initial_acceptance: float = 0.5
    sample_length: int = 10

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        if not 0.0 <= self.cooling_rate <= 1.0:
            raise ValueError(f"cooling_rate must lie in [0, 1], got {self.cooling_rate}")
        if not 0.0 < self.initial_acceptance < 1.0:
            raise ValueError(
                f"initial_acceptance must lie in (0, 1), got {self.initial_acceptance}")
        if self.sample_length < 1:
            raise ValueError("sample_length must be >= 1")


def tunneling_energy(energy: float, best: float, omega: float) -> float:
    """Map a raw energy into [0, 1) relative to the best energy seen so far.

    ``1 - exp(-(energy - best) / omega)``; the caller must have folded
    ``energy`` into ``best`` beforehand, so ``energy >= best``.
    """
    if isinstance(omega, TunnelingParams):
        omega = omega.omega
    if omega <= 0:
        raise ValueError("omega must be positive")
    gap = energy - best
    if gap < 0:
        raise ValueError(f"energy {energy!r} is below best {best!r}; update best first")
    return -math.expm1(-gap / omega)


def acceptance_probability(f_a: float, f_b: float, temperature: float) -> float:
    """Metropolis probability of moving from state B to candidate A."""
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    diff = f_a - f_b
    if diff <= 0:
        return 1.0
    return math.exp(-diff / temperature)


def initial_temperature(deltas, initial_acceptance: float,
                        floor: float = TEMPERATURE_FLOOR) -> float:
    """Starting temperature from warm-up energy differences.

    Uses the mean absolute difference so that the result is positive whatever
    the sign of the sampled differences; returns ``floor`` when they are all 0.
    """
    if not 0.0 < initial_acceptance < 1.0:
        raise ValueError("initial_acceptance must lie in (0, 1)")
    deltas = np.abs(np.asarray(deltas, dtype=float))
    if deltas.size == 0:
        raise ValueError("need at least one sampled delta")
    t0 = -float(deltas.mean()) / math.log(initial_acceptance)
    return max(t0, floor)


def cool(schedule: AnnealingSchedule) -> AnnealingSchedule:
    return replace(schedule, temperature=schedule.temperature * schedule.cooling_rate)


def metropolis_step(f_a: float, f_b: float, schedule: AnnealingSchedule,
                    uniform_draw: float) -> bool:
    return acceptance_probability(f_a, f_b, schedule.temperature) > uniform_draw


@dataclass
class Annealer:
    """Acceptance decisions for one annealed quantity.

    Until ``sample_length`` energy differences have been observed the
    temperature is unknown, and worse moves are accepted with the initial
    acceptance probability. After that the temperature follows the usual
    geometric schedule. ``tunneling=None`` gives plain simulated annealing on
    the raw energies.
    """

    schedule: AnnealingSchedule
    tunneling: TunnelingParams | None
    rng: np.random.Generator
    best: float = math.inf
    deltas: list = field(default_factory=list)
    calibrated: bool = False

    @property
    def temperature(self) -> float:
        return self.schedule.temperature

    def observe(self, energy: float) -> None:
        if energy < self.best:
            self.best = energy

    def transform(self, energy: float) -> float:
        if self.tunneling is None:
            return energy
        return tunneling_energy(energy, self.best, self.tunneling.omega)

    def probability(self, f_a: float, f_b: float) -> float:
        """Acceptance probability of raw energy ``f_a`` against ``f_b``."""
        self.observe(f_a)
        self.observe(f_b)
        t_a, t_b = self.transform(f_a), self.transform(f_b)
        if not self.calibrated:
            self.deltas.append(t_a - t_b)
            if len(self.deltas) >= self.schedule.sample_length:
                t0 = initial_temperature(self.deltas, self.schedule.initial_acceptance)
                self.schedule = replace(self.schedule, temperature=t0)
                self.calibrated = True
            return 1.0 if t_a <= t_b else self.schedule.initial_acceptance
        return acceptance_probability(t_a, t_b, self.schedule.temperature)

    def accept(self, f_a: float, f_b: float) -> bool:
        p = self.probability(f_a, f_b)
        return p > self.rng.random()

    def cool(self) -> None:
        if self.calibrated:
            self.schedule = cool(self.schedule)
