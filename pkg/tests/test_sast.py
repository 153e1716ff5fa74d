import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from scar.sast import (AnnealingSchedule, Annealer, TunnelingParams, acceptance_probability,
                       cool, initial_temperature, metropolis_step, tunneling_energy)


def test_tunneling_zero_gap():
    assert tunneling_energy(0.5, 0.5, 0.02) == 0.0


def test_tunneling_gap_equal_to_omega():
    assert tunneling_energy(0.52, 0.5, 0.02) == pytest.approx(1 - math.exp(-1), rel=1e-9)
    assert tunneling_energy(0.52, 0.5, 0.02) == pytest.approx(0.632121, abs=1e-6)


def test_tunneling_two_omegas():
    assert tunneling_energy(0.7, 0.5, TunnelingParams(0.1)) == pytest.approx(0.864665, abs=1e-6)


def test_tunneling_rejects_energy_below_best():
    with pytest.raises(ValueError):
        tunneling_energy(0.4, 0.5, 0.02)


def test_omega_must_be_positive():
    with pytest.raises(ValueError):
        TunnelingParams(0.0)


@given(st.floats(0, 10), st.floats(1e-6, 5), st.floats(1e-3, 2), st.floats(1e-3, 2))
def test_tunneling_properties(best, gap, omega, omega2):
    f = tunneling_energy(best + gap, best, omega)
    assert 0.0 < f <= 1.0     # saturates to 1.0 in floating point for huge gaps
    assert tunneling_energy(best + 2 * gap, best, omega) >= f
    lo, hi = sorted((omega, omega2))
    if hi > lo:
        assert tunneling_energy(best + gap, best, hi) <= tunneling_energy(best + gap, best, lo)


def test_acceptance_examples():
    assert acceptance_probability(0.3, 0.3, 0.1) == 1.0
    assert acceptance_probability(0.1, 0.4, 0.01) == 1.0
    assert acceptance_probability(0.6, 0.5, 0.1) == pytest.approx(math.exp(-1), rel=1e-12)


def test_acceptance_needs_positive_temperature():
    with pytest.raises(ValueError):
        acceptance_probability(0.1, 0.2, 0.0)


@given(st.floats(0, 1), st.floats(0, 1), st.floats(1e-3, 10), st.floats(1e-3, 10))
def test_acceptance_monotone_in_temperature(fa, fb, t1, t2):
    lo, hi = sorted((t1, t2))
    p_lo, p_hi = acceptance_probability(fa, fb, lo), acceptance_probability(fa, fb, hi)
    assert 0 <= p_lo <= 1 and p_lo <= p_hi + 1e-15
    if fa <= fb:
        assert p_lo == 1.0


def test_initial_temperature_examples():
    assert initial_temperature([math.log(2)], 0.5) == pytest.approx(1.0, rel=1e-12)
    assert initial_temperature([0.1], 0.5) == pytest.approx(0.144270, abs=1e-6)
    assert initial_temperature([0.1, 0.3], 0.5) == pytest.approx(0.288539, abs=1e-6)


def test_initial_temperature_uses_magnitudes_and_floor():
    assert initial_temperature([-0.1, 0.3], 0.5) == initial_temperature([0.1, 0.3], 0.5)
    assert initial_temperature([0.0, 0.0], 0.5) == 1e-6
    with pytest.raises(ValueError):
        initial_temperature([0.1], 1.0)
    with pytest.raises(ValueError):
        initial_temperature([], 0.5)


def test_cool_examples():
    assert cool(AnnealingSchedule(1.0, 0.95)).temperature == pytest.approx(0.95)
    assert cool(AnnealingSchedule(1.0, 1.0)).temperature == 1.0
    s = cool(cool(AnnealingSchedule(2.0, 0.99)))
    assert s.temperature == pytest.approx(1.9602, rel=1e-12)
    assert s.cooling_rate == 0.99 and s.sample_length == 10


@given(st.floats(0.01, 100), st.floats(0.5, 1.0), st.integers(0, 200))
def test_cool_compounds(t0, rate, n):
    s = AnnealingSchedule(t0, rate)
    for _ in range(n):
        s = cool(s)
    assert s.temperature == pytest.approx(t0 * rate ** n, rel=1e-12)


def test_schedule_validation():
    with pytest.raises(ValueError):
        AnnealingSchedule(temperature=0.0)
    with pytest.raises(ValueError):
        AnnealingSchedule(cooling_rate=1.5)
    with pytest.raises(ValueError):
        AnnealingSchedule(initial_acceptance=1.0)


def test_metropolis_examples():
    s = AnnealingSchedule(0.1)
    assert metropolis_step(0.2, 0.3, s, 0.999)
    assert not metropolis_step(0.6, 0.5, s, 0.5)
    assert metropolis_step(0.6, 0.5, s, 0.1)


def test_metropolis_reproducible():
    def run(seed):
        rng = np.random.default_rng(seed)
        s = AnnealingSchedule(0.05)
        return [metropolis_step(a, 0.3, s, rng.random()) for a in np.linspace(0, 0.6, 50)]
    assert run(3) == run(3)


def test_annealer_calibrates_after_sample_length():
    ann = Annealer(AnnealingSchedule(1.0, 0.9, 0.5, 3), TunnelingParams(0.1),
                   np.random.default_rng(0))
    ann.cool()
    assert ann.temperature == 1.0           # no cooling before calibration
    for e in (0.5, 0.6, 0.4):
        ann.probability(e, 0.45)
    assert ann.calibrated
    assert ann.temperature == pytest.approx(initial_temperature(ann.deltas, 0.5))
    ann.cool()
    assert ann.temperature == pytest.approx(0.9 * initial_temperature(ann.deltas, 0.5))


def test_annealer_best_is_running_minimum():
    ann = Annealer(AnnealingSchedule(), TunnelingParams(0.02), np.random.default_rng(1))
    seen = []
    for e in np.random.default_rng(2).uniform(0, 1, 40):
        ann.accept(float(e), float(e) + 0.1)
        seen.append(e)
        assert ann.best == min(seen)
