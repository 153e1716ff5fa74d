import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from scar.clustering import assign, cluster
from scar.rbfn import (RbfnModel, RbfnTrainConfig, accuracy, backprop_update, codebook,
                       dataset_error, decode_batch, decode_pattern, encode_pattern, forward,
                       hyperparam_sweep, init_model, label_stream, load_model, mse_error,
                       n_outputs, plain_train, save_model, sast_train, sweep_csv,
                       weight_gradient)
from scar.sast import AnnealingSchedule


def random_model(rng, k=None, n=None, sigma=None):
    k = k or int(rng.integers(2, 17))
    n = n or int(rng.integers(2, 8))
    centers = rng.dirichlet(np.ones(n), k)
    m = init_model(centers, sigma or float(rng.uniform(0.1, 1.0)), 0.1, rng)
    m.weights = rng.normal(0, 1.0, m.weights.shape)
    return m


def test_pattern_examples():
    assert encode_pattern(1, 3).tolist() == [-1, -1, -1]
    assert encode_pattern(2, 3).tolist() == [-1, -1, 1]
    assert encode_pattern(8, 3).tolist() == [1, 1, 1]
    with pytest.raises(ValueError):
        encode_pattern(9, 3)
    with pytest.raises(ValueError):
        encode_pattern(0, 3)


def test_decode_examples():
    assert decode_pattern([-0.9, -0.9, -0.9]) == 1
    assert decode_pattern([0.2, -0.3, 0.9]) == 6
    assert decode_pattern([0.0, 0.0, 0.0]) == 8
    assert decode_pattern([1, 1, 1], k=6) == 6


@pytest.mark.parametrize("k", [2, 3, 8, 64, 100, 512])
def test_round_trip_and_distinct(k):
    book = codebook(k)
    assert book.shape == (k, n_outputs(k))
    assert len({tuple(r) for r in book}) == k
    assert [decode_pattern(p, k) for p in book] == list(range(1, k + 1))
    assert np.array_equal(decode_batch(book, k), np.arange(1, k + 1))


def test_forward_examples():
    rng = np.random.default_rng(0)
    m = random_model(rng, k=4, n=3, sigma=0.3)
    phi, _ = forward(m, m.centers[2])
    assert phi[2] == 1.0
    c = m.centers[0]
    shift = np.zeros(3)
    shift[0] = math.sqrt(2) * 0.3
    phi, _ = forward(m, c + shift)
    assert phi[0] == pytest.approx(math.exp(-1), rel=1e-12)
    m.weights[:] = 0
    assert np.all(forward(m, c)[1] == 0)


@settings(max_examples=50)
@given(st.integers(0, 10 ** 6))
def test_activation_ranges(seed):
    rng = np.random.default_rng(seed)
    m = random_model(rng)
    phi, out = forward(m, rng.dirichlet(np.ones(m.centers.shape[1])))
    assert np.all(phi > 0) and np.all(phi <= 1)
    assert np.all(np.abs(out) <= 1)


def test_mse_examples():
    assert mse_error([1, -1], [1, -1]) == 0
    assert mse_error([1, -1, 1], [0, 0, 0]) == 1
    assert mse_error([1, -1], [0.5, -0.5]) == 0.25
    with pytest.raises(ValueError):
        mse_error([1], [1, 2])


def numeric_gradient(model, y, pattern, h=1e-5):
    g = np.zeros_like(model.weights)
    for idx in np.ndindex(*model.weights.shape):
        plus, minus = model.copy(), model.copy()
        plus.weights[idx] += h
        minus.weights[idx] -= h
        g[idx] = (mse_error(pattern, forward(plus, y)[1])
                  - mse_error(pattern, forward(minus, y)[1])) / (2 * h)
    return g


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(100):
        m = random_model(rng)
        y = rng.dirichlet(np.ones(m.centers.shape[1]))
        p = codebook(m.k)[rng.integers(m.k)]
        a, b = weight_gradient(m, y, p), numeric_gradient(m, y, p)
        worst = max(worst, np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12))
    assert worst < 1e-4


def test_update_is_a_gradient_step():
    rng = np.random.default_rng(2)
    m = random_model(rng)
    y = rng.dirichlet(np.ones(m.centers.shape[1]))
    p = codebook(m.k)[0]
    new = backprop_update(m, y, p)
    step = -m.learning_rate * m.n_out / 2 * weight_gradient(m, y, p)
    assert np.allclose(new.weights - m.weights, step, atol=1e-14)
    assert np.array_equal(new.centers, m.centers) and new.sigma == m.sigma


def test_zero_error_leaves_weights():
    m = random_model(np.random.default_rng(3), k=2, n=2)
    m.weights[:] = 0
    m.weights[0, 0] = 50.0          # saturates to +1 exactly
    y = m.centers[0]
    out = forward(m, y)[1]
    new = backprop_update(m, y, np.sign(out))
    assert np.array_equal(new.weights, m.weights)


def test_repeated_updates_converge():
    rng = np.random.default_rng(4)
    m = init_model(rng.dirichlet(np.ones(15), 64), 0.2, 0.089, rng)
    y, p = m.centers[10], codebook(64)[10]
    for _ in range(10_000):
        m = backprop_update(m, y, p)
    assert mse_error(p, forward(m, y)[1]) < 1e-3


def test_validation():
    with pytest.raises(ValueError):
        RbfnModel(np.zeros((4, 2)), np.zeros((4, 2)), 0.0, 0.1)
    with pytest.raises(ValueError):
        RbfnModel(np.zeros((4, 2)), np.zeros((4, 3)), 0.1, 0.1)


def small_fixture(seed=0, k=8, n_points=200):
    rng = np.random.default_rng(seed)
    pts = rng.dirichlet(np.ones(6) * 0.4, n_points)
    centers = cluster(pts, k, "KN", seed).centers
    labels = assign(pts, centers)[0]
    return pts, labels, centers


def test_best_error_is_running_minimum_and_returned():
    pts, labels, centers = small_fixture()
    rng = np.random.default_rng(0)
    model = init_model(centers, 0.3, 0.3, rng)
    e_init = dataset_error(model, pts, codebook(8)[labels])
    res = sast_train(model, (pts, labels), label_stream(centers, iter(np.random.default_rng(1)
                     .dirichlet(np.ones(6) * 0.4, 4000))), RbfnTrainConfig(total_iters=4000), rng)
    assert np.all(np.diff(res.trace[:, 2]) <= 0)
    assert res.error <= e_init
    assert res.error == pytest.approx(dataset_error(res.model, pts, codebook(8)[labels]))


def test_near_certain_acceptance_never_switches():
    pts, labels, centers = small_fixture(1)
    stream = [(p, int(l)) for p, l in zip(pts, labels)] * 5
    cfg = RbfnTrainConfig(total_iters=600, iters_per_run=200,
                          schedule=AnnealingSchedule(1.0, 1.0, 0.999999, 1),
                          weight_schedule=AnnealingSchedule(1.0, 1.0, 0.999999, 1))
    res = sast_train(init_model(centers, 0.3, 0.3, np.random.default_rng(0)),
                     (pts, labels), iter(stream), cfg, np.random.default_rng(0))
    assert np.all(res.trace[:, 3] == 0)


def test_sast_training_is_deterministic():
    pts, labels, centers = small_fixture(2)
    def run():
        rng = np.random.default_rng(5)
        stream = label_stream(centers, iter(np.random.default_rng(6).dirichlet(np.ones(6), 3000)))
        return sast_train(init_model(centers, 0.3, 0.3, rng), (pts, labels), stream,
                          RbfnTrainConfig(total_iters=2000), rng)
    a, b = run(), run()
    assert np.array_equal(a.model.weights, b.model.weights)


def test_plain_training_learns_something():
    pts, labels, centers = small_fixture(3)
    model = init_model(centers, 0.15, 0.3, np.random.default_rng(0))
    stream = ((p, int(l)) for p, l in zip(np.tile(pts, (20, 1)), np.tile(labels, 20)))
    trained = plain_train(model, stream, 4000)
    assert accuracy(trained, pts, labels) > accuracy(model, pts, labels)


def test_sweep_tiny_sigma_is_worse():
    pts, labels, centers = small_fixture(4)
    cfg = RbfnTrainConfig(total_iters=2000)
    rows = hyperparam_sweep(pts, labels, centers, [1e-3, 0.15], [0.3], (0,), m=3, config=cfg)
    assert rows[0][-1] > rows[1][-1]
    again = hyperparam_sweep(pts, labels, centers, [1e-3, 0.15], [0.3], (0,), m=3, config=cfg)
    assert rows == again
    assert sweep_csv(rows).splitlines()[0] == "M,K,sigma,eta,seed,final_error"


def test_model_round_trip(tmp_path):
    m = random_model(np.random.default_rng(6), k=8, n=15)
    m.m = 3
    save_model(tmp_path / "m.json", m)
    back = load_model(tmp_path / "m.json")
    assert np.array_equal(back.weights, m.weights) and np.array_equal(back.centers, m.centers)
    assert (back.sigma, back.learning_rate, back.m) == (m.sigma, m.learning_rate, 3)
