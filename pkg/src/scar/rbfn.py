"""Radial-basis-function classifier from top-M vectors to cluster patterns.

Hidden units are Gaussians on the cluster centers; the output layer is a
tanh readout of ``O = ceil(log2 K)`` units whose signs spell the binary
cluster index. Only the output weights are trained.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np

from .clustering import assign
from .sast import AnnealingSchedule, Annealer, TunnelingParams

MODEL_VERSION = 1
SWEEP_HEADER = ("M", "K", "sigma", "eta", "seed", "final_error")


def n_outputs(k: int) -> int:
    if k < 1:
        raise ValueError("K must be >= 1")
    return max(1, math.ceil(math.log2(k)))


def encode_pattern(k: int, n_out: int) -> np.ndarray:
    """Pattern for 1-based cluster ``k``: bits of ``k - 1``, MSB first, 0 -> -1."""
    if not 1 <= k <= 2 ** n_out:
        raise ValueError(f"k={k} outside [1, {2 ** n_out}]")
    bits = [(k - 1) >> (n_out - 1 - o) & 1 for o in range(n_out)]
    return np.array(bits, dtype=float) * 2.0 - 1.0


def codebook(k: int, n_out: int | None = None) -> np.ndarray:
    """``(K, O)`` matrix whose row ``i`` is the pattern of cluster ``i + 1``."""
    n_out = n_outputs(k) if n_out is None else n_out
    return np.stack([encode_pattern(i + 1, n_out) for i in range(k)])


def decode_pattern(outputs, k: int | None = None) -> int:
    """Threshold at zero (0 counts as +1) and read back the 1-based index."""
    bits = np.asarray(outputs) >= 0
    value = 0
    for b in bits:
        value = (value << 1) | int(b)
    idx = value + 1
    if k is not None:
        idx = min(max(idx, 1), k)
    return idx


def decode_batch(outputs, k: int) -> np.ndarray:
    outputs = np.asarray(outputs)
    weights = 1 << np.arange(outputs.shape[1] - 1, -1, -1)
    return np.clip((outputs >= 0).astype(np.int64) @ weights + 1, 1, k)


def mse_error(pattern, outputs) -> float:
    pattern = np.asarray(pattern, dtype=float)
    outputs = np.asarray(outputs, dtype=float)
    if pattern.shape != outputs.shape:
        raise ValueError("pattern and outputs differ in length")
    return float(np.mean((pattern - outputs) ** 2))


@dataclass
class RbfnModel:
    centers: np.ndarray
    weights: np.ndarray
    sigma: float
    learning_rate: float
    m: int = 0

    def __post_init__(self):
        self.centers = np.asarray(self.centers, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.weights.shape != (self.k, n_outputs(self.k)):
            raise ValueError(f"weights must have shape {(self.k, n_outputs(self.k))}")

    @property
    def k(self) -> int:
        return self.centers.shape[0]

    @property
    def n_out(self) -> int:
        return self.weights.shape[1]

    def copy(self) -> "RbfnModel":
        return replace(self, centers=self.centers.copy(), weights=self.weights.copy())


def init_model(centers, sigma: float, learning_rate: float, rng: np.random.Generator,
               m: int = 0) -> RbfnModel:
    """Output weights drawn uniformly from [-0.1, 0.1]."""
    centers = np.asarray(centers, dtype=float)
    k = centers.shape[0]
    weights = rng.uniform(-0.1, 0.1, size=(k, n_outputs(k)))
    return RbfnModel(centers, weights, sigma, learning_rate, m)


def hidden(model: RbfnModel, y) -> np.ndarray:
    """Gaussian activations; ``y`` may be one vector or a batch of rows."""
    y = np.asarray(y, dtype=float)
    sq = np.sum((y[..., None, :] - model.centers) ** 2, axis=-1)
    return np.exp(-sq / (2.0 * model.sigma ** 2))


def forward(model: RbfnModel, y):
    phi = hidden(model, y)
    return phi, np.tanh(phi @ model.weights)


def predict(model: RbfnModel, ys) -> np.ndarray:
    """1-based cluster index for each row of ``ys``."""
    return decode_batch(forward(model, np.atleast_2d(ys))[1], model.k)


def weight_gradient(model: RbfnModel, y, pattern) -> np.ndarray:
    """Gradient of the per-sample mean squared error with respect to the weights."""
    phi, out = forward(model, y)
    err = np.asarray(pattern, dtype=float) - out
    return -(2.0 / model.n_out) * np.outer(phi, (1.0 - out ** 2) * err)


def backprop_update(model: RbfnModel, y, pattern) -> RbfnModel:
    """Delta rule on the output layer; returns a new model."""
    out = model.copy()
    _update_in_place(out, y, pattern)
    return out


def _update_in_place(model: RbfnModel, y, pattern) -> float:
    phi, out = forward(model, y)
    err = pattern - out
    model.weights += model.learning_rate * np.outer(phi, (1.0 - out ** 2) * err)
    return float(np.mean(err ** 2))


def dataset_error(model: RbfnModel, ys, patterns) -> float:
    """Mean squared error over a labeled set."""
    _, out = forward(model, ys)
    return float(np.mean((patterns - out) ** 2))


def accuracy(model: RbfnModel, ys, labels) -> float:
    """Share of rows whose decoded index equals ``labels + 1`` (labels 0-based)."""
    return float(np.mean(predict(model, ys) == np.asarray(labels) + 1))


@dataclass(frozen=True)
class RbfnTrainConfig:
    total_iters: int = 10_000
    iters_per_run: int = 200
    schedule: AnnealingSchedule = field(
        default_factory=lambda: AnnealingSchedule(1.0, 0.99, 0.8, 200))
    weight_schedule: AnnealingSchedule = field(
        default_factory=lambda: AnnealingSchedule(1.0, 0.99, 0.8, 5))
    tunneling: TunnelingParams = field(default_factory=lambda: TunnelingParams(0.1))

    def __post_init__(self):
        if self.total_iters < 1 or self.iters_per_run < 1:
            raise ValueError("iteration counts must be >= 1")


class TrainResult(NamedTuple):
    model: RbfnModel
    error: float
    trace: np.ndarray   # rows: epoch, epoch error, best error, share of labeled picks


def label_stream(centers, vectors: Iterable) -> Iterable:
    """Pair each streamed vector with its nearest-center label (0-based)."""
    centers = np.asarray(centers, dtype=float)
    for y in vectors:
        y = np.asarray(y, dtype=float)
        yield y, int(assign(y[None, :], centers)[0][0])


def sast_train(model: RbfnModel, labeled, stream: Iterable,
               config: RbfnTrainConfig | None = None,
               rng: np.random.Generator | None = None) -> TrainResult:
    """Annealed online training.

    ``labeled`` is ``(vectors, labels)`` with 0-based labels; ``stream``
    yields ``(vector, label)`` pairs. Within an epoch each iteration trains on
    either the next stream sample or the next labeled vector; a Metropolis
    test on consecutive sample errors keeps the stream while it behaves and
    falls back to the labeled set otherwise. Epoch-end weights are kept when
    the labeled-set error improves and otherwise accepted only by chance.
    """
    config = config or RbfnTrainConfig()
    rng = rng if rng is not None else np.random.default_rng(0)
    ys = np.asarray(labeled[0], dtype=float)
    patterns = codebook(model.k, model.n_out)
    targets = patterns[np.asarray(labeled[1])]
    stream = iter(stream)

    switch = Annealer(config.schedule, config.tunneling, rng)
    keep = Annealer(config.weight_schedule, config.tunneling, rng)
    current = model.copy()
    anchor = current.weights.copy()
    e0 = dataset_error(current, ys, targets)
    best_w, best_e = anchor.copy(), e0
    keep.observe(e0)
    trace = []
    cursor = 0
    z = 0
    epoch = 0
    while z < config.total_iters:
        epoch += 1
        use_labeled = False
        prev_err = None
        labeled_picks = 0
        n_iter = min(config.iters_per_run, config.total_iters - z)
        for _ in range(n_iter):
            z += 1
            if use_labeled:
                y, target = ys[cursor], targets[cursor]
                cursor = (cursor + 1) % ys.shape[0]
                labeled_picks += 1
            else:
                y, label = next(stream)
                target = patterns[label]
            err = _update_in_place(current, y, target)
            if prev_err is not None:
                use_labeled = not switch.accept(err, prev_err)
            else:
                switch.observe(err)
            prev_err = err

        e = dataset_error(current, ys, targets)
        keep.observe(e)
        if e < best_e:
            best_w, best_e = current.weights.copy(), e
        if e < e0:
            anchor, e0 = current.weights.copy(), e
        elif keep.accept(e, e0):
            anchor, e0 = current.weights.copy(), e
        else:
            current.weights = anchor.copy()
        switch.cool()
        keep.cool()
        trace.append((epoch, e, best_e, labeled_picks / n_iter))
    out = current.copy()
    out.weights = best_w
    return TrainResult(out, float(best_e), np.array(trace, dtype=float))


def plain_train(model: RbfnModel, stream: Iterable, n_samples: int) -> RbfnModel:
    """Stream training without annealing, for comparison."""
    current = model.copy()
    stream = iter(stream)
    patterns = codebook(model.k, model.n_out)
    for _ in range(n_samples):
        y, label = next(stream)
        _update_in_place(current, y, patterns[label])
    return current


def cycle_labeled(ys, labels, rng: np.random.Generator):
    """Endless shuffled passes over a labeled set, as ``(vector, label)`` pairs."""
    ys = np.asarray(ys, dtype=float)
    labels = np.asarray(labels)
    while True:
        for i in rng.permutation(ys.shape[0]):
            yield ys[i], int(labels[i])


def hyperparam_sweep(ys, labels, centers, sigma_grid, eta_grid, seeds=(0,), *,
                     m: int = 0, stream_factory=None,
                     config: RbfnTrainConfig | None = None) -> list:
    """Train one model per (sigma, eta, seed); returns rows of ``SWEEP_HEADER``.

    ``stream_factory(seed)`` supplies the training stream; by default the
    labeled set is replayed in shuffled order.
    """
    config = config or RbfnTrainConfig()
    k = np.asarray(centers).shape[0]
    patterns = codebook(k)[np.asarray(labels)]
    rows = []
    for sigma in sigma_grid:
        for eta in eta_grid:
            for seed in seeds:
                rng = np.random.default_rng(seed)
                model = init_model(centers, sigma, eta, rng, m)
                if stream_factory is None:
                    stream = cycle_labeled(ys, labels, np.random.default_rng(seed + 1))
                else:
                    stream = stream_factory(seed)
                res = sast_train(model, (ys, labels), stream, config, rng)
                final = dataset_error(res.model, ys, patterns)
                rows.append((m, k, float(sigma), float(eta), int(seed), final))
    return rows


def sweep_csv(rows) -> str:
    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    out.writerow(SWEEP_HEADER)
    for m, k, sigma, eta, seed, err in rows:
        out.writerow([m, k, repr(sigma), repr(eta), seed, repr(err)])
    return buf.getvalue()


def save_model(path, model: RbfnModel) -> None:
    doc = {
        "version": MODEL_VERSION,
        "N": int(model.centers.shape[1]),
        "M": int(model.m),
        "K": int(model.k),
        "O": int(model.n_out),
        "sigma": float(model.sigma),
        "eta": float(model.learning_rate),
        "centers": model.centers.tolist(),
        "weights": model.weights.tolist(),
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_model(path) -> RbfnModel:
    doc = json.loads(Path(path).read_text())
    if doc.get("version") != MODEL_VERSION:
        raise ValueError(f"{path}: unsupported model version {doc.get('version')!r}")
    model = RbfnModel(np.array(doc["centers"], dtype=float),
                      np.array(doc["weights"], dtype=float),
                      doc["sigma"], doc["eta"], doc["M"])
    if model.centers.shape != (doc["K"], doc["N"]) or model.n_out != doc["O"]:
        raise ValueError(f"{path}: inconsistent shapes")
    return model
