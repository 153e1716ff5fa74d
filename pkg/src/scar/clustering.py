"""K-means over top-M CQI vectors: tree-filtered Lloyd, random swap and the
annealed hybrid that switches between them.

Methods
-------
KN    restarted Lloyd iterations; a run that fails to improve its start
      triggers a fresh random start.
RS    random swap of one center per iteration, kept only if not worse.
RSKN  one random swap at the start of every run, Lloyd for the rest.
SA    the hybrid below on raw distortions.
SAST  the hybrid on tunneled distortions, with early run termination.

The hybrid starts every run in swap mode. After a swap, a Metropolis test on
the current versus previous distortion decides whether to keep swapping or to
switch to Lloyd refinement for the remainder of the run. At run end a second
test decides whether the final set seeds the next run.
"""
from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numba
import numpy as np

from . import kntree
from .sast import AnnealingSchedule, Annealer, TunnelingParams

METHODS = ("KN", "RS", "RSKN", "SA", "SAST")
RANDOM_STEP, KN_STEP = 0, 1
CENTERS_MAGIC = "# scar-centers v1"
BENCHMARK_HEADER = ("method", "M", "K", "seed", "distortion", "cpu_seconds")


@dataclass(frozen=True)
class ClusterRunConfig:
    max_iters_per_run: int = 10
    total_iters: int = 1000
    min_improvement: float = 0.1
    schedule: AnnealingSchedule = field(default_factory=AnnealingSchedule)
    tunneling: TunnelingParams = field(default_factory=lambda: TunnelingParams(0.02))
    method: str = "SAST"

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.max_iters_per_run < 1 or self.total_iters < 1:
            raise ValueError("iteration counts must be >= 1")
        if self.min_improvement < 0:
            raise ValueError("min_improvement must be >= 0")


class ClusterResult(NamedTuple):
    centers: np.ndarray
    distortion: float
    trace: np.ndarray   # rows: iteration, step kind, distortion, best distortion


@dataclass(frozen=True)
class BenchmarkRow:
    method: str
    m: int
    k: int
    seed: int
    distortion: float
    cpu_seconds: float


# -- assignment helpers ------------------------------------------------------

@numba.njit(cache=True)
def _assign_all(points, centers, labels, dist):
    for u in range(points.shape[0]):
        best = 0
        best_d = np.inf
        for k in range(centers.shape[0]):
            acc = 0.0
            for j in range(points.shape[1]):
                diff = points[u, j] - centers[k, j]
                acc += diff * diff
            if acc < best_d:
                best_d = acc
                best = k
        labels[u] = best
        dist[u] = best_d


@numba.njit(cache=True)
def _labelled_dist(points, centers, labels, dist):
    for u in range(points.shape[0]):
        k = labels[u]
        acc = 0.0
        for j in range(points.shape[1]):
            diff = points[u, j] - centers[k, j]
            acc += diff * diff
        dist[u] = acc


@numba.njit(cache=True)
def _swap_update(points, centers, labels, dist, moved):
    """Repair labels after ``centers[moved]`` was replaced."""
    n_k = centers.shape[0]
    for u in range(points.shape[0]):
        if labels[u] == moved:
            best = 0
            best_d = np.inf
            for k in range(n_k):
                acc = 0.0
                for j in range(points.shape[1]):
                    diff = points[u, j] - centers[k, j]
                    acc += diff * diff
                if acc < best_d:
                    best_d = acc
                    best = k
            labels[u] = best
            dist[u] = best_d
        else:
            acc = 0.0
            for j in range(points.shape[1]):
                diff = points[u, j] - centers[moved, j]
                acc += diff * diff
            if acc < dist[u] or (acc == dist[u] and moved < labels[u]):
                labels[u] = moved
                dist[u] = acc


def assign(points, centers):
    """Brute-force nearest center (lowest index on ties) and squared distance."""
    points = np.ascontiguousarray(points, dtype=float)
    centers = np.ascontiguousarray(centers, dtype=float)
    labels = np.empty(points.shape[0], np.int64)
    dist = np.empty(points.shape[0])
    _assign_all(points, centers, labels, dist)
    return labels, dist


def distortion(points, centers) -> float:
    """Mean squared distance from each point to its nearest center."""
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[0] == 0:
        raise ValueError("distortion of an empty dataset is undefined")
    centers = np.asarray(centers, dtype=float)
    if centers.ndim != 2 or centers.shape[1] != points.shape[1]:
        raise ValueError("points and centers must share their dimension")
    return float(assign(points, centers)[1].mean())


def centroids(points, labels, centers, dist):
    """Neighborhood means; empty centers move to the worst-served points."""
    k, n = centers.shape
    counts = np.bincount(labels, minlength=k)
    sums = np.zeros((k, n))
    np.add.at(sums, labels, points)
    out = centers.copy()
    filled = counts > 0
    out[filled] = sums[filled] / counts[filled, None]
    empty = np.flatnonzero(~filled)
    if empty.size:
        far = np.argsort(-dist, kind="stable")[:empty.size]
        out[empty] = points[far]
    return out, int(empty.size)


def lloyd_iteration(tree: kntree.KnTree, centers, labels=None) -> np.ndarray:
    """One filtered Lloyd step: neighborhoods via the tree, then centroids."""
    centers = np.ascontiguousarray(centers, dtype=float)
    if labels is None:
        labels, _ = kntree.filter_assign(tree, centers)
    dist = np.empty(tree.size)
    _labelled_dist(tree.points, centers, labels, dist)
    return centroids(tree.points, labels, centers, dist)[0]


def random_centers(points, k: int, rng: np.random.Generator) -> np.ndarray:
    """``k`` distinct dataset points drawn without replacement."""
    points = np.asarray(points, dtype=float)
    _, first = np.unique(points, axis=0, return_index=True)
    distinct = np.sort(first)
    if not 1 <= k <= distinct.size:
        raise ValueError(f"k={k} must lie in [1, {distinct.size}] (distinct points)")
    pick = rng.choice(distinct.size, size=k, replace=False)
    return points[distinct[pick]].copy()


def nearest_cqi_index(centers) -> np.ndarray:
    """0-based CQI index whose one-hot histogram lies closest to each center."""
    centers = np.asarray(centers, dtype=float)
    n = centers.shape[1]
    return assign(centers, np.eye(n))[0]


def order_centers(centers) -> np.ndarray:
    """Sort centers from worst to best nearest CQI index (stable)."""
    centers = np.asarray(centers, dtype=float)
    return centers[np.argsort(nearest_cqi_index(centers), kind="stable")]


# -- the optimizer -----------------------------------------------------------

class _State:
    """Center set with cached labels and per-point squared distances."""

    def __init__(self, points, centers, labels=None, dist=None):
        self.centers = np.ascontiguousarray(centers, dtype=float)
        if labels is None:
            labels, dist = assign(points, self.centers)
        self.labels = labels
        self.dist = dist
        self.d = float(dist.mean())

    def copy(self):
        out = object.__new__(_State)
        out.centers = self.centers.copy()
        out.labels = self.labels.copy()
        out.dist = self.dist.copy()
        out.d = self.d
        return out


def _swap(points, state: _State, rng) -> _State:
    out = state.copy()
    k = out.centers.shape[0]
    moved = int(rng.integers(k))
    for _ in range(64):
        r = int(rng.integers(points.shape[0]))
        if not np.any(np.all(out.centers == points[r], axis=1)):
            break
    out.centers[moved] = points[r]
    _swap_update(points, out.centers, out.labels, out.dist, moved)
    out.d = float(out.dist.mean())
    return out


def _kn_step(tree, state: _State) -> _State:
    centers, _ = centroids(tree.points, state.labels, state.centers, state.dist)
    labels, _ = kntree.filter_assign(tree, centers)
    dist = np.empty(tree.size)
    _labelled_dist(tree.points, centers, labels, dist)
    return _State(tree.points, centers, labels, dist)


def sast_cluster(points, k: int, config: ClusterRunConfig | None = None,
                 rng: np.random.Generator | None = None,
                 tree: kntree.KnTree | None = None) -> ClusterResult:
    """Run the configured method for ``config.total_iters`` iterations.

    Returns the lowest-distortion center set seen at any iteration.
    """
    config = config or ClusterRunConfig()
    rng = rng if rng is not None else np.random.default_rng(0)
    tree = tree if tree is not None else kntree.build(points)
    pts = tree.points
    method = config.method
    annealed = method in ("SA", "SAST")
    tunneling = config.tunneling if method == "SAST" else None
    switch = Annealer(config.schedule, tunneling, rng)
    restart = Annealer(config.schedule, tunneling, rng)

    start = _State(pts, random_centers(pts, k, rng))
    best_centers, best_d = start.centers.copy(), start.d
    for ann in (switch, restart):
        ann.observe(start.d)
    trace = []
    z = 0
    while z < config.total_iters:
        current = start
        random_mode = method != "KN"
        for it in range(1, config.max_iters_per_run + 1):
            z += 1
            previous = current
            if random_mode:
                kind = RANDOM_STEP
                current = _swap(pts, previous, rng)
                if method == "RS" and current.d > previous.d:
                    current = previous
            else:
                kind = KN_STEP
                current = _kn_step(tree, previous)
            if current.d < best_d:
                best_d, best_centers = current.d, current.centers.copy()
            assert best_d <= current.d
            for ann in (switch, restart):
                ann.observe(current.d)
            trace.append((z, kind, current.d, best_d))

            last = it == config.max_iters_per_run or z >= config.total_iters
            if (method == "SAST" and it >= 2
                    and start.d - current.d < config.min_improvement * start.d):
                last = True
            if last:
                break
            if method == "RSKN":
                random_mode = False
            elif annealed and kind == RANDOM_STEP:
                random_mode = switch.accept(current.d, previous.d)
                switch.cool()

        # decide the seed of the next run
        if method == "KN":
            start = current if current.d < start.d else _State(
                pts, random_centers(pts, k, rng))
        elif annealed:
            if restart.accept(current.d, start.d):
                start = current
            restart.cool()
        elif current.d <= start.d:
            start = current
    return ClusterResult(best_centers, float(best_d), np.array(trace, dtype=float))


def cluster(points, k: int, method: str = "SAST", seed: int = 0,
            config: ClusterRunConfig | None = None, tree=None) -> ClusterResult:
    """Convenience wrapper: seeded run of one method."""
    base = config or ClusterRunConfig()
    cfg = ClusterRunConfig(base.max_iters_per_run, base.total_iters, base.min_improvement,
                           base.schedule, base.tunneling, method)
    return sast_cluster(points, k, cfg, np.random.default_rng(seed), tree)


def benchmark_methods(points, k_values, methods=METHODS, seeds=range(10), *,
                      m: int = 0, config: ClusterRunConfig | None = None) -> list:
    points = np.asarray(points, dtype=float)
    tree = kntree.build(points)
    rows = []
    for method in methods:
        for k in k_values:
            for seed in seeds:
                t0 = time.perf_counter()
                res = cluster(points, k, method, seed, config, tree)
                rows.append(BenchmarkRow(method, m, int(k), int(seed), res.distortion,
                                         time.perf_counter() - t0))
    return rows


def benchmark_csv(rows) -> str:
    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    out.writerow(BENCHMARK_HEADER)
    for r in rows:
        out.writerow([r.method, r.m, r.k, r.seed, repr(r.distortion), f"{r.cpu_seconds:.3f}"])
    return buf.getvalue()


def write_centers(path, centers, m: int) -> None:
    centers = order_centers(centers)
    k, n = centers.shape
    lines = [f"{CENTERS_MAGIC} N={n} K={k} M={m}"]
    lines += [" ".join(repr(float(x)) for x in row) for row in centers]
    Path(path).write_text("\n".join(lines) + "\n")


def read_centers(path):
    """Returns ``(m, centers)``."""
    text = Path(path).read_text().splitlines()
    if not text or not text[0].startswith(CENTERS_MAGIC):
        raise ValueError(f"{path}: not a scar centers file")
    fields = dict(tok.split("=") for tok in text[0][len(CENTERS_MAGIC):].split())
    n, k, m = int(fields["N"]), int(fields["K"]), int(fields["M"])
    rows = [[float(x) for x in line.split()] for line in text[1:] if line.strip()]
    centers = np.array(rows, dtype=float).reshape(-1, n)
    if centers.shape[0] != k:
        raise ValueError(f"{path}: expected {k} centers, found {centers.shape[0]}")
    return m, centers


def mean_improvement(base: float, other: float) -> float:
    """Relative distortion reduction of ``other`` over ``base``."""
    return (base - other) / base if base > 0 else 0.0 if other == 0 else -math.inf
