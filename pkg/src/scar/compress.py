"""Fixed-size controller state from a variable user population.

Each active user's top-M vector is classified by the RBF network; class
shares form the classification vector, and four summary features of that
vector replace the per-user CQI detail.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .rbfn import RbfnModel, predict

STATE_DIM = 9
SENTINEL = (0, 0.0, 1.0, 1)


@dataclass(frozen=True)
class CompressedFeatures:
    active_classes: int
    dispersion: float
    support_distance: float
    support_index: int      # 1-based

    def __iter__(self):
        return iter((self.active_classes, self.dispersion,
                     self.support_distance, self.support_index))


@dataclass(frozen=True)
class StateScales:
    k: int = 64
    thr_max: float = 12 * 0.933     # Mbps: one user holding every RB at top CQI
    max_users: int = 20


@dataclass(frozen=True)
class ControllerState:
    alpha_prev: float
    beta_prev: float
    thr_mean: float
    thr_std: float
    features: tuple
    user_count: int
    raw: bool = False       # features come from raw_features, already in [0, 1]

    def vector(self, scales: StateScales) -> np.ndarray:
        """Normalized 9-vector fed to the approximators."""
        if self.raw:
            feats = list(self.features)
        else:
            h, s, d, k = self.features
            feats = [h / scales.k, s / 0.25, d / math.sqrt(2.0),
                     (k - 1) / max(scales.k - 1, 1)]
        return np.array([
            self.alpha_prev,
            self.beta_prev,
            self.thr_mean / scales.thr_max,
            self.thr_std / scales.thr_max,
            *feats,
            self.user_count / scales.max_users,
        ])


def classification_vector(labels, k: int, user_count: int) -> np.ndarray:
    """Class shares from 1-based labels of the users that reported."""
    if user_count < len(labels):
        raise ValueError("user_count must cover every report")
    if user_count < 1:
        return np.zeros(k)
    counts = np.bincount(np.asarray(labels, dtype=np.int64) - 1, minlength=k)[:k]
    return counts / user_count


def classify_population(vectors, model: RbfnModel, user_count: int) -> np.ndarray:
    vectors = np.asarray(vectors, dtype=float)
    if vectors.size == 0:
        return classification_vector([], model.k, user_count)
    return classification_vector(predict(model, vectors), model.k, user_count)


def extract_features(v) -> CompressedFeatures:
    """Active-class count, dispersion, and distance to the nearest one-hot."""
    v = np.asarray(v, dtype=float)
    active = v > 0
    h = int(active.sum())
    if h == 0:
        return CompressedFeatures(*SENTINEL)
    disp = float(np.sum((v[active] - 1.0 / h) ** 2) / h)
    dist = np.sqrt(np.sum((v[None, :] - np.eye(v.size)) ** 2, axis=1))
    k = int(np.argmin(dist))
    return CompressedFeatures(h, disp, float(dist[k]), k + 1)


def raw_features(histograms) -> tuple:
    """Ablation features: spread of the users' mean CQI, without clustering.

    Returns ``(mean, 2 * std, 0, 0)``: mean and standard deviation over users
    of each user's histogram-mean CQI mapped to [0, 1], padded to the width
    of the compressed features.
    """
    h = np.asarray(histograms, dtype=float)
    if h.size == 0:
        return (0.0, 0.0, 0.0, 0.0)
    levels = np.arange(1, h.shape[1] + 1)
    per_user = (h @ levels - 1.0) / (h.shape[1] - 1)
    return (float(per_user.mean()), 2.0 * float(per_user.std()), 0.0, 0.0)


def build_state(alpha_prev: float, beta_prev: float, throughputs, features,
                user_count: int, raw: bool = False) -> ControllerState:
    if user_count < 1:
        raise ValueError("user_count must be >= 1")
    thr = np.asarray(throughputs, dtype=float)
    mean = float(thr.mean()) if thr.size else 0.0
    std = float(thr.std()) if thr.size else 0.0
    return ControllerState(float(alpha_prev), float(beta_prev), mean, std,
                           tuple(features), int(user_count), raw)
