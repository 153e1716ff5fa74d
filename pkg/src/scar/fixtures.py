"""Small reproducible datasets shared by tests, demos and the acceptance suite."""
from __future__ import annotations

import itertools

import numpy as np

from .channel import ChannelConfig, collect_dataset, vector_stream


def blobs(seed: int = 0, n_per_blob: int = 20, n_dims: int = 3, spread: float = 0.03):
    """Four well separated Gaussian blobs; returns ``(points, means)``."""
    rng = np.random.default_rng(seed)
    means = np.array([[0.1, 0.1, 0.1], [0.9, 0.1, 0.1], [0.1, 0.9, 0.1], [0.1, 0.1, 0.9]])
    means = means[:, :n_dims]
    pts = np.concatenate([m + spread * rng.standard_normal((n_per_blob, n_dims)) for m in means])
    return pts, means


def desk_dataset(m: int = 3, num_users: int = 30, seed: int = 0) -> np.ndarray:
    """Top-M vectors collected from the default desk channel until saturation."""
    return collect_dataset(ChannelConfig(num_users=num_users, seed=seed), [m])[m]


def channel_vectors(m: int, count: int, num_users: int = 30, seed: int = 100) -> np.ndarray:
    """``count`` top-M vectors drawn TTI by TTI from a fresh channel, duplicates kept."""
    stream = vector_stream(ChannelConfig(num_users=num_users, seed=seed), m)
    return np.array(list(itertools.islice(stream, count)))
