"""Bandwidth-independent CQI histograms and their top-M reduction.

A report is a length-J vector of integer CQIs in ``[1, N]``. Bins are indexed
from 0, so bin ``n - 1`` holds the share of resource blocks reporting CQI ``n``.
"""
from __future__ import annotations

import numpy as np


def histogram(values, n_levels: int = 15) -> np.ndarray:
    """Normalized CQI histogram of a single report (length ``n_levels``)."""
    values = np.asarray(values)
    if values.ndim != 1 or values.size == 0:
        raise ValueError("a report must be a non-empty 1-D sequence of CQIs")
    return histograms(values[None, :], n_levels)[0]


def histograms(reports, n_levels: int = 15) -> np.ndarray:
    """Row-wise histograms of a ``(users, J)`` CQI matrix."""
    reports = np.asarray(reports)
    if reports.ndim != 2 or reports.shape[1] == 0:
        raise ValueError("reports must be a (users, J) array with J >= 1")
    if reports.size and (reports.min() < 1 or reports.max() > n_levels):
        raise ValueError(f"CQI values must lie in [1, {n_levels}]")
    n_users, n_rbs = reports.shape
    counts = np.zeros((n_users, n_levels))
    rows = np.repeat(np.arange(n_users), n_rbs)
    np.add.at(counts, (rows, reports.ravel().astype(np.intp) - 1), 1.0)
    return counts / n_rbs


def _nearest_kept(kept: np.ndarray) -> np.ndarray:
    """For each row and bin, the index of the nearest kept bin.

    Distance is ``|n - k|`` on the CQI axis; equidistant bins go to the lower
    index because ``argmin`` returns the first minimum.
    """
    n = kept.shape[1]
    idx = np.arange(n)
    dist = np.abs(idx[:, None] - idx[None, :]).astype(float)  # (bin, kept-candidate)
    dist = np.where(kept[:, None, :], dist[None], np.inf)
    return dist.argmin(axis=2)


def top_m_reduce_batch(h, m: int) -> np.ndarray:
    """Keep the ``m`` largest bins of each row and fold the rest into them.

    Ties in value are broken toward the lower CQI index. Each residual bin
    moves its mass to the nearest kept bin. Total mass is preserved.
    """
    h = np.asarray(h, dtype=float)
    if h.ndim != 2:
        raise ValueError("expected a 2-D array of histograms")
    n_rows, n = h.shape
    if not 1 <= m <= n:
        raise ValueError(f"m must lie in [1, {n}], got {m}")
    # stable sort on -h keeps ascending index order among equal values
    order = np.argsort(-h, axis=1, kind="stable")
    kept = np.zeros_like(h, dtype=bool)
    np.put_along_axis(kept, order[:, :m], True, axis=1)
    target = _nearest_kept(kept)
    out = np.where(kept, h, 0.0)
    residual = np.where(kept, 0.0, h)
    rows = np.repeat(np.arange(n_rows), n)
    np.add.at(out, (rows, target.ravel()), residual.ravel())
    return out


def top_m_reduce(h, m: int) -> np.ndarray:
    h = np.asarray(h, dtype=float)
    if h.ndim == 1:
        return top_m_reduce_batch(h[None, :], m)[0]
    return top_m_reduce_batch(h, m)


def preprocess_reports(reports, m: int, n_levels: int = 15) -> np.ndarray:
    """CQI matrix ``(users, J)`` -> top-M vectors ``(users, N)``."""
    return top_m_reduce_batch(histograms(reports, n_levels), m)
