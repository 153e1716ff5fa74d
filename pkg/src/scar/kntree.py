"""KD-tree over preprocessed CQI points and the filtering assignment.

Every node owns one point (the lower median of its cell along the split
dimension) plus the tight bounding box of all points below it, so a node
with ``start + 1 == end`` is a leaf. The filtering pass pushes a candidate
center list down the tree and drops centers that cannot be nearest to any
point of a cell; once a single candidate survives, the whole subtree is
assigned at once.
"""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np


@dataclass(frozen=True)
class KnTree:
    points: np.ndarray      # (U, N) original order
    perm: np.ndarray        # node ranges index into this permutation
    start: np.ndarray
    end: np.ndarray
    point: np.ndarray       # index into ``points`` of the node's own point
    dim: np.ndarray
    left: np.ndarray        # child node ids, -1 when absent
    right: np.ndarray
    lo: np.ndarray          # (nodes, N) bounding boxes
    hi: np.ndarray
    depth: int

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def n_dims(self) -> int:
        return self.points.shape[1]

    def is_leaf(self, node: int) -> bool:
        return self.end[node] - self.start[node] == 1

    def split_value(self, node: int) -> float:
        return float(self.points[self.point[node], self.dim[node]])


def build(points) -> KnTree:
    """Balanced median-split tree; split dimensions cycle 0, 1, ..., N-1, 0, ...

    Coordinate ties are broken by the original input order (stable sort) and
    even-sized cells split at the lower median.
    """
    pts = np.ascontiguousarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[0] == 0:
        raise ValueError("points must be a non-empty (U, N) array")
    u, n = pts.shape
    perm = np.arange(u)
    start = np.empty(u, np.int64)
    end = np.empty(u, np.int64)
    point = np.empty(u, np.int64)
    dim = np.empty(u, np.int64)
    left = np.full(u, -1, np.int64)
    right = np.full(u, -1, np.int64)
    lo = np.empty((u, n))
    hi = np.empty((u, n))

    next_id = 1
    max_depth = 0
    stack = [(0, 0, u, 0)]          # (node id, start, end, depth)
    while stack:
        node, s, e, d = stack.pop()
        max_depth = max(max_depth, d + 1)
        axis = d % n
        idx = perm[s:e]
        order = np.argsort(pts[idx, axis], kind="stable")
        perm[s:e] = idx[order]
        cell = pts[perm[s:e]]
        lo[node] = cell.min(axis=0)
        hi[node] = cell.max(axis=0)
        mid = s + (e - s - 1) // 2
        start[node], end[node], point[node], dim[node] = s, e, perm[mid], axis
        if mid > s:
            left[node] = next_id
            stack.append((next_id, s, mid, d + 1))
            next_id += 1
        if e > mid + 1:
            right[node] = next_id
            stack.append((next_id, mid + 1, e, d + 1))
            next_id += 1
    return KnTree(pts, perm, start, end, point, dim, left, right, lo, hi, max_depth)


def cell_vertex(lo, hi, c_star, c) -> np.ndarray:
    """Corner of the box furthest along the direction from ``c_star`` to ``c``."""
    return np.where(np.asarray(c) > np.asarray(c_star), hi, lo)


def candidate_prune(lo, hi, c_star, c) -> bool:
    """True when center ``c`` can be dropped in favour of ``c_star`` for this cell.

    ``c`` is dropped when the cell vertex lying furthest toward ``c`` is still
    no closer to ``c`` than to ``c_star``; the whole box then lies on
    ``c_star``'s side of the bisecting hyperplane.
    """
    v = cell_vertex(lo, hi, c_star, c)
    d_c = float(np.sum((np.asarray(c, float) - v) ** 2))
    d_star = float(np.sum((np.asarray(c_star, float) - v) ** 2))
    return d_c >= d_star


@numba.njit(cache=True)
def _sqdist(a, b):
    acc = 0.0
    for j in range(a.shape[0]):
        diff = a[j] - b[j]
        acc += diff * diff
    return acc


@numba.njit(cache=True)
def _nearest_among(p, centers, cand, ncand):
    best = cand[0]
    best_d = _sqdist(p, centers[best])
    for i in range(1, ncand):
        c = cand[i]
        d = _sqdist(p, centers[c])
        if d < best_d:
            best_d = d
            best = c
    return best


@numba.njit(cache=True)
def _filter(points, perm, start, end, point, left, right, lo, hi, depth, centers, labels,
            bucket):
    k = centers.shape[0]
    n = points.shape[1]
    slots = 2 * depth + 4
    cand = np.empty((slots, k), np.int64)
    ncand = np.empty(slots, np.int64)
    node_of = np.empty(slots, np.int64)
    tmp = np.empty(k, np.int64)
    mid = np.empty(n)
    vert = np.empty(n)
    for i in range(k):
        cand[0, i] = i
    ncand[0] = k
    node_of[0] = 0
    top = 1
    visited = 0
    while top > 0:
        top -= 1
        node = node_of[top]
        nc = ncand[top]
        visited += 1
        s = start[node]
        e = end[node]
        if e - s <= bucket or nc == 1:
            for i in range(s, e):
                labels[perm[i]] = _nearest_among(points[perm[i]], centers, cand[top], nc)
            continue
        # c*: candidate nearest the cell midpoint (lowest index on ties)
        for j in range(n):
            mid[j] = 0.5 * (lo[node, j] + hi[node, j])
        star = _nearest_among(mid, centers, cand[top], nc)
        m = 0
        for i in range(nc):
            c = cand[top, i]
            if c == star:
                tmp[m] = c
                m += 1
                continue
            for j in range(n):
                vert[j] = hi[node, j] if centers[c, j] > centers[star, j] else lo[node, j]
            d_c = _sqdist(vert, centers[c])
            d_s = _sqdist(vert, centers[star])
            # keep near-ties: a dropped center must be beaten by a clear margin
            if d_c > d_s * (1.0 + 1e-12) + 1e-300:
                continue
            tmp[m] = c
            m += 1
        if m == 1:
            for i in range(s, e):
                labels[perm[i]] = star
            continue
        labels[point[node]] = _nearest_among(points[point[node]], centers, tmp, m)
        for child in (left[node], right[node]):
            if child >= 0:
                for i in range(m):
                    cand[top, i] = tmp[i]
                ncand[top] = m
                node_of[top] = child
                top += 1
    return visited


def filter_assign(tree: KnTree, centers, return_visited: bool = False, bucket: int = 32):
    """Nearest-center label of every point (ties go to the lower center index).

    Cells holding at most ``bucket`` points are scanned directly against their
    surviving candidates instead of being split further.

    Returns ``(labels, neighborhoods)`` where ``neighborhoods[k]`` holds the
    indices of the points assigned to center ``k``.
    """
    centers = np.ascontiguousarray(centers, dtype=float)
    if centers.ndim != 2 or centers.shape[0] < 1 or centers.shape[1] != tree.n_dims:
        raise ValueError("centers must be a (K, N) array matching the tree dimension")
    labels = np.empty(tree.size, np.int64)
    visited = _filter(tree.points, tree.perm, tree.start, tree.end, tree.point,
                      tree.left, tree.right, tree.lo, tree.hi, tree.depth, centers, labels,
                      max(int(bucket), 1))
    hoods = neighborhoods(labels, centers.shape[0])
    if return_visited:
        return labels, hoods, int(visited)
    return labels, hoods


def neighborhoods(labels, k: int) -> list:
    order = np.argsort(labels, kind="stable")
    bounds = np.searchsorted(labels[order], np.arange(k + 1))
    return [order[bounds[i]:bounds[i + 1]] for i in range(k)]


def nearest_neighbor(tree: KnTree, query) -> int:
    """Index of the tree point closest to ``query`` (lowest index on ties)."""
    q = np.asarray(query, dtype=float)
    best = [-1, np.inf]

    def visit(node):
        if node < 0:
            return
        # squared distance from q to the node's box
        gap = np.maximum(tree.lo[node] - q, 0.0) + np.maximum(q - tree.hi[node], 0.0)
        if float(np.sum(gap * gap)) > best[1] * (1.0 + 1e-12):
            return
        p = tree.point[node]
        d = float(np.sum((tree.points[p] - q) ** 2))
        if d < best[1] or (d == best[1] and p < best[0]):
            best[0], best[1] = p, d
        axis = tree.dim[node]
        first, second = tree.left[node], tree.right[node]
        if q[axis] > tree.points[p, axis]:
            first, second = second, first
        visit(first)
        visit(second)

    visit(0)
    return int(best[0])
