"""Exact discrete optimal transport.

The transportation problem is solved with the primal network simplex on the
bipartite supply/demand graph.  A basis is a spanning tree with ``m + n - 1``
cells; Bland's rule picks entering and leaving cells, which rules out cycling
on degenerate instances without perturbing costs.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import BadExponent, NoConvergence, ShapeMismatch, ValidationError

MEASURE_TOL = 1e-12
FEAS_TOL = 1e-9


@dataclass(frozen=True)
class TransportPlan:
    plan: np.ndarray
    value: float
    iterations: int = 0

    @property
    def support(self) -> int:
        return int(np.count_nonzero(self.plan > 0))


def as_measure(w, name: str = "measure") -> np.ndarray:
    w = np.asarray(w, dtype=float).reshape(-1)
    if w.size == 0:
        raise ValidationError(f"{name} has no atoms")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise ValidationError(f"{name} weights must be finite and nonnegative")
    if abs(w.sum() - 1.0) > MEASURE_TOL:
        raise ValidationError(f"{name} weights sum to {w.sum():.15g}, not 1")
    return w


def as_cost(c) -> np.ndarray:
    c = np.asarray(c, dtype=float)
    if c.ndim != 2:
        raise ShapeMismatch(f"cost must be a matrix, got shape {c.shape}")
    if not np.all(np.isfinite(c)) or np.any(c < 0):
        raise ValidationError("cost entries must be finite and nonnegative")
    return c


def _initial_basis(a: np.ndarray, b: np.ndarray):
    """North-west corner rule; always returns exactly m + n - 1 basic cells."""
    m, n = a.size, b.size
    a, b = a.copy(), b.copy()
    flow = np.zeros((m, n))
    basis = []
    i = j = 0
    while i < m and j < n:
        x = min(a[i], b[j])
        flow[i, j] = x
        basis.append((i, j))
        a[i] -= x
        b[j] -= x
        if i == m - 1:
            j += 1
        elif j == n - 1:
            i += 1
        elif a[i] <= b[j]:
            i += 1
        else:
            j += 1
    assert len(basis) == m + n - 1
    return flow, basis


def _tree_adjacency(basis, m, n):
    adj = [[] for _ in range(m + n)]
    for i, j in basis:
        adj[i].append(m + j)
        adj[m + j].append(i)
    return adj


def _potentials(cost, basis, m, n):
    u = np.full(m, np.nan)
    v = np.full(n, np.nan)
    adj = _tree_adjacency(basis, m, n)
    u[0] = 0.0
    queue = deque([0])
    while queue:
        node = queue.popleft()
        for nb in adj[node]:
            if node < m:
                j = nb - m
                if np.isnan(v[j]):
                    v[j] = cost[node, j] - u[node]
                    queue.append(nb)
            else:
                i = nb
                if np.isnan(u[i]):
                    u[i] = cost[i, node - m] - v[node - m]
                    queue.append(nb)
    return u, v


def _tree_path(basis, m, n, src, dst):
    adj = _tree_adjacency(basis, m, n)
    parent = {src: None}
    queue = deque([src])
    while queue:
        node = queue.popleft()
        if node == dst:
            break
        for nb in adj[node]:
            if nb not in parent:
                parent[nb] = node
                queue.append(nb)
    path = [dst]
    while path[-1] != src:
        path.append(parent[path[-1]])
    return path[::-1]


def _network_simplex(cost, a, b, max_iter):
    m, n = cost.shape
    flow, basis = _initial_basis(a, b)
    in_basis = np.zeros((m, n), dtype=bool)
    for cell in basis:
        in_basis[cell] = True
    eps = 1e-12 * max(1.0, float(np.max(cost)))

    for it in range(max_iter):
        u, v = _potentials(cost, basis, m, n)
        reduced = cost - u[:, None] - v[None, :]
        reduced[in_basis] = 0.0
        candidates = np.flatnonzero(reduced.ravel() < -eps)
        if candidates.size == 0:
            return flow, it
        ei, ej = divmod(int(candidates[0]), n)  # Bland: lowest index enters

        path = _tree_path(basis, m, n, ei, m + ej)
        edges = []
        for x, y in zip(path[:-1], path[1:]):
            edges.append((x, y - m) if x < m else (y, x - m))
        # walking back from column ej, signs alternate starting with "-"
        minus = edges[::-1][0::2]
        theta = min(flow[c] for c in minus)
        leaving = min((c for c in minus if flow[c] <= theta), key=lambda c: c[0] * n + c[1])
        plus = edges[::-1][1::2]
        for c in minus:
            flow[c] -= theta
        for c in plus:
            flow[c] += theta
        flow[ei, ej] += theta
        flow[leaving] = 0.0
        basis.remove(leaving)
        in_basis[leaving] = False
        basis.append((ei, ej))
        in_basis[ei, ej] = True
    raise NoConvergence(f"network simplex exceeded {max_iter} pivots")


def kantorovich_lp(cost, mu, nu, max_iter: int | None = None) -> TransportPlan:
    """Optimal coupling of ``mu`` and ``nu`` for the given cost matrix.

    Zero-weight atoms are dropped before solving and restored as zero rows or
    columns.  The returned plan is a vertex of the transportation polytope.
    """
    c = as_cost(cost)
    mu = as_measure(mu, "mu")
    nu = as_measure(nu, "nu")
    if c.shape != (mu.size, nu.size):
        raise ShapeMismatch(f"cost shape {c.shape} does not match measures ({mu.size}, {nu.size})")
    rows = np.flatnonzero(mu > 0)
    cols = np.flatnonzero(nu > 0)
    sub = c[np.ix_(rows, cols)]
    a = mu[rows] / mu[rows].sum()
    b = nu[cols] / nu[cols].sum()
    if max_iter is None:
        max_iter = 50 * (a.size + b.size) ** 2 + 100
    flow, iters = _network_simplex(sub, a, b, max_iter)
    flow = np.clip(flow, 0.0, None)
    plan = np.zeros(c.shape)
    plan[np.ix_(rows, cols)] = flow
    return TransportPlan(plan=plan, value=float(np.sum(plan * c)), iterations=iters)


def check_metric_sample(points: Sequence, metric: Callable, samples: int = 20,
                        seed: int = 0, tol: float = 1e-12) -> None:
    rng = np.random.default_rng(seed)
    k = len(points)
    for _ in range(min(samples, k * k)):
        i, j = rng.integers(k, size=2)
        dij, dji = metric(points[i], points[j]), metric(points[j], points[i])
        if dij < -tol or abs(dij - dji) > tol or abs(metric(points[i], points[i])) > tol:
            raise ValidationError("metric fails symmetry/nonnegativity/zero-diagonal sampling")


def distance_matrix(points: Sequence, metric: Callable) -> np.ndarray:
    k = len(points)
    out = np.zeros((k, k))
    for i in range(k):
        for j in range(i + 1, k):
            out[i, j] = out[j, i] = metric(points[i], points[j])
    return out


def wasserstein_p(points: Sequence, metric: Callable, mu, nu, p: float = 1.0) -> float:
    """Wasserstein-p distance between two measures on the same finite atom list."""
    if not p >= 1:
        raise BadExponent(f"p must be >= 1, got {p}")
    check_metric_sample(points, metric)
    dist = distance_matrix(points, metric)
    res = kantorovich_lp(dist ** p, mu, nu)
    return float(max(res.value, 0.0) ** (1.0 / p))
