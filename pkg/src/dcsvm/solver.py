"""Greedy coordinate descent for the bias-free SVM dual.

    min_a  f(a) = 1/2 a'Qa - e'a   s.t.  0 <= a_i <= C,   Q_ij = y_i y_j K(x_i, x_j)

Without the bias term there is no equality constraint, so each step updates
the single coordinate with the largest KKT violation by exact minimisation
along that coordinate.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .kernel import (DEFAULT_CACHE_BYTES, KernelCache, KernelRows, KernelSpec, kernel_diagonal,
                     kernel_matrix)

log = logging.getLogger(__name__)

_TINY_CURVATURE = 1e-12
_BLOCK = 1024


@dataclass
class SolverConfig:
    C: float
    tol: float = 1e-3
    max_iter: int = 10_000_000
    shrinking: bool = True
    cache_bytes: int = DEFAULT_CACHE_BYTES
    debug: bool = False

    def __post_init__(self):
        if not self.C > 0:
            raise ValueError(f"C must be > 0, got {self.C}")
        if not self.tol > 0:
            raise ValueError(f"tol must be > 0, got {self.tol}")


@dataclass
class DualSolution:
    alpha: np.ndarray
    objective: float
    kkt_violation: float
    iterations: int
    converged: bool = True
    gradient: np.ndarray | None = field(default=None, repr=False)
    initial_objective: float = float("nan")
    initial_kkt: float = float("nan")
    shrink_events: int = 0

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.alpha > 0)


def violations(gradient: np.ndarray, alpha: np.ndarray, C: float) -> np.ndarray:
    """Per-coordinate breach of the box-constrained optimality conditions."""
    g = np.asarray(gradient, dtype=np.float64)
    a = np.asarray(alpha, dtype=np.float64)
    v = np.abs(g)
    v = np.where(a <= 0.0, np.maximum(0.0, -g), v)
    v = np.where(a >= C, np.maximum(0.0, g), v)
    return v


def kkt_violation(gradient, alpha, C: float) -> float:
    g = np.asarray(gradient, dtype=np.float64)
    if g.size == 0:
        return 0.0
    return float(violations(g, alpha, C).max())


def _view(dataset, indices):
    if indices is None:
        return dataset.X, dataset.y, dataset.sq_norms
    idx = np.asarray(indices, dtype=np.intp)
    return dataset.X[idx], dataset.y[idx], dataset.sq_norms[idx]


def gradient(dataset, spec: KernelSpec, alpha, indices=None, K: np.ndarray | None = None) -> np.ndarray:
    """Qa - e, touching only the columns with a_j > 0."""
    X, y, sq = _view(dataset, indices)
    alpha = np.asarray(alpha, dtype=np.float64)
    return _gradient(X, y, sq, spec, alpha, K)


def _gradient(X, y, sq, spec, alpha, K=None, rows: np.ndarray | None = None) -> np.ndarray:
    n = X.shape[0]
    target = np.arange(n) if rows is None else rows
    g = -np.ones(target.shape[0])
    S = np.flatnonzero(alpha > 0)
    if S.size == 0:
        return g
    w = y[S] * alpha[S]
    if K is not None:
        return g + y[target] * (K[np.ix_(target, S)] @ w)
    Xt, sqt = X[target], sq[target]
    for s in range(0, S.size, _BLOCK):
        cols = S[s:s + _BLOCK]
        Kb = kernel_matrix(spec, Xt, X[cols], sqt, sq[cols])
        g += y[target] * (Kb @ w[s:s + _BLOCK])
    return g


def objective(dataset, spec: KernelSpec, alpha, indices=None) -> float:
    """1/2 a'Qa - e'a, evaluating kernels only between coordinates with a > 0."""
    X, y, sq = _view(dataset, indices)
    alpha = np.asarray(alpha, dtype=np.float64)
    S = np.flatnonzero(alpha > 0)
    if S.size == 0:
        return 0.0
    w = y[S] * alpha[S]
    XS, sqS = X[S], sq[S]
    quad = 0.0
    for s in range(0, S.size, _BLOCK):
        Kb = kernel_matrix(spec, XS[s:s + _BLOCK], XS, sqS[s:s + _BLOCK], sqS)
        quad += float(w[s:s + _BLOCK] @ (Kb @ w))
    return 0.5 * quad - float(alpha.sum())


class _QSource:
    """Q rows for one view, from a precomputed kernel matrix or a cached row server."""

    def __init__(self, X, y, sq, spec, cache_bytes, K=None):
        self.X, self.y, self.sq, self.spec = X, y, sq, spec
        self.K = K
        self.rows = None if K is not None else KernelRows(X, spec, KernelCache(cache_bytes), sq=sq)

    def row(self, i: int, active: np.ndarray | None, generation: int) -> np.ndarray:
        if self.K is not None:
            k = self.K[i] if active is None else self.K[i, active]
        else:
            k = self.rows.row(i, active, generation)
        ya = self.y if active is None else self.y[active]
        return self.y[i] * ya * k

    def block(self, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
        if self.K is not None:
            k = self.K[np.ix_(rows, cols)]
        else:
            k = kernel_matrix(self.spec, self.X[rows], self.X[cols], self.sq[rows], self.sq[cols])
        return self.y[rows][:, None] * self.y[cols][None, :] * k


def solve_dual(dataset, spec: KernelSpec, config: SolverConfig, alpha_init=None, indices=None,
               K: np.ndarray | None = None,
               callback: Callable[[int, int, float, float, float], None] | None = None) -> DualSolution:
    """Minimise the dual over the view ``dataset[indices]``.

    ``alpha_init`` must be feasible and sized to the view; it defaults to zero.
    ``K`` optionally supplies the view's dense kernel matrix. ``callback`` is
    called after every update as ``callback(t, i, old, new, objective)``.
    """
    X, y, sq = _view(dataset, indices)
    n = X.shape[0]
    if n == 0:
        raise ValueError("empty dataset view")
    C = float(config.C)
    if alpha_init is None:
        alpha = np.zeros(n)
    else:
        alpha = np.array(alpha_init, dtype=np.float64)
        if alpha.shape != (n,):
            raise ValueError(f"alpha_init has shape {alpha.shape}, expected ({n},)")
        if np.any(alpha < 0) or np.any(alpha > C) or not np.all(np.isfinite(alpha)):
            raise ValueError("alpha_init is not feasible (need 0 <= alpha <= C)")
    if K is not None:
        K = np.asarray(K, dtype=np.float64)
        if K.shape != (n, n):
            raise ValueError(f"kernel matrix has shape {K.shape}, expected ({n}, {n})")
        diag = np.diag(K).copy()
    else:
        diag = kernel_diagonal(spec, X, sq)

    src = _QSource(X, y, sq, spec, config.cache_bytes, K)
    g = _gradient(X, y, sq, spec, alpha, K)
    f = 0.5 * float(alpha @ (g - 1.0))
    initial_objective = f
    initial_kkt = kkt_violation(g, alpha, C)

    active = np.arange(n)
    full = True
    generation = 0
    next_generation = 1
    snapshots: list[tuple[np.ndarray, np.ndarray]] = []
    zero_runs = np.zeros(n, dtype=np.int64)
    interval = max(1, min(n, 1000))
    shrink_events = 0
    converged = False
    fresh_checked = False
    t = 0

    def unshrink():
        nonlocal active, full, generation
        # Bring stale gradients up to date: each removed group missed the
        # updates made after its snapshot.
        for removed, alpha_then in snapshots:
            delta = alpha - alpha_then
            moved = np.flatnonzero(delta)
            if moved.size:
                g[removed] += src.block(removed, moved) @ delta[moved]
        snapshots.clear()
        active = np.arange(n)
        full = True
        generation = 0
        zero_runs[:] = 0

    while True:
        ga = g[active]
        aa = alpha[active]
        viol = violations(ga, aa, C)
        p = int(np.argmax(viol))
        vmax = float(viol[p])
        if vmax <= config.tol:
            if not full:
                unshrink()
                continue
            if not fresh_checked:
                # confirm against a recomputed gradient so rounding drift cannot fake convergence
                g = _gradient(X, y, sq, spec, alpha, K)
                f = 0.5 * float(alpha @ (g - 1.0))
                fresh_checked = True
                continue
            converged = True
            break
        fresh_checked = False
        if t >= config.max_iter:
            break
        i = int(active[p])
        gi = float(g[i])
        old = float(alpha[i])
        qii = float(diag[i])
        if qii > _TINY_CURVATURE:
            new = min(max(old - gi / qii, 0.0), C)
        else:
            new = C if gi < 0 else 0.0
        delta = new - old
        if delta == 0.0:
            log.warning("coordinate %d stalled with violation %.3g; stopping", i, vmax)
            break
        row = src.row(i, None if full else active, generation)
        if full:
            g += delta * row
        else:
            g[active] += delta * row
        f += delta * gi + 0.5 * qii * delta * delta
        alpha[i] = new
        t += 1
        if callback is not None:
            callback(t, i, old, new, f)

        if config.debug and full and t % 1000 == 0:
            fresh = _gradient(X, y, sq, spec, alpha, K)
            drift = float(np.max(np.abs(fresh - g)))
            if drift > 1e-6:
                raise AssertionError(f"gradient drift {drift:.3g} after {t} updates")

        if config.shrinking and t % interval == 0:
            ga = g[active]
            aa = alpha[active]
            at_bound = (aa <= 0.0) | (aa >= C)
            quiet = at_bound & (violations(ga, aa, C) == 0.0)
            zero_runs[active] = np.where(quiet, zero_runs[active] + 1, 0)
            drop = quiet & (zero_runs[active] >= 2)
            if drop.any() and not drop.all():
                snapshots.append((active[drop].copy(), alpha.copy()))
                active = active[~drop]
                full = False
                generation = next_generation
                next_generation += 1
                shrink_events += 1

    if not full:
        unshrink()
    kkt = kkt_violation(g, alpha, C)
    if not converged:
        log.info("solver stopped after %d updates with KKT violation %.3g (tol %.3g)", t, kkt, config.tol)
    return DualSolution(alpha=alpha, objective=0.5 * float(alpha @ (g - 1.0)), kkt_violation=kkt,
                        iterations=t, converged=converged, gradient=g,
                        initial_objective=initial_objective, initial_kkt=initial_kkt,
                        shrink_events=shrink_events)


def dense_kernel(dataset, spec: KernelSpec, indices=None) -> np.ndarray:
    X, _, sq = _view(dataset, indices)
    return kernel_matrix(spec, X, X, sq, sq)
