"""Multilevel divide-and-conquer training, screening and prediction."""

from __future__ import annotations

import csv
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .clustering import (GuardError, KernelCenters, Partition, kernel_kmeans, mass_from_matrix,
                         nearest_centers)
from .data_io import EarlyBlock, ModelFile, SparseDataset
from .kernel import KernelSpec, kernel_matrix, squared_norms
from .solver import DualSolution, SolverConfig, _gradient, kkt_violation, solve_dual

log = logging.getLogger(__name__)

SCREEN_GUARD = 2000
TRACE_HEADER = ("level", "clusters", "time_s", "objective", "kkt_violation", "sv_count")
_CHUNK = 1024


@dataclass
class DCConfig:
    """Divide-and-conquer parameters. Defaults give 5 levels of 1, 4, 16, 64, 256 clusters."""

    solver: SolverConfig
    k: int = 4
    l_max: int = 4
    m: int = 1000
    early_stop_level: int | None = None
    seed: int = 0
    workers: int = 1
    kmeans_iter: int = 100
    min_cluster_frac: float = 0.1
    track_levels: bool = True

    def __post_init__(self):
        if self.k < 2:
            raise ValueError(f"k must be >= 2, got {self.k}")
        if self.l_max < 0:
            raise ValueError(f"l_max must be >= 0, got {self.l_max}")
        if self.m < 1:
            raise ValueError(f"m must be >= 1, got {self.m}")
        if self.early_stop_level is not None and not 1 <= self.early_stop_level <= self.l_max:
            raise ValueError(f"early_stop_level must lie in [1, {self.l_max}], got {self.early_stop_level}")

    @staticmethod
    def early_level_for(k: int, clusters: int = 64) -> int:
        """Level whose cluster count is closest to ``clusters`` (3 for k=4)."""
        return max(1, round(math.log(clusters) / math.log(k)))


@dataclass
class LevelState:
    level: int
    partition: Partition
    alpha: np.ndarray
    centers: KernelCenters
    center_cluster: np.ndarray
    solutions: list
    objective: float = float("nan")
    kkt_violation: float = float("nan")
    time_s: float = 0.0

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.alpha > 0)


@dataclass
class TraceRow:
    level: object
    clusters: int
    time_s: float
    objective: float
    kkt_violation: float
    sv_count: int


@dataclass
class DCModel:
    model: ModelFile
    alpha: np.ndarray
    solution: DualSolution | None
    levels: list = field(default_factory=list)
    trace: list = field(default_factory=list)
    stopped_level: int | None = None
    train_time: float = 0.0

    @property
    def early(self) -> bool:
        return self.model.early is not None

    def predict(self, X, early: bool | None = None):
        if early is None:
            early = self.early
        return predict_early(self.model, X) if early else predict_exact(self.model, X)


class Stopwatch:
    """Wall clock that can be paused around diagnostic work."""

    def __init__(self):
        self.start = time.perf_counter()
        self.paused = 0.0

    def now(self) -> float:
        return time.perf_counter() - self.start - self.paused

    def pause(self):
        t0 = time.perf_counter()
        return lambda: setattr(self, "paused", self.paused + time.perf_counter() - t0)


def concat_solutions(partition: Partition, solutions) -> np.ndarray:
    """Scatter per-cluster solutions back into one vector over all samples."""
    if len(solutions) != partition.k:
        raise RuntimeError(f"{len(solutions)} subproblem solutions for {partition.k} clusters")
    alpha = np.zeros(partition.n)
    for c, members in enumerate(partition.members):
        sol = solutions[c]
        if sol is None:
            raise RuntimeError(f"missing solution for cluster {c}")
        a = sol.alpha if isinstance(sol, DualSolution) else np.asarray(sol, dtype=np.float64)
        if a.shape[0] != members.shape[0]:
            raise RuntimeError(f"cluster {c}: solution length {a.shape[0]} != {members.shape[0]} members")
        alpha[members] = a
    return alpha


def masked_gradient(dataset, spec: KernelSpec, partition: Partition, alpha) -> np.ndarray:
    """Gradient of the dual with the cross-cluster kernel entries zeroed."""
    g = np.empty(dataset.n)
    X, y, sq = dataset.X, dataset.y, dataset.sq_norms
    for members in partition.members:
        g[members] = _gradient(X[members], y[members], sq[members], spec, alpha[members])
    return g


def masked_kkt_violation(dataset, spec: KernelSpec, partition: Partition, alpha, C: float) -> float:
    return kkt_violation(masked_gradient(dataset, spec, partition, alpha), alpha, C)


def _merge_small(centers: KernelCenters, raw: np.ndarray, dist: np.ndarray, min_size: int = 2):
    """Fold clusters under ``min_size`` points into their nearest larger cluster.

    Returns the compacted partition and, for every center, the cluster a query
    landing on that center belongs to.
    """
    k = centers.k
    counts = np.bincount(raw, minlength=k)
    big = counts >= min_size
    labels = raw.copy()
    if big.any() and not big.all():
        small_pts = np.flatnonzero(~big[raw])
        d = dist[small_pts].copy()
        d[:, ~big] = np.inf
        labels[small_pts] = np.argmin(d, axis=1)
    partition, _ = Partition.from_labels(labels)
    center_cluster = np.empty(k, dtype=np.int64)
    for c in range(k):
        pts = np.flatnonzero(raw == c)
        if pts.size:
            center_cluster[c] = partition.assignment[pts[0]]
        else:
            # No data point chose this center: follow its first sampled member.
            first = centers.sample_indices[np.flatnonzero(centers.labels == c)[0]]
            center_cluster[c] = partition.assignment[first]
    return partition, center_cluster


def _check_trainable(dataset: SparseDataset, config: DCConfig):
    dataset.validate()
    if np.unique(dataset.y).shape[0] < 2:
        raise ValueError("training data must contain both classes")
    if config.k ** config.l_max > dataset.n:
        raise ValueError(f"k^l_max = {config.k ** config.l_max} exceeds n = {dataset.n}")


def _solve_clusters(dataset, spec, solver_cfg, partition, warm, workers):
    def one(members):
        return solve_dual(dataset, spec, solver_cfg, alpha_init=warm[members], indices=members)

    members = partition.members
    if workers > 1 and len(members) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(one, members))
    return [one(m) for m in members]


def _full_objective(dataset, spec, alpha, C):
    g = _gradient(dataset.X, dataset.y, dataset.sq_norms, spec, alpha)
    return 0.5 * float(alpha @ (g - 1.0)), kkt_violation(g, alpha, C)


def train(dataset: SparseDataset, spec: KernelSpec, config: DCConfig,
          callback: Callable[[int, int, float, float, float], None] | None = None,
          on_stage: Callable[[TraceRow, np.ndarray], None] | None = None,
          clock: Stopwatch | None = None) -> DCModel:
    """Run the multilevel divide-and-conquer solver.

    ``callback`` is forwarded to the final global solve. ``on_stage`` sees
    every trace row together with the current dual vector; time spent in it
    and in per-level objective evaluation is excluded from ``clock``.
    """
    _check_trainable(dataset, config)
    C = config.solver.C
    n = dataset.n
    clock = clock if clock is not None else Stopwatch()
    seeds = np.random.SeedSequence(config.seed).spawn(config.l_max + 1)
    trace: list[TraceRow] = []
    levels: list[LevelState] = []

    def emit(row: TraceRow, alpha):
        trace.append(row)
        if on_stage is not None:
            resume = clock.pause()
            on_stage(row, alpha)
            resume()

    alpha_bar = np.zeros(n)
    for level in range(config.l_max, 0, -1):
        kl = config.k ** level
        rng = np.random.default_rng(seeds[level])
        pool = np.arange(n)
        if level < config.l_max:
            sv = np.flatnonzero(alpha_bar > 0)
            if sv.shape[0] >= kl:
                pool = sv
        size = min(pool.shape[0], max(config.m, kl))
        sample = np.sort(rng.choice(pool, size=size, replace=False))
        centers = kernel_kmeans(dataset, sample, spec, kl, max_iter=config.kmeans_iter,
                                seed=int(rng.integers(2**31)), min_cluster_frac=config.min_cluster_frac)
        raw, dist = nearest_centers(spec, dataset.X, centers, dataset.sq_norms, return_dist=True)
        partition, center_cluster = _merge_small(centers, raw, dist)
        solutions = _solve_clusters(dataset, spec, config.solver, partition, alpha_bar, config.workers)
        alpha_bar = concat_solutions(partition, solutions)
        state = LevelState(level, partition, alpha_bar, centers, center_cluster,
                           [(s.iterations, s.objective, s.converged) for s in solutions],
                           time_s=clock.now())
        if config.track_levels:
            resume = clock.pause()
            state.objective, state.kkt_violation = _full_objective(dataset, spec, alpha_bar, C)
            resume()
        levels.append(state)
        log.info("level %d: %d clusters, %d SVs, %.2fs", level, partition.k, state.support.shape[0], state.time_s)
        emit(TraceRow(level, partition.k, state.time_s, state.objective, state.kkt_violation,
                      int(state.support.shape[0])), alpha_bar)
        if config.early_stop_level == level:
            model = early_model(dataset, spec, C, alpha_bar, partition, centers, center_cluster, level)
            return DCModel(model, alpha_bar, None, levels, trace, stopped_level=level, train_time=clock.now())

    alpha0 = alpha_bar.copy()
    if config.l_max > 0:
        S1 = np.flatnonzero(alpha_bar != 0)
        if S1.size:
            refined = solve_dual(dataset, spec, config.solver, alpha_init=alpha_bar[S1], indices=S1)
            alpha0 = np.zeros(n)
            alpha0[S1] = refined.alpha
        refine_time = clock.now()
    final = solve_dual(dataset, spec, config.solver, alpha_init=alpha0, callback=callback)
    if config.l_max > 0:
        emit(TraceRow("refine", 1, refine_time, final.initial_objective, final.initial_kkt,
                      int(np.count_nonzero(alpha0 > 0))), alpha0)
    emit(TraceRow("final", 1, clock.now(), final.objective, final.kkt_violation,
                  int(final.support.shape[0])), final.alpha)
    return DCModel(exact_model(dataset, spec, C, final.alpha), final.alpha, final, levels, trace,
                   train_time=clock.now())


def exact_model(dataset, spec: KernelSpec, C: float, alpha) -> ModelFile:
    S = np.flatnonzero(alpha > 0)
    return ModelFile(spec, C, dataset.X[S], dataset.y[S] * alpha[S])


def early_model(dataset, spec: KernelSpec, C: float, alpha, partition: Partition,
                centers: KernelCenters, center_cluster, level: int) -> ModelFile:
    """Package a level solution with its centers for masked-kernel prediction."""
    model = exact_model(dataset, spec, C, alpha)
    S = np.flatnonzero(alpha > 0)
    block = EarlyBlock(level=level, n_clusters=partition.k, centers=centers.X,
                       center_of_sample=centers.labels.astype(np.int64),
                       center_cluster=np.asarray(center_cluster, dtype=np.int64),
                       sv_cluster=partition.assignment[S].astype(np.int64),
                       _self_terms=centers.self_terms)
    model.early = block
    return model


def _as_csr(X) -> sp.csr_matrix:
    if isinstance(X, SparseDataset):
        return X.X
    return sp.csr_matrix(X)


def _labels(dec: np.ndarray) -> np.ndarray:
    return np.where(dec >= 0, 1, -1)


def decision_exact(model: ModelFile, X) -> np.ndarray:
    X = _as_csr(X)
    out = np.zeros(X.shape[0])
    if model.n_sv == 0 or X.shape[0] == 0:
        return out
    sv = model.support_vectors
    sv_sq = squared_norms(sv)
    for s in range(0, X.shape[0], _CHUNK):
        block = X[s:s + _CHUNK]
        Kb = kernel_matrix(model.kernel, block, sv, None, sv_sq)
        out[s:s + _CHUNK] = Kb @ model.coef
    return out


def predict_exact(model: ModelFile, X) -> tuple[np.ndarray, np.ndarray]:
    """Labels and decision values sum_i y_i a_i K(x, x_i) over all support vectors."""
    dec = decision_exact(model, X)
    return _labels(dec), dec


def query_clusters(model: ModelFile, X) -> np.ndarray:
    early = model.early
    if early is None:
        raise ValueError("model has no early-prediction block")
    X = _as_csr(X)
    centers = KernelCenters(sample_indices=np.arange(early.centers.shape[0]), labels=early.center_of_sample,
                            k=early.n_centers, X=early.centers, sq=squared_norms(early.centers),
                            self_terms=early.self_terms(model.kernel))
    return early.center_cluster[nearest_centers(model.kernel, X, centers)]


def predict_early(model: ModelFile, X) -> tuple[np.ndarray, np.ndarray]:
    """Predict with the masked kernel: only support vectors in the query's cluster count."""
    early = model.early
    if early is None:
        raise ValueError("model has no early-prediction block")
    X = _as_csr(X)
    dec = np.zeros(X.shape[0])
    if X.shape[0] == 0:
        return _labels(dec), dec
    clusters = query_clusters(model, X)
    sv = model.support_vectors
    for c in np.unique(clusters):
        q = np.flatnonzero(clusters == c)
        members = np.flatnonzero(early.sv_cluster == c)
        if members.size == 0:
            continue
        svc = sv[members]
        Kb = kernel_matrix(model.kernel, X[q], svc)
        dec[q] = Kb @ model.coef[members]
    return _labels(dec), dec


def screening_threshold(C: float, mass: float, n: int, k_max: float, sigma_n: float) -> float:
    """C*D + C*sqrt(n)*K_max*sqrt(D)/sqrt(sigma_n), finite at D = 0."""
    if mass <= 0:
        return 0.0
    if sigma_n <= 0:
        return math.inf
    return C * mass + C * math.sqrt(n) * k_max * math.sqrt(mass) / math.sqrt(sigma_n)


def screen_non_sv(dataset, partition: Partition, alpha_bar, spec: KernelSpec, C: float,
                  guard: int = SCREEN_GUARD, K: np.ndarray | None = None) -> np.ndarray:
    """Indices with zero subproblem weight that provably stay zero in the full problem."""
    n = dataset.n
    if n > guard:
        raise GuardError(f"screening needs a dense eigendecomposition; n={n} exceeds guard {guard}")
    if K is None:
        K = kernel_matrix(spec, dataset.X, dataset.X, dataset.sq_norms, dataset.sq_norms)
    alpha_bar = np.asarray(alpha_bar, dtype=np.float64)
    sigma_n = float(np.linalg.eigvalsh(K)[0])
    mass = mass_from_matrix(K, partition.assignment)
    k_max = float(np.max(np.diag(K)))
    same = partition.assignment[:, None] == partition.assignment[None, :]
    y = dataset.y
    g_masked = y * ((K * same) @ (y * alpha_bar)) - 1.0
    threshold = screening_threshold(C, mass, n, k_max, sigma_n)
    return np.flatnonzero((alpha_bar == 0) & (g_masked > threshold))


def write_trace_csv(trace, path_or_file):
    """Write ``level,clusters,time_s,objective,kkt_violation,sv_count`` rows."""
    own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
    fh = open(path_or_file, "w", newline="") if own else path_or_file
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for r in trace:
            w.writerow([r.level, r.clusters, f"{r.time_s:.6f}", "%.17g" % r.objective,
                        "%.17g" % r.kkt_violation, r.sv_count])
    finally:
        if own:
            fh.close()
