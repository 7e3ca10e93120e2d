"""Empirical checks of the divide-and-conquer approximation guarantees.

Everything here needs the exact optimum of the full problem, so inputs are
limited to desk-scale sizes (see ``BOUND_GUARD``).
"""

from __future__ import annotations

import csv
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .clustering import GuardError, Partition, assign_all, kernel_kmeans, mass_from_matrix, restricted_mass
from .dcsvm import DCConfig, Stopwatch, concat_solutions, train
from .kernel import KernelSpec, kernel_matrix
from .solver import SolverConfig, objective, solve_dual

log = logging.getLogger(__name__)

BOUND_GUARD = 10000
DENSE_LIMIT = 3000
SV_THRESHOLD = 1e-8
BOUND_HEADER = ("k", "D_pi", "bound", "gap", "refined_bound", "random_gap")
SV_HEADER = ("level", "clusters", "precision", "recall")
REL_HEADER = ("time_s", "rel_error")


@dataclass
class BoundReport:
    k: int
    mass: float
    bound: float
    gap: float
    refined_bound: float
    random_gap: float
    random_mass: float = float("nan")
    random_bound: float = float("nan")
    distance_sq: float = float("nan")
    distance_bound: float = float("nan")

    def violations(self, slack: float = 1e-9) -> list[str]:
        """Names of the sandwich inequalities that fail (empty when all hold)."""
        bad = []
        if self.gap < -slack:
            bad.append("gap >= 0")
        if self.gap > self.bound + slack:
            bad.append("gap <= bound")
        if self.refined_bound > self.bound + slack:
            bad.append("refined_bound <= bound")
        if self.gap > self.refined_bound + slack:
            bad.append("gap <= refined_bound")
        if self.distance_sq > self.distance_bound + slack:
            bad.append("distance <= distance_bound")
        if not self.random_gap <= self.random_bound + slack:
            if not math.isnan(self.random_bound):
                bad.append("random gap <= random bound")
        return bad

    def holds(self, slack: float = 1e-9) -> bool:
        return not self.violations(slack)


@dataclass
class SVReport:
    level: int
    clusters: int
    precision: float
    recall: float


def support_set(alpha, C: float, threshold: float = SV_THRESHOLD) -> np.ndarray:
    """Indices counted as support vectors: alpha_i > threshold * C."""
    return np.flatnonzero(np.asarray(alpha) > threshold * C)


def precision_recall(found, truth) -> tuple[float, float]:
    found, truth = set(np.asarray(found).tolist()), set(np.asarray(truth).tolist())
    hit = len(found & truth)
    precision = hit / len(found) if found else 1.0
    recall = hit / len(truth) if truth else 1.0
    return precision, recall


def _guard(n: int, guard: int):
    if n > guard:
        raise GuardError(f"diagnostics need the exact optimum and O(n^2) kernel sums; "
                         f"n={n} exceeds guard {guard}")


class _Problem:
    """A dataset with optional dense kernel, shared by the bound computations."""

    def __init__(self, dataset, spec: KernelSpec, C: float, tol: float):
        self.dataset, self.spec, self.C = dataset, spec, C
        self.cfg = SolverConfig(C=C, tol=tol)
        self.K = None
        if dataset.n <= DENSE_LIMIT:
            self.K = kernel_matrix(spec, dataset.X, dataset.X, dataset.sq_norms, dataset.sq_norms)

    def solve(self, indices=None):
        K = None
        if self.K is not None:
            K = self.K if indices is None else self.K[np.ix_(indices, indices)]
        return solve_dual(self.dataset, self.spec, self.cfg, indices=indices, K=K)

    def objective(self, alpha) -> float:
        if self.K is not None:
            w = self.dataset.y * alpha
            return 0.5 * float(w @ (self.K @ w)) - float(alpha.sum())
        return objective(self.dataset, self.spec, alpha)

    def mass(self, partition: Partition, index_set=None) -> float:
        if self.K is not None:
            if index_set is None:
                return mass_from_matrix(self.K, partition.assignment)
            idx = np.unique(np.asarray(index_set, dtype=np.intp))
            return mass_from_matrix(self.K[np.ix_(idx, idx)], partition.assignment[idx])
        return restricted_mass(self.dataset, partition, self.spec, index_set, guard=BOUND_GUARD)

    def split_solve(self, partition: Partition) -> np.ndarray:
        return concat_solutions(partition, [self.solve(m) for m in partition.members])

    def sigma_n(self) -> float:
        if self.K is None:
            return float("nan")
        return float(np.linalg.eigvalsh(self.K)[0])


def _distance_bound(C: float, mass: float, sigma_n: float) -> float:
    if mass == 0:
        return 0.0
    if not sigma_n > 0:
        return math.inf
    return C * C * mass / sigma_n


def bound_report(problem: _Problem, partition: Partition, alpha_star, f_star: float,
                 random_partition: Partition | None = None, sigma_n: float | None = None) -> BoundReport:
    C = problem.C
    alpha_bar = problem.split_solve(partition)
    gap = problem.objective(alpha_bar) - f_star
    mass = problem.mass(partition)
    union = np.union1d(support_set(alpha_star, C, 0.0), support_set(alpha_bar, C, 0.0))
    refined = 0.5 * C * C * problem.mass(partition, union)
    report = BoundReport(k=partition.k, mass=mass, bound=0.5 * C * C * mass, gap=gap,
                         refined_bound=refined, random_gap=float("nan"))
    if sigma_n is not None and not math.isnan(sigma_n):
        report.distance_sq = float(np.sum((alpha_star - alpha_bar) ** 2))
        report.distance_bound = _distance_bound(C, mass, sigma_n)
    if random_partition is not None:
        alpha_rand = problem.split_solve(random_partition)
        report.random_gap = problem.objective(alpha_rand) - f_star
        report.random_mass = problem.mass(random_partition)
        report.random_bound = 0.5 * C * C * report.random_mass
    return report


def random_partition(n: int, k: int, rng: np.random.Generator) -> Partition:
    """Uniform random assignment; clusters that come out empty are dropped."""
    part, _ = Partition.from_labels(rng.integers(0, k, size=n))
    return part


def bound_sweep(dataset, spec: KernelSpec, C: float, k_list, seed: int = 0, m: int = 1000,
                tol: float = 1e-10, guard: int = BOUND_GUARD, workers: int = 1) -> list[BoundReport]:
    """Gap f(alpha_bar) - f(alpha*) against C^2 D(pi) / 2 for kernel-kmeans partitions.

    Each k also gets a uniformly random partition as a baseline.
    """
    _guard(dataset.n, guard)
    problem = _Problem(dataset, spec, C, tol)
    star = problem.solve()
    f_star = problem.objective(star.alpha)
    sigma_n = problem.sigma_n()
    seeds = np.random.SeedSequence(seed).spawn(len(k_list))

    def one(job):
        k, ss = job
        rng = np.random.default_rng(ss)
        size = min(dataset.n, max(m, k))
        sample = np.sort(rng.choice(dataset.n, size=size, replace=False))
        centers = kernel_kmeans(dataset, sample, spec, k, seed=int(rng.integers(2**31)))
        part = assign_all(dataset, centers, spec)
        rand = random_partition(dataset.n, k, rng)
        report = bound_report(problem, part, star.alpha, f_star, rand, sigma_n)
        report.k = k
        return report

    jobs = list(zip(k_list, seeds))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(one, jobs))
    return [one(j) for j in jobs]


def sv_identification(dataset, spec: KernelSpec, C: float, dc_config: DCConfig,
                      ref_tol: float = 1e-8, guard: int = BOUND_GUARD) -> list[SVReport]:
    """Precision and recall of each level's support set against the exact one.

    Rows run from the deepest level up to level 1, then level 0 for the final
    global solve.
    """
    _guard(dataset.n, guard)
    ref = solve_dual(dataset, spec, replace(dc_config.solver, C=C, tol=ref_tol))
    truth = support_set(ref.alpha, C)
    cfg = replace(dc_config, solver=replace(dc_config.solver, C=C), early_stop_level=None)
    model = train(dataset, spec, cfg)
    out = []
    for state in model.levels:
        p, r = precision_recall(support_set(state.alpha, C), truth)
        out.append(SVReport(state.level, state.partition.k, p, r))
    p, r = precision_recall(support_set(model.alpha, C), truth)
    out.append(SVReport(0, 1, p, r))
    return out


def relative_error(f: float, f_star: float) -> float:
    """|f - f*| / |f*|; f* <= 0 for the dual, so absolute values keep the ratio positive."""
    if f_star == 0:
        return abs(f)
    return abs(f - f_star) / abs(f_star)


def relative_error_trace(dataset, spec: KernelSpec, C: float, dc_config: DCConfig,
                         ref_tol: float = 1e-8, every: int = 200, f_star: float | None = None,
                         guard: int = BOUND_GUARD) -> list[tuple[float, float]]:
    """(seconds, relative error) at each level boundary and every ``every`` final-solve updates."""
    _guard(dataset.n, guard)
    if f_star is None:
        f_star = solve_dual(dataset, spec, replace(dc_config.solver, C=C, tol=ref_tol)).objective
    cfg = replace(dc_config, solver=replace(dc_config.solver, C=C), early_stop_level=None)
    clock = Stopwatch()
    points: list[tuple[float, float]] = []

    def on_stage(row, alpha):
        if row.level == "final" or math.isnan(row.objective):
            return
        points.append((row.time_s, relative_error(row.objective, f_star)))

    def on_update(t, i, old, new, f):
        if t % every == 0:
            points.append((clock.now(), relative_error(f, f_star)))

    model = train(dataset, spec, cfg, callback=on_update, on_stage=on_stage, clock=clock)
    final = model.trace[-1]
    points.append((final.time_s, relative_error(final.objective, f_star)))
    points.sort(key=lambda p: p[0])
    return points


def cold_start_trace(dataset, spec: KernelSpec, config: SolverConfig, f_star: float,
                     every: int = 200) -> list[tuple[float, float]]:
    """The same trace for a direct solve from alpha = 0."""
    t0 = time.perf_counter()
    points = [(0.0, relative_error(0.0, f_star))]

    def on_update(t, i, old, new, f):
        if t % every == 0:
            points.append((time.perf_counter() - t0, relative_error(f, f_star)))

    sol = solve_dual(dataset, spec, config, callback=on_update)
    points.append((time.perf_counter() - t0, relative_error(sol.objective, f_star)))
    return points


def time_to_reach(trace, target: float) -> float:
    for t, err in trace:
        if err <= target:
            return t
    return math.inf


def _writer(path_or_file):
    own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
    fh = open(path_or_file, "w", newline="") if own else path_or_file
    return fh, own, csv.writer(fh, lineterminator="\n")


def _g(v: float) -> str:
    return "%.17g" % v


def write_bound_csv(reports, path_or_file):
    fh, own, w = _writer(path_or_file)
    try:
        w.writerow(BOUND_HEADER)
        for r in reports:
            w.writerow([r.k, _g(r.mass), _g(r.bound), _g(r.gap), _g(r.refined_bound), _g(r.random_gap)])
    finally:
        if own:
            fh.close()


def write_sv_csv(reports, path_or_file):
    fh, own, w = _writer(path_or_file)
    try:
        w.writerow(SV_HEADER)
        for r in reports:
            w.writerow([r.level, r.clusters, _g(r.precision), _g(r.recall)])
    finally:
        if own:
            fh.close()


def write_rel_error_csv(points, path_or_file):
    fh, own, w = _writer(path_or_file)
    try:
        w.writerow(REL_HEADER)
        for t, err in points:
            w.writerow([f"{t:.6f}", _g(err)])
    finally:
        if own:
            fh.close()
