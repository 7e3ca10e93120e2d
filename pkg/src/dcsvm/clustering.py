"""Two-step kernel kmeans and the cross-cluster kernel mass D(pi)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .kernel import KernelSpec, kernel_diagonal, kernel_matrix, squared_norms

MASS_GUARD = 20000
_CHUNK = 1024


class GuardError(ValueError):
    """Raised when an O(n^2) diagnostic is requested on too large an input."""


@dataclass
class Partition:
    """Cluster assignment of every sample; no cluster is empty."""

    assignment: np.ndarray
    k: int

    def __post_init__(self):
        self.assignment = np.asarray(self.assignment, dtype=np.int64)
        counts = np.bincount(self.assignment, minlength=self.k) if self.assignment.size else np.zeros(self.k)
        if self.assignment.size and (self.assignment.min() < 0 or self.assignment.max() >= self.k):
            raise ValueError("cluster id out of range")
        if np.any(counts == 0):
            raise ValueError("partition contains an empty cluster")

    @classmethod
    def from_labels(cls, labels) -> tuple["Partition", np.ndarray]:
        """Compact arbitrary labels to ids 0..k-1 (in label order).

        Returns the partition and the old-label -> new-id map (-1 for labels
        that never occur).
        """
        labels = np.asarray(labels, dtype=np.int64)
        uniq = np.unique(labels)
        size = int(labels.max()) + 1 if labels.size else 0
        remap = np.full(size, -1, dtype=np.int64)
        remap[uniq] = np.arange(uniq.size)
        return cls(remap[labels], int(uniq.size)), remap

    @property
    def n(self) -> int:
        return int(self.assignment.shape[0])

    @property
    def members(self) -> list[np.ndarray]:
        order = np.argsort(self.assignment, kind="stable")
        bounds = np.searchsorted(self.assignment[order], np.arange(self.k + 1))
        return [order[bounds[c]:bounds[c + 1]] for c in range(self.k)]

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.k)


@dataclass
class KernelCenters:
    """Kernel-space centers defined by clusters of sampled points.

    ``sample_indices`` index the dataset the kmeans ran on; ``labels`` give the
    center of each sampled point. ``history`` records the kmeans objective per
    iteration, ``reseeds`` the iterations after which a cluster was reseeded.
    """

    sample_indices: np.ndarray
    labels: np.ndarray
    k: int
    X: sp.csr_matrix
    sq: np.ndarray
    self_terms: np.ndarray
    iterations: int = 0
    history: list = field(default_factory=list)
    reseeds: list = field(default_factory=list)

    def counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.k)


def center_self_terms(K: np.ndarray, labels: np.ndarray, k: int) -> np.ndarray:
    """(1/|V_c|^2) * sum_{j, j' in V_c} K(x_j, x_j') for every center c."""
    H = np.zeros((labels.shape[0], k))
    H[np.arange(labels.shape[0]), labels] = 1.0
    counts = H.sum(axis=0)
    inner = np.einsum("ic,ic->c", H, K @ H)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = inner / counts**2
    out[counts == 0] = np.inf
    return out


def center_distances(K_to_sample: np.ndarray, self_diag: np.ndarray, labels: np.ndarray,
                     k: int, self_terms: np.ndarray) -> np.ndarray:
    """||phi(x) - m_c||^2 for rows x given their kernel values against the sample."""
    H = np.zeros((labels.shape[0], k))
    H[np.arange(labels.shape[0]), labels] = 1.0
    counts = H.sum(axis=0)
    sums = K_to_sample @ H
    with np.errstate(invalid="ignore", divide="ignore"):
        dist = self_diag[:, None] - 2.0 * sums / counts[None, :] + self_terms[None, :]
    dist[:, counts == 0] = np.inf
    return dist


def _kmeans_objective(dist: np.ndarray, labels: np.ndarray) -> float:
    return float(dist[np.arange(labels.shape[0]), labels].sum())


def _plusplus_init(K: np.ndarray, diag: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    m = K.shape[0]
    chosen = [int(rng.integers(m))]
    best = np.maximum(diag + diag[chosen[0]] - 2.0 * K[:, chosen[0]], 0.0)
    taken = np.zeros(m, dtype=bool)
    taken[chosen[0]] = True
    while len(chosen) < k:
        w = np.where(taken, 0.0, best)
        total = w.sum()
        if total > 0:
            nxt = int(rng.choice(m, p=w / total))
        else:
            nxt = int(rng.choice(np.flatnonzero(~taken)))
        chosen.append(nxt)
        taken[nxt] = True
        best = np.minimum(best, np.maximum(diag + diag[nxt] - 2.0 * K[:, nxt], 0.0))
    return np.array(chosen)


def kernel_kmeans(dataset, sample_indices, spec: KernelSpec, k: int, max_iter: int = 100,
                  seed: int = 0, min_cluster_frac: float = 0.1, max_reseed_rounds: int = 3) -> KernelCenters:
    """Lloyd-style kernel kmeans over the sampled rows.

    Seeds are drawn kmeans++-style with D^2 weights in kernel space. Empty
    clusters, and clusters below ``min_cluster_frac * m / k`` members, are
    reseeded with the point farthest from its own center; small-cluster
    reseeding happens at most ``max_reseed_rounds`` times.
    """
    sample_indices = np.asarray(sample_indices, dtype=np.intp)
    m = sample_indices.shape[0]
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if m < k:
        raise ValueError(f"need at least k={k} sampled points, got {m}")
    rng = np.random.default_rng(seed)
    Xs = dataset.X[sample_indices]
    sq = dataset.sq_norms[sample_indices]
    K = kernel_matrix(spec, Xs, Xs, sq, sq)
    diag = np.diag(K).copy()

    seeds = _plusplus_init(K, diag, k, rng)
    dist = diag[:, None] + diag[seeds][None, :] - 2.0 * K[:, seeds]
    labels = np.argmin(dist, axis=1)
    labels[seeds] = np.arange(k)

    min_size = min_cluster_frac * m / k
    history: list[float] = []
    reseeds: list[int] = []
    small_rounds = 0
    it = 0
    for it in range(1, max_iter + 1):
        counts = np.bincount(labels, minlength=k)
        terms = center_self_terms(K, labels, k)
        dist = center_distances(K, diag, labels, k, terms)
        history.append(_kmeans_objective(dist, labels))
        new = np.argmin(dist, axis=1)
        # Keep a point in place on exact ties so converged labels are a fixed point.
        keep = dist[np.arange(m), labels] <= dist[np.arange(m), new]
        new = np.where(keep, labels, new)
        counts = np.bincount(new, minlength=k)
        small = np.flatnonzero(counts == 0)
        if small.size == 0 and small_rounds < max_reseed_rounds:
            small = np.flatnonzero(counts < min_size)
            if small.size:
                small_rounds += 1
        if small.size:
            own = dist[np.arange(m), new]
            order = np.argsort(-own, kind="stable")
            used = 0
            for c in small:
                # Farthest point whose own cluster would not be emptied.
                while used < m and np.bincount(new, minlength=k)[new[order[used]]] <= 1:
                    used += 1
                if used >= m:
                    break
                new[order[used]] = c
                used += 1
            reseeds.append(it)
        if np.array_equal(new, labels):
            break
        labels = new
    terms = center_self_terms(K, labels, k)
    final = center_distances(K, diag, labels, k, terms)
    history.append(_kmeans_objective(final, labels))
    return KernelCenters(sample_indices=sample_indices, labels=labels, k=k, X=Xs, sq=sq,
                         self_terms=terms, iterations=it, history=history, reseeds=reseeds)


def nearest_centers(spec: KernelSpec, X: sp.csr_matrix, centers: KernelCenters,
                    sq: np.ndarray | None = None, return_dist: bool = False):
    """Index of the nearest center for every row of ``X`` (ties -> lowest id)."""
    X = sp.csr_matrix(X)
    if sq is None:
        sq = squared_norms(X)
    out = np.empty(X.shape[0], dtype=np.int64)
    dists = [] if return_dist else None
    for s in range(0, X.shape[0], _CHUNK):
        block = X[s:s + _CHUNK]
        bsq = sq[s:s + _CHUNK]
        Kxs = kernel_matrix(spec, block, centers.X, bsq, centers.sq)
        diag = kernel_diagonal(spec, block, bsq)
        d = center_distances(Kxs, diag, centers.labels, centers.k, centers.self_terms)
        out[s:s + _CHUNK] = np.argmin(d, axis=1)
        if return_dist:
            dists.append(d)
    if return_dist:
        return out, (np.vstack(dists) if dists else np.zeros((0, centers.k)))
    return out


def assign_all(dataset, centers: KernelCenters, spec: KernelSpec) -> Partition:
    """Assign every point to its nearest kernel-space center.

    Centers that attract no points are dropped; cluster ids are compacted in
    center order. Use :func:`nearest_centers` for the raw center ids.
    """
    raw = nearest_centers(spec, dataset.X, centers, dataset.sq_norms)
    part, _ = Partition.from_labels(raw)
    return part


def _check_guard(n: int, guard: int):
    if n > guard:
        raise GuardError(f"O(n^2) kernel mass requested for n={n} > guard {guard}; "
                         "use a subsample instead")


def off_diag_mass(dataset, partition: Partition, spec: KernelSpec, guard: int = MASS_GUARD) -> float:
    """D(pi): sum over ordered pairs in different clusters of |K(x_i, x_j)|."""
    return restricted_mass(dataset, partition, spec, None, guard=guard)


def restricted_mass(dataset, partition: Partition, spec: KernelSpec, index_set, guard: int = MASS_GUARD) -> float:
    """D(pi) restricted to pairs with both indices in ``index_set`` (all when None)."""
    if index_set is None:
        idx = np.arange(dataset.n)
    else:
        idx = np.unique(np.asarray(list(index_set) if not isinstance(index_set, np.ndarray) else index_set,
                                   dtype=np.intp))
    _check_guard(idx.shape[0], guard)
    if idx.shape[0] == 0:
        return 0.0
    X = dataset.X[idx]
    sq = dataset.sq_norms[idx]
    lab = partition.assignment[idx]
    total = 0.0
    for s in range(0, idx.shape[0], _CHUNK):
        Kb = kernel_matrix(spec, X[s:s + _CHUNK], X, sq[s:s + _CHUNK], sq)
        cross = lab[s:s + _CHUNK, None] != lab[None, :]
        total += float(np.abs(Kb)[cross].sum())
    return total


def mass_from_matrix(K: np.ndarray, assignment: np.ndarray) -> float:
    cross = assignment[:, None] != assignment[None, :]
    return float(np.abs(K)[cross].sum())
