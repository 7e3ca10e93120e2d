"""Kernel functions, Q-matrix entries and an LRU cache of kernel rows.

All vectorised paths compute inner products through scipy's CSR kernels, which
accumulate the products of matching nonzeros in increasing feature order. The
pairwise :func:`kernel_eval` uses the same order, so every route to a given
``K(x_i, x_j)`` produces the same bits.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp

FAMILIES = ("rbf", "polynomial", "linear")
_ALIASES = {"rbf": "rbf", "poly": "polynomial", "polynomial": "polynomial", "linear": "linear"}

DEFAULT_CACHE_BYTES = 100 * 1024 * 1024


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family and hyperparameters.

    ``rbf``: exp(-gamma * ||x - z||^2).
    ``polynomial``: (coef0 + gamma * x.z) ** degree.
    ``linear``: x.z.
    """

    family: str = "rbf"
    gamma: float | None = None
    degree: int = 3
    coef0: float = 0.0

    def __post_init__(self):
        family = _ALIASES.get(str(self.family).lower())
        if family is None:
            raise ValueError(f"unknown kernel family {self.family!r}; expected one of {FAMILIES}")
        object.__setattr__(self, "family", family)
        if family in ("rbf", "polynomial"):
            if self.gamma is None or not self.gamma > 0:
                raise ValueError(f"{family} kernel requires gamma > 0, got {self.gamma!r}")
            object.__setattr__(self, "gamma", float(self.gamma))
        if family == "polynomial" and int(self.degree) < 1:
            raise ValueError(f"polynomial degree must be >= 1, got {self.degree!r}")
        object.__setattr__(self, "degree", int(self.degree))
        object.__setattr__(self, "coef0", float(self.coef0))

    @classmethod
    def rbf(cls, gamma: float) -> "KernelSpec":
        return cls("rbf", gamma=gamma)

    @classmethod
    def polynomial(cls, gamma: float, degree: int = 3, coef0: float = 0.0) -> "KernelSpec":
        return cls("polynomial", gamma=gamma, degree=degree, coef0=coef0)

    @classmethod
    def linear(cls) -> "KernelSpec":
        return cls("linear")

    def from_dots(self, dots, sq_a=None, sq_b=None):
        """Map inner products (and squared norms, for RBF) to kernel values."""
        if self.family == "rbf":
            d2 = np.maximum(sq_a + sq_b - 2.0 * dots, 0.0)
            return np.exp(-self.gamma * d2)
        if self.family == "polynomial":
            # asarray keeps scalars on the ufunc path (numpy scalar ** int rounds differently)
            return np.asarray(self.coef0 + self.gamma * np.asarray(dots)) ** self.degree
        return np.asarray(dots, dtype=np.float64)


@dataclass(frozen=True)
class SparseVector:
    """Feature vector as strictly increasing 1-based indices and their values."""

    indices: tuple[int, ...] = ()
    values: tuple[float, ...] = ()

    def __post_init__(self):
        if len(self.indices) != len(self.values):
            raise ValueError("indices and values differ in length")
        for a, b in zip(self.indices, self.indices[1:]):
            if b <= a:
                raise ValueError("feature indices must be strictly increasing")
        if self.indices and self.indices[0] < 1:
            raise ValueError("feature indices are 1-based")

    @classmethod
    def from_pairs(cls, pairs: Sequence[tuple[int, float]]) -> "SparseVector":
        return cls(tuple(int(i) for i, _ in pairs), tuple(float(v) for _, v in pairs))

    @classmethod
    def from_dense(cls, values: Sequence[float]) -> "SparseVector":
        pairs = [(j + 1, float(v)) for j, v in enumerate(values) if v != 0]
        return cls.from_pairs(pairs)

    def __len__(self):
        return len(self.indices)

    def squared_norm(self) -> float:
        s = 0.0
        for v in self.values:
            s += v * v
        return s


def sparse_dot(x: SparseVector, z: SparseVector) -> float:
    """Merge two index-sorted vectors, summing products in increasing index order."""
    s = 0.0
    i = j = 0
    xi, xv, zi, zv = x.indices, x.values, z.indices, z.values
    while i < len(xi) and j < len(zi):
        a, b = xi[i], zi[j]
        if a == b:
            s += xv[i] * zv[j]
            i += 1
            j += 1
        elif a < b:
            i += 1
        else:
            j += 1
    return s


def kernel_eval(spec: KernelSpec, x: SparseVector, z: SparseVector) -> float:
    # numpy's exp/power, not math's: they differ in the last ulp and the
    # vectorised paths must agree with this one bitwise.
    dot = np.float64(sparse_dot(x, z))
    if spec.family == "rbf":
        return float(spec.from_dots(dot, np.float64(x.squared_norm()), np.float64(z.squared_norm())))
    return float(spec.from_dots(dot))


def squared_norms(X: sp.csr_matrix) -> np.ndarray:
    # Same accumulation order as a CSR matvec, so ||x||^2 == x.x bitwise.
    return np.asarray(X.multiply(X) @ np.ones(X.shape[1]), dtype=np.float64).ravel()


def kernel_diagonal(spec: KernelSpec, X: sp.csr_matrix, sq: np.ndarray | None = None) -> np.ndarray:
    if spec.family == "rbf":
        return np.ones(X.shape[0])
    if sq is None:
        sq = squared_norms(X)
    return spec.from_dots(sq)


def _align(A: sp.csr_matrix, B: sp.csr_matrix):
    width = max(A.shape[1], B.shape[1])
    if A.shape[1] != width:
        A = sp.csr_matrix((A.data, A.indices, A.indptr), shape=(A.shape[0], width))
    if B.shape[1] != width:
        B = sp.csr_matrix((B.data, B.indices, B.indptr), shape=(B.shape[0], width))
    return A, B


def kernel_matrix(spec: KernelSpec, A: sp.csr_matrix, B: sp.csr_matrix,
                  sq_a: np.ndarray | None = None, sq_b: np.ndarray | None = None) -> np.ndarray:
    """Dense block ``K[i, j] = K(a_i, b_j)``."""
    A, B = _align(sp.csr_matrix(A), sp.csr_matrix(B))
    if A.shape[0] == 0 or B.shape[0] == 0:
        return np.zeros((A.shape[0], B.shape[0]))
    dots = (A @ B.T).toarray()
    if spec.family != "rbf":
        return spec.from_dots(dots)
    if sq_a is None:
        sq_a = squared_norms(A)
    if sq_b is None:
        sq_b = squared_norms(B)
    return spec.from_dots(dots, sq_a[:, None], sq_b[None, :])


def q_entry(dataset, spec: KernelSpec, i: int, j: int) -> float:
    n = dataset.n
    if not (0 <= i < n and 0 <= j < n):
        raise IndexError(f"index out of range for n={n}: ({i}, {j})")
    return float(dataset.y[i] * dataset.y[j]) * kernel_eval(spec, dataset.row(i), dataset.row(j))


class KernelCache:
    """Byte-bounded LRU map from row keys to kernel rows."""

    def __init__(self, capacity_bytes: int = DEFAULT_CACHE_BYTES):
        self.capacity_bytes = int(capacity_bytes)
        self.resident_bytes = 0
        self.hits = 0
        self.misses = 0
        self.last_hit = False
        self._rows: OrderedDict = OrderedDict()

    def __len__(self):
        return len(self._rows)

    def __contains__(self, key):
        return key in self._rows

    def get(self, key):
        row = self._rows.get(key)
        if row is None:
            return None
        self._rows.move_to_end(key)
        return row

    def put(self, key, row: np.ndarray):
        size = row.nbytes
        if size > self.capacity_bytes:
            return
        old = self._rows.pop(key, None)
        if old is not None:
            self.resident_bytes -= old.nbytes
        while self._rows and self.resident_bytes + size > self.capacity_bytes:
            _, evicted = self._rows.popitem(last=False)
            self.resident_bytes -= evicted.nbytes
        self._rows[key] = row
        self.resident_bytes += size

    def clear(self):
        self._rows.clear()
        self.resident_bytes = 0


class KernelRows:
    """Kernel rows over one dataset view, served through a :class:`KernelCache`.

    Rows over the full view are cached under ``(i, 0)``. Rows over a shrunk
    active set are cached under ``(i, generation)``; callers bump the
    generation whenever the active set changes.
    """

    def __init__(self, X: sp.csr_matrix, spec: KernelSpec, cache: KernelCache | None = None,
                 sq: np.ndarray | None = None):
        self.X = sp.csr_matrix(X)
        self.spec = spec
        self.cache = cache if cache is not None else KernelCache()
        self.sq = squared_norms(self.X) if sq is None else sq
        self.n = self.X.shape[0]

    def _compute(self, i: int, cols: np.ndarray | None) -> np.ndarray:
        xi = self.X.getrow(i).toarray().ravel()
        if cols is None:
            dots = self.X @ xi
            sq_b = self.sq
        else:
            dots = self.X[cols] @ xi
            sq_b = self.sq[cols]
        return self.spec.from_dots(np.asarray(dots, dtype=np.float64), self.sq[i], sq_b)

    def row(self, i: int, cols: np.ndarray | None = None, generation: int = 0) -> np.ndarray:
        cache = self.cache
        full = cache.get((i, 0))
        if full is not None:
            cache.hits += 1
            cache.last_hit = True
            return full if cols is None else full[cols]
        if cols is not None and generation != 0:
            part = cache.get((i, generation))
            if part is not None:
                cache.hits += 1
                cache.last_hit = True
                return part
        cache.misses += 1
        cache.last_hit = False
        if cols is None or generation == 0:
            full = self._compute(i, None)
            cache.put((i, 0), full)
            return full if cols is None else full[cols]
        part = self._compute(i, cols)
        cache.put((i, generation), part)
        return part


def kernel_row(cache: KernelCache, dataset, spec: KernelSpec, i: int, active_set=None) -> np.ndarray:
    """``K(x_i, x_j)`` for ``j`` in ``active_set`` (all rows when None)."""
    rows = KernelRows(dataset.X, spec, cache, sq=dataset.sq_norms)
    if active_set is None:
        return rows.row(i)
    cols = np.asarray(active_set, dtype=np.intp)
    full = cache.get((i, 0))
    if full is not None:
        cache.hits += 1
        cache.last_hit = True
        return full[cols]
    return rows.row(i)[cols]
