"""Datasets in LIBSVM sparse format, feature scaling, splits and model files."""

from __future__ import annotations

import io
import math
import os
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, TextIO

import numpy as np
import scipy.sparse as sp

from .kernel import KernelSpec, SparseVector, kernel_matrix, squared_norms

MODEL_MAGIC = "dcsvm-model"
MODEL_VERSION = "v1"


class ParseError(ValueError):
    """Malformed LIBSVM input; ``lineno`` is 1-based."""

    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class ModelFormatError(ValueError):
    pass


def _fmt(v: float) -> str:
    return "%.17g" % v


@dataclass
class SparseDataset:
    """Labelled sparse samples.

    ``X`` is CSR with one column per feature index; column 0 is never used so
    the 1-based file indices are kept as-is. ``y`` holds +1/-1 as floats.
    """

    X: sp.csr_matrix
    y: np.ndarray

    def __post_init__(self):
        X = sp.csr_matrix(self.X, dtype=np.float64)
        X.sort_indices()
        self.X = X
        self.y = np.asarray(self.y, dtype=np.float64).ravel()
        if self.X.shape[0] != self.y.shape[0]:
            raise ValueError(f"{self.X.shape[0]} samples but {self.y.shape[0]} labels")
        if not np.all(np.isin(self.y, (-1.0, 1.0))):
            raise ValueError("labels must be +1 or -1")

    @classmethod
    def from_dense(cls, X, y) -> "SparseDataset":
        X = np.asarray(X, dtype=np.float64)
        padded = np.hstack([np.zeros((X.shape[0], 1)), X])
        csr = sp.csr_matrix(padded)
        csr.eliminate_zeros()
        return cls(csr, y)

    @classmethod
    def from_vectors(cls, vectors: Iterable[SparseVector], labels, width: int | None = None) -> "SparseDataset":
        vectors = list(vectors)
        indptr = [0]
        indices: list[int] = []
        data: list[float] = []
        for v in vectors:
            indices.extend(v.indices)
            data.extend(v.values)
            indptr.append(len(indices))
        d = max(indices) if indices else 0
        width = max(d + 1, width or 0)
        X = sp.csr_matrix((np.array(data, dtype=np.float64), np.array(indices, dtype=np.int32),
                           np.array(indptr, dtype=np.int64)), shape=(len(vectors), width))
        return cls(X, labels)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        """Largest feature index present (0 for an all-empty dataset)."""
        return int(self.X.indices.max()) if self.X.nnz else 0

    @cached_property
    def sq_norms(self) -> np.ndarray:
        return squared_norms(self.X)

    def row(self, i: int) -> SparseVector:
        s, e = self.X.indptr[i], self.X.indptr[i + 1]
        return SparseVector(tuple(int(j) for j in self.X.indices[s:e]),
                            tuple(float(v) for v in self.X.data[s:e]))

    def subset(self, indices) -> "SparseDataset":
        idx = np.asarray(indices, dtype=np.intp)
        return SparseDataset(self.X[idx], self.y[idx])

    def validate(self):
        if self.n < 1:
            raise ValueError("dataset is empty")

    def __eq__(self, other):
        if not isinstance(other, SparseDataset):
            return NotImplemented
        if self.n != other.n or not np.array_equal(self.y, other.y):
            return False
        a, b = self.X, other.X
        return (np.array_equal(a.indptr, b.indptr) and np.array_equal(a.indices, b.indices)
                and np.array_equal(a.data, b.data))


def _label_map(raw: list[float]) -> dict[float, float]:
    distinct = sorted(set(raw))
    if set(distinct) <= {-1.0, 1.0}:
        return {v: v for v in distinct}
    if len(distinct) == 2:
        return {distinct[0]: -1.0, distinct[1]: 1.0}
    if len(distinct) == 1:
        v = distinct[0]
        return {v: 1.0 if v > 0 else -1.0}
    raise ValueError(f"expected a binary problem, found {len(distinct)} distinct labels")


def parse_libsvm(stream: TextIO | str | Iterable[str]) -> SparseDataset:
    """Parse ``label idx:val idx:val ...`` lines.

    Labels already in {+1, -1} are kept; any other pair of values maps the
    larger to +1. Blank lines are skipped. An empty stream gives ``n == 0``.
    """
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    raw_labels: list[float] = []
    indptr = [0]
    indices: list[int] = []
    data: list[float] = []
    for lineno, line in enumerate(stream, start=1):
        parts = line.split()
        if not parts:
            continue
        try:
            label = float(parts[0])
        except ValueError:
            raise ParseError(lineno, f"non-numeric label {parts[0]!r}") from None
        if not math.isfinite(label):
            raise ParseError(lineno, f"non-finite label {parts[0]!r}")
        prev = 0
        for tok in parts[1:]:
            idx_s, sep, val_s = tok.partition(":")
            if not sep:
                raise ParseError(lineno, f"expected idx:val, got {tok!r}")
            try:
                idx = int(idx_s)
            except ValueError:
                raise ParseError(lineno, f"bad feature index {idx_s!r}") from None
            try:
                val = float(val_s)
            except ValueError:
                raise ParseError(lineno, f"non-numeric value {val_s!r}") from None
            if idx < 1:
                raise ParseError(lineno, f"feature index {idx} is not positive")
            if idx <= prev:
                raise ParseError(lineno, f"feature index {idx} does not increase (after {prev})")
            prev = idx
            if val != 0.0:
                indices.append(idx)
                data.append(val)
        raw_labels.append(label)
        indptr.append(len(indices))
    mapping = _label_map(raw_labels) if raw_labels else {}
    y = np.array([mapping[v] for v in raw_labels], dtype=np.float64)
    width = (max(indices) + 1) if indices else 1
    X = sp.csr_matrix((np.array(data, dtype=np.float64), np.array(indices, dtype=np.int32),
                       np.array(indptr, dtype=np.int64)), shape=(len(raw_labels), width))
    return SparseDataset(X, y)


def load_libsvm(path: str | os.PathLike) -> SparseDataset:
    with open(path) as fh:
        return parse_libsvm(fh)


def _format_row(X: sp.csr_matrix, i: int) -> str:
    s, e = X.indptr[i], X.indptr[i + 1]
    return " ".join(f"{j}:{_fmt(v)}" for j, v in zip(X.indices[s:e], X.data[s:e]))


def format_libsvm(dataset: SparseDataset) -> str:
    lines = []
    for i in range(dataset.n):
        label = "+1" if dataset.y[i] > 0 else "-1"
        feats = _format_row(dataset.X, i)
        lines.append(f"{label} {feats}" if feats else label)
    return "".join(line + "\n" for line in lines)


def save_libsvm(dataset: SparseDataset, path: str | os.PathLike):
    with open(path, "w") as fh:
        fh.write(format_libsvm(dataset))


@dataclass
class Scaler:
    """Per-feature min/max taken from a training set (implicit zeros included)."""

    mins: np.ndarray
    maxs: np.ndarray

    def transform(self, dataset: SparseDataset) -> SparseDataset:
        width = max(dataset.X.shape[1], self.mins.shape[0])
        mins = np.zeros(width)
        maxs = np.zeros(width)
        mins[: self.mins.shape[0]] = self.mins
        maxs[: self.maxs.shape[0]] = self.maxs
        span = maxs - mins
        const = span <= 0
        X = dataset.X.toarray()
        if X.shape[1] < width:
            X = np.hstack([X, np.zeros((X.shape[0], width - X.shape[1]))])
        safe = np.where(const, 1.0, span)
        out = np.where(const[None, :], 0.0, (X - mins[None, :]) / safe[None, :])
        out[:, 0] = 0.0
        csr = sp.csr_matrix(out)
        csr.eliminate_zeros()
        return SparseDataset(csr, dataset.y.copy())


def scale_features(dataset: SparseDataset, scaler: Scaler | None = None) -> tuple[SparseDataset, Scaler]:
    """Map each feature linearly onto [0, 1] using ``(v - min) / (max - min)``.

    Pass the returned scaler back in to scale a test set with training-set
    parameters. Constant features map to 0.
    """
    if scaler is None:
        X = dataset.X.toarray()
        mins = X.min(axis=0) if X.shape[0] else np.zeros(X.shape[1])
        maxs = X.max(axis=0) if X.shape[0] else np.zeros(X.shape[1])
        scaler = Scaler(mins, maxs)
    return scaler.transform(dataset), scaler


def split(dataset: SparseDataset, fraction: float, seed: int = 0) -> tuple[SparseDataset, SparseDataset]:
    """Unstratified random split into ``ceil(fraction * n)`` rows and the rest."""
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must lie in (0, 1), got {fraction}")
    n = dataset.n
    perm = np.random.default_rng(seed).permutation(n)
    cut = math.ceil(fraction * n)
    first, second = np.sort(perm[:cut]), np.sort(perm[cut:])
    return dataset.subset(first), dataset.subset(second)


# -- model files -------------------------------------------------------------


@dataclass
class EarlyBlock:
    """Everything needed to predict with the masked kernel of one level.

    ``centers`` holds the sampled points that define the kernel-space centers,
    ``center_of_sample`` their center ids, ``center_cluster`` maps each center
    to a training cluster, and ``sv_cluster`` gives the cluster of each support
    vector of the enclosing model.
    """

    level: int
    n_clusters: int
    centers: sp.csr_matrix
    center_of_sample: np.ndarray
    center_cluster: np.ndarray
    sv_cluster: np.ndarray
    _self_terms: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def n_centers(self) -> int:
        return int(self.center_cluster.shape[0])

    def self_terms(self, spec: KernelSpec) -> np.ndarray:
        if self._self_terms is None:
            from .clustering import center_self_terms

            K = kernel_matrix(spec, self.centers, self.centers)
            self._self_terms = center_self_terms(K, self.center_of_sample, self.n_centers)
        return self._self_terms

    def __eq__(self, other):
        if not isinstance(other, EarlyBlock):
            return NotImplemented
        return (self.level == other.level and self.n_clusters == other.n_clusters
                and _csr_equal(self.centers, other.centers)
                and np.array_equal(self.center_of_sample, other.center_of_sample)
                and np.array_equal(self.center_cluster, other.center_cluster)
                and np.array_equal(self.sv_cluster, other.sv_cluster))


@dataclass
class ModelFile:
    kernel: KernelSpec
    C: float
    support_vectors: sp.csr_matrix
    coef: np.ndarray
    early: EarlyBlock | None = None

    def __post_init__(self):
        self.support_vectors = sp.csr_matrix(self.support_vectors, dtype=np.float64)
        self.coef = np.asarray(self.coef, dtype=np.float64).ravel()
        if self.support_vectors.shape[0] != self.coef.shape[0]:
            raise ValueError("one coefficient per support vector required")
        if np.any(np.abs(self.coef) > self.C):
            raise ValueError("coefficient magnitude exceeds C")
        if self.early is not None and self.early.sv_cluster.shape[0] != self.coef.shape[0]:
            raise ValueError("early block must assign every support vector to a cluster")

    @property
    def n_sv(self) -> int:
        return int(self.coef.shape[0])

    @property
    def n_features(self) -> int:
        X = self.support_vectors
        d = int(X.indices.max()) if X.nnz else 0
        if self.early is not None and self.early.centers.nnz:
            d = max(d, int(self.early.centers.indices.max()))
        return d

    def __eq__(self, other):
        if not isinstance(other, ModelFile):
            return NotImplemented
        return (self.kernel == other.kernel and self.C == other.C
                and _csr_equal(self.support_vectors, other.support_vectors)
                and np.array_equal(self.coef, other.coef) and self.early == other.early)


def _csr_equal(a: sp.csr_matrix, b: sp.csr_matrix) -> bool:
    return (a.shape[0] == b.shape[0] and np.array_equal(a.indptr, b.indptr)
            and np.array_equal(a.indices, b.indices) and np.array_equal(a.data, b.data))


def format_model(model: ModelFile) -> str:
    k = model.kernel
    out = [
        f"{MODEL_MAGIC} {MODEL_VERSION}",
        f"kernel: {k.family}",
        f"gamma: {_fmt(k.gamma) if k.gamma is not None else 'none'}",
        f"degree: {k.degree}",
        f"coef0: {_fmt(k.coef0)}",
        f"C: {_fmt(model.C)}",
        f"n_features: {model.n_features}",
        f"total_sv: {model.n_sv}",
    ]
    early = model.early
    if early is not None:
        out += [
            f"early_level: {early.level}",
            f"early_clusters: {early.n_clusters}",
            f"early_centers: {early.n_centers}",
            f"early_samples: {early.centers.shape[0]}",
        ]
    out.append("SV")
    X = model.support_vectors
    for i in range(model.n_sv):
        feats = _format_row(X, i)
        out.append(f"{_fmt(model.coef[i])} {feats}" if feats else _fmt(model.coef[i]))
    if early is not None:
        out.append("CENTERS")
        for i in range(early.centers.shape[0]):
            feats = _format_row(early.centers, i)
            cid = int(early.center_of_sample[i])
            out.append(f"{cid} {feats}" if feats else str(cid))
        out.append("CENTER_CLUSTER " + " ".join(str(int(c)) for c in early.center_cluster))
        out.append("SV_CLUSTER " + " ".join(str(int(c)) for c in early.sv_cluster))
    out.append("END")
    return "\n".join(out) + "\n"


def save_model(model: ModelFile, path: str | os.PathLike):
    with open(path, "w") as fh:
        fh.write(format_model(model))


def _parse_sparse_line(tokens: list[str], where: str):
    idx, val = [], []
    prev = 0
    for tok in tokens:
        a, sep, b = tok.partition(":")
        if not sep:
            raise ModelFormatError(f"{where}: expected idx:val, got {tok!r}")
        try:
            j, v = int(a), float(b)
        except ValueError:
            raise ModelFormatError(f"{where}: bad entry {tok!r}") from None
        if j <= prev:
            raise ModelFormatError(f"{where}: feature indices must increase")
        prev = j
        idx.append(j)
        val.append(v)
    return idx, val


def _rows_to_csr(rows, width: int) -> sp.csr_matrix:
    indptr = [0]
    indices: list[int] = []
    data: list[float] = []
    for idx, val in rows:
        indices.extend(idx)
        data.extend(val)
        indptr.append(len(indices))
    return sp.csr_matrix((np.array(data, dtype=np.float64), np.array(indices, dtype=np.int32),
                          np.array(indptr, dtype=np.int64)), shape=(len(rows), width))


def parse_model(text: str) -> ModelFile:
    lines = text.splitlines()
    if not lines:
        raise ModelFormatError("empty model file")
    head = lines[0].split()
    if len(head) != 2 or head[0] != MODEL_MAGIC:
        raise ModelFormatError(f"not a dcsvm model file (first line {lines[0]!r})")
    if head[1] != MODEL_VERSION:
        raise ModelFormatError(f"unsupported model version {head[1]!r}; expected {MODEL_VERSION}")
    header: dict[str, str] = {}
    pos = 1
    while pos < len(lines) and lines[pos] != "SV":
        key, sep, value = lines[pos].partition(":")
        if not sep:
            raise ModelFormatError(f"line {pos + 1}: expected 'key: value', got {lines[pos]!r}")
        header[key.strip()] = value.strip()
        pos += 1
    if pos >= len(lines):
        raise ModelFormatError("truncated model file: missing SV section")
    pos += 1
    try:
        family = header["kernel"]
        gamma = None if header["gamma"] == "none" else float(header["gamma"])
        kernel = KernelSpec(family, gamma=gamma, degree=int(header["degree"]),
                            coef0=float(header["coef0"]))
        C = float(header["C"])
        n_sv = int(header["total_sv"])
        width = int(header.get("n_features", "0")) + 1
    except KeyError as exc:
        raise ModelFormatError(f"missing header field {exc.args[0]!r}") from None
    except ValueError as exc:
        raise ModelFormatError(str(exc)) from None

    def take(count, what):
        nonlocal pos
        if pos + count > len(lines):
            raise ModelFormatError(f"truncated model file while reading {what}")
        chunk = lines[pos:pos + count]
        pos += count
        return chunk

    rows, coef = [], []
    for k, line in enumerate(take(n_sv, "support vectors")):
        tokens = line.split()
        if not tokens:
            raise ModelFormatError(f"support vector {k}: empty line")
        try:
            coef.append(float(tokens[0]))
        except ValueError:
            raise ModelFormatError(f"support vector {k}: bad coefficient {tokens[0]!r}") from None
        rows.append(_parse_sparse_line(tokens[1:], f"support vector {k}"))
    early = None
    n_samples = int(header.get("early_samples", "0"))
    if "early_level" in header:
        if take(1, "CENTERS marker")[0] != "CENTERS":
            raise ModelFormatError("expected CENTERS section")
        crow, cid = [], []
        for k, line in enumerate(take(n_samples, "centers")):
            tokens = line.split()
            cid.append(int(tokens[0]))
            crow.append(_parse_sparse_line(tokens[1:], f"center sample {k}"))
        cc = take(1, "CENTER_CLUSTER")[0].split()
        sc = take(1, "SV_CLUSTER")[0].split()
        if not cc or cc[0] != "CENTER_CLUSTER" or not sc or sc[0] != "SV_CLUSTER":
            raise ModelFormatError("malformed early-prediction block")
        center_cluster = np.array([int(t) for t in cc[1:]], dtype=np.int64)
        if center_cluster.shape[0] != int(header.get("early_centers", "0")):
            raise ModelFormatError("center count does not match header")
        if n_samples == 0:
            early = None
        else:
            early = EarlyBlock(
                level=int(header["early_level"]),
                n_clusters=int(header["early_clusters"]),
                centers=_rows_to_csr(crow, width),
                center_of_sample=np.array(cid, dtype=np.int64),
                center_cluster=center_cluster,
                sv_cluster=np.array([int(t) for t in sc[1:]], dtype=np.int64),
            )
    if take(1, "END marker")[0] != "END":
        raise ModelFormatError("truncated model file: missing END")
    return ModelFile(kernel, C, _rows_to_csr(rows, width), np.array(coef), early)


def load_model(path: str | os.PathLike) -> ModelFile:
    with open(path) as fh:
        try:
            return parse_model(fh.read())
        except ValueError as exc:
            if isinstance(exc, ModelFormatError):
                raise
            raise ModelFormatError(str(exc)) from exc
