"""Seeded toy datasets for tests, examples and the diagnostics commands."""

from __future__ import annotations

import numpy as np

from .data_io import SparseDataset


def _finish(X, y, rng) -> SparseDataset:
    order = rng.permutation(X.shape[0])
    return SparseDataset.from_dense(X[order], y[order])


def two_gaussians(n: int, d: int = 2, sep: float = 2.0, seed: int = 0) -> SparseDataset:
    """Two isotropic Gaussian blobs whose means are ``sep`` apart along the first axis."""
    rng = np.random.default_rng(seed)
    y = np.where(np.arange(n) < n // 2, 1.0, -1.0)
    X = rng.standard_normal((n, d))
    X[:, 0] += 0.5 * sep * y
    return _finish(X, y, rng)


def gaussian_mixture(n: int, d: int = 2, blobs: int = 8, spread: float = 4.0, seed: int = 0) -> SparseDataset:
    """Unit-variance blobs with random centers and random class per blob."""
    rng = np.random.default_rng(seed)
    means = rng.uniform(-spread, spread, size=(blobs, d))
    cls = np.where(np.arange(blobs) % 2 == 0, 1.0, -1.0)
    which = rng.integers(0, blobs, size=n)
    X = means[which] + rng.standard_normal((n, d))
    return _finish(X, cls[which], rng)


def two_moons(n: int, noise: float = 0.1, seed: int = 0) -> SparseDataset:
    rng = np.random.default_rng(seed)
    half = n // 2
    t = rng.uniform(0, np.pi, size=n)
    X = np.empty((n, 2))
    X[:half, 0], X[:half, 1] = np.cos(t[:half]), np.sin(t[:half])
    X[half:, 0], X[half:, 1] = 1.0 - np.cos(t[half:]), 0.5 - np.sin(t[half:])
    X += noise * rng.standard_normal(X.shape)
    y = np.where(np.arange(n) < half, 1.0, -1.0)
    return _finish(X, y, rng)


def random_dataset(n: int, d: int = 5, density: float = 1.0, seed: int = 0) -> SparseDataset:
    """Uniform features in [-1, 1] with labels from a noisy random quadratic rule.

    ``density`` < 1 zeroes features at random to exercise the sparse paths.
    """
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1.0, 1.0, size=(n, d))
    if density < 1.0:
        X *= rng.random((n, d)) < density
    A = rng.standard_normal((d, d))
    score = np.einsum("ij,jk,ik->i", X, A, X) + 0.3 * rng.standard_normal(n)
    y = np.where(score >= np.median(score), 1.0, -1.0)
    if np.all(y == y[0]) and n > 1:
        y[0] = -y[0]
    return SparseDataset.from_dense(X, y)


def ijcnn1_like(n: int, seed: int = 0) -> SparseDataset:
    """A stand-in with ijcnn1's shape: 22 features in [-1, 1], about 10% positives.

    Positives come from a few tight regions so the decision boundary is
    nonlinear. Used when the real data is not available.
    """
    rng = np.random.default_rng(seed)
    d = 22
    X = rng.uniform(-1.0, 1.0, size=(n, d))
    hubs = rng.uniform(-0.6, 0.6, size=(6, d))
    pos = rng.random(n) < 0.1
    which = rng.integers(0, hubs.shape[0], size=n)
    X[pos] = np.clip(hubs[which[pos]] + 0.25 * rng.standard_normal((int(pos.sum()), d)), -1.0, 1.0)
    y = np.where(pos, 1.0, -1.0)
    flip = rng.random(n) < 0.02
    y[flip] = -y[flip]
    return SparseDataset.from_dense(X, y)
