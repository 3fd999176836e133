"""Class-count estimation from the eigengap of the normalized graph Laplacian.

Affinity: rectified cosine correlations, k-nearest-neighbor sparsified and
max-symmetrized, unit self-loops. The ascending Laplacian spectrum is scanned
for the largest eigenvalue gap inside a search window; the coarse count is
its index and the fine (taxonomy-adaptive) count is the runner-up gap at a
strictly larger index.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import scipy.sparse
from scipy.sparse.linalg import eigsh

from .errors import ConfigError, DomainError, ShapeError
from .pipeline import spherical_kmeans

__all__ = [
    "AffinityGraph",
    "SpectralEstimate",
    "BaselineEstimate",
    "build_affinity",
    "normalized_laplacian",
    "estimate_class_count",
    "count_estimation_baseline",
]

_EIG_TOL = 1e-9
_DENSE_MAX = 1024  # above this, the sparsified graph justifies a Lanczos solver


@dataclass(frozen=True)
class AffinityGraph:
    weights: np.ndarray
    degree: np.ndarray
    neighbor_count: int
    isolated: np.ndarray  # nodes left with only their self-loop

    def __post_init__(self):
        w = self.weights
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise ShapeError(f"affinity must be square, got {w.shape}")
        if np.max(np.abs(w - w.T)) > 1e-12:
            raise DomainError("affinity matrix must be symmetric within 1e-12")
        if np.min(w) < 0:
            raise DomainError("affinity weights must be non-negative")
        if np.min(self.degree) <= 0:
            raise DomainError("every node must have positive degree")


@dataclass(frozen=True)
class SpectralEstimate:
    eigenvalues: np.ndarray
    gaps: np.ndarray
    coarse_count: int
    fine_count: int
    search_window: tuple[int, int]
    level: str = "coarse"

    @property
    def selected_count(self) -> int:
        return self.fine_count if self.level == "fine" else self.coarse_count


@dataclass(frozen=True)
class BaselineEstimate:
    count: int
    degenerate: bool = False


def _check_unit_rows(embeddings) -> np.ndarray:
    z = np.asarray(embeddings, dtype=float)
    if z.ndim != 2 or z.shape[0] < 2:
        raise ShapeError(f"need an N x d matrix with N >= 2, got {z.shape}")
    norms = np.linalg.norm(z, axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-6):
        raise DomainError("embedding rows must be unit-norm")
    return z


def build_affinity(embeddings: np.ndarray, neighbor_count: int = 20) -> AffinityGraph:
    """Rectified-cosine graph with kNN sparsification and unit self-loops."""
    z = _check_unit_rows(embeddings)
    if neighbor_count < 1:
        raise ConfigError("neighbor_count must be positive")
    n = z.shape[0]
    w = z @ z.T
    np.clip(w, 0.0, None, out=w)
    np.fill_diagonal(w, 0.0)
    k = min(neighbor_count, n - 1)
    keep = np.zeros_like(w, dtype=bool)
    top = np.argpartition(w, n - k, axis=1)[:, n - k :]
    keep[np.arange(n)[:, None], top] = True
    np.logical_or(keep, keep.T, out=keep)  # max-symmetrization of the kNN mask
    w *= keep
    np.maximum(w, w.T, out=w)
    np.fill_diagonal(w, 1.0)
    degree = w.sum(axis=1)
    isolated = degree <= 1.0 + 1e-12
    return AffinityGraph(weights=w, degree=degree, neighbor_count=neighbor_count, isolated=isolated)


def _sparse_shifted_laplacian(z: np.ndarray, neighbor_count: int):
    """2I - L as a sparse matrix, for the Lanczos path on large inputs.

    Mirrors build_affinity / normalized_laplacian semantics (rectified cosine,
    union-symmetrized kNN mask, unit self-loops) without dense N x N passes
    beyond the Gram matrix itself.
    """
    n = z.shape[0]
    w = z @ z.T
    np.fill_diagonal(w, -np.inf)  # self never enters the kNN lists
    k = min(neighbor_count, n - 1)
    top = np.argpartition(w, n - k, axis=1)[:, n - k :]
    rows = np.repeat(np.arange(n), k)
    cols = top.ravel()
    r = np.concatenate([rows, cols])
    c = np.concatenate([cols, rows])
    mask = scipy.sparse.csr_matrix(
        (np.ones(r.size, dtype=np.int8), (r, c)), shape=(n, n)
    )
    mask.sum_duplicates()
    ri, ci = mask.nonzero()
    vals = np.clip(w[ri, ci], 0.0, None)
    degree = np.ones(n)  # self-loop weight
    np.add.at(degree, ri, vals)
    inv_sqrt = 1.0 / np.sqrt(degree)
    scaled = scipy.sparse.csr_matrix((vals * inv_sqrt[ri] * inv_sqrt[ci], (ri, ci)), shape=(n, n))
    shifted = scaled + scipy.sparse.diags(1.0 + 1.0 / degree)
    return 0.5 * (shifted + shifted.T)


def normalized_laplacian(graph: AffinityGraph) -> np.ndarray:
    """L = D^{-1/2} (D - W) D^{-1/2}; symmetric with spectrum in [0, 2]."""
    inv_sqrt = 1.0 / np.sqrt(graph.degree)
    lap = -graph.weights * np.outer(inv_sqrt, inv_sqrt)
    np.fill_diagonal(lap, 1.0 - np.diag(graph.weights) / graph.degree)
    return 0.5 * (lap + lap.T)


def estimate_class_count(
    embeddings: np.ndarray,
    window: tuple[int, int] | None = None,
    level: str = "coarse",
    neighbor_count: int = 20,
    n_max: int = 2048,
    seed: int = 0,
) -> SpectralEstimate:
    """Eigengap class-count estimate over unit-norm embeddings.

    Rows are uniformly subsampled (seeded) to at most n_max before graph
    construction; the result is invariant to row permutation.
    """
    if level not in ("coarse", "fine"):
        raise ConfigError(f"level must be coarse or fine, got {level!r}")
    z = _check_unit_rows(embeddings)
    if z.shape[0] > n_max:
        rng = np.random.Generator(np.random.Philox(seed))
        idx = np.sort(rng.choice(z.shape[0], size=n_max, replace=False))
        z = z[idx]
    n = z.shape[0]
    if window is None:
        window = (2, max(3, min(100, n // 10)))
    k_min, k_max = window
    if not (2 <= k_min < k_max <= n - 1):
        raise ConfigError(f"window {window} violates 2 <= k_min < k_max <= N-1 (N={n})")

    head = min(n, k_max + 2)  # gaps are only inspected up to index k_max
    if n <= _DENSE_MAX or head >= n - 1:
        lap = normalized_laplacian(build_affinity(z, neighbor_count))
        eig = np.linalg.eigvalsh(lap)[:head]
    else:
        # Lanczos on 2I - L: its largest eigenvalues are the smallest of L,
        # where convergence is fast; deterministic start vector
        shifted = _sparse_shifted_laplacian(z, neighbor_count)
        v0 = np.full(n, 1.0 / np.sqrt(n))
        vals = eigsh(shifted, k=head, which="LA", v0=v0, tol=1e-9, return_eigenvectors=False)
        eig = np.sort(2.0 - vals)
    eig = np.clip(eig, -_EIG_TOL, 2.0 + _EIG_TOL)
    gaps = np.diff(eig)

    # gap index i counts eigenvalues below the gap (1-based): g_i = eig[i] - eig[i-1]
    window_gaps = gaps[k_min - 1 : k_max]
    coarse = int(k_min + np.argmax(window_gaps))
    after = gaps[coarse : k_max]
    fine = int(coarse + 1 + np.argmax(after)) if after.size else coarse
    return SpectralEstimate(
        eigenvalues=eig,
        gaps=gaps,
        coarse_count=coarse,
        fine_count=fine,
        search_window=(k_min, k_max),
        level=level,
    )


def count_estimation_baseline(
    embeddings: np.ndarray,
    k_max: int,
    seed: int = 0,
    restarts: int = 10,
    max_iters: int = 100,
) -> BaselineEstimate:
    """Sweep-k spherical-k-means elbow (max second difference of inertia).

    Stands in for recursive-clustering comparators; used for relative-speed
    benchmarking only.
    """
    z = _check_unit_rows(embeddings)
    if k_max < 2:
        raise ConfigError("k_max must be >= 2")
    inertias = {}
    for k in range(2, k_max + 1):
        assign = spherical_kmeans(z, k, seed=seed, max_iters=max_iters, restarts=restarts)
        inertias[k] = assign.inertia
    if inertias[2] < 1e-10:  # already one tight cluster: elbow is undefined
        return BaselineEstimate(count=2, degenerate=True)
    best_k, best_curv = 2, -np.inf
    for k in range(3, k_max):
        curv = inertias[k - 1] - 2.0 * inertias[k] + inertias[k + 1]
        if curv > best_curv:
            best_k, best_curv = k, curv
    return BaselineEstimate(count=best_k, degenerate=False)


def benchmark_estimation(
    embeddings: np.ndarray,
    k_max: int = 20,
    window: tuple[int, int] | None = None,
    neighbor_count: int = 20,
    seed: int = 0,
):
    """Wall-clock both estimators; returns a dict of counts and seconds."""
    z = _check_unit_rows(embeddings)
    t0 = time.perf_counter()
    est = estimate_class_count(z, window=window, neighbor_count=neighbor_count, seed=seed)
    t_spectral = time.perf_counter() - t0
    t0 = time.perf_counter()
    base = count_estimation_baseline(z, k_max=k_max, seed=seed)
    t_baseline = time.perf_counter() - t0
    return {
        "spectral_count": est.coarse_count,
        "spectral_seconds": t_spectral,
        "baseline_count": base.count,
        "baseline_seconds": t_baseline,
        "speedup": t_baseline / t_spectral if t_spectral > 0 else float("inf"),
    }
