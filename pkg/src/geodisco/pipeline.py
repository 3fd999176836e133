"""Clustering and evaluation: spherical k-means, Hungarian matching, metrics.

Clustering operates on mean directions only; the concentration is an
uncertainty measure and is discarded at inference. Evaluation applies one
global Hungarian match over all classes and reads the known/novel subset
metrics off that single permutation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ConfigError, DataError, ShapeError

__all__ = [
    "ClusterAssignment",
    "MetricsReport",
    "spherical_kmeans",
    "hungarian_match",
    "compute_metrics",
    "discover",
]

_MAX_CLASSES = 512


@dataclass(frozen=True)
class ClusterAssignment:
    labels: np.ndarray
    centroids: np.ndarray
    inertia: float
    n_iter: int = 0
    converged: bool = True
    inertia_trace: tuple[float, ...] = ()


@dataclass(frozen=True)
class MetricsReport:
    acc_all: float
    acc_known: float
    acc_novel: float
    f1_all: float
    f1_known: float
    f1_novel: float
    permutation: dict
    counts: dict

    def to_dict(self) -> dict:
        return {
            "acc_all": self.acc_all,
            "acc_known": self.acc_known,
            "acc_novel": self.acc_novel,
            "f1_all": self.f1_all,
            "f1_known": self.f1_known,
            "f1_novel": self.f1_novel,
            "permutation": {str(k): int(v) for k, v in self.permutation.items()},
            "counts": {str(k): int(v) for k, v in self.counts.items()},
        }


# ---------------------------------------------------------------------------
# Spherical k-means
# ---------------------------------------------------------------------------


def _kmeanspp_init(z: np.ndarray, k: int, rng) -> np.ndarray:
    """k-means++ seeding under cosine distance (1 - z . c)."""
    n = z.shape[0]
    centroids = np.empty((k, z.shape[1]))
    centroids[0] = z[rng.integers(n)]
    dist = 1.0 - z @ centroids[0]
    for j in range(1, k):
        d = np.clip(dist, 0.0, None)
        total = d.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = rng.choice(n, p=d / total)
        centroids[j] = z[idx]
        dist = np.minimum(dist, 1.0 - z @ centroids[j])
    return centroids


def _kmeans_once(z: np.ndarray, k: int, rng, max_iters: int) -> ClusterAssignment:
    n = z.shape[0]
    centroids = _kmeanspp_init(z, k, rng)
    labels = np.full(n, -1)
    converged = False
    trace = []
    it = 0
    for it in range(1, max_iters + 1):
        sims = z @ centroids.T
        new_labels = np.argmax(sims, axis=1)
        trace.append(float(np.sum(1.0 - np.max(sims, axis=1))))
        if np.array_equal(new_labels, labels):
            converged = True
            break
        labels = new_labels
        for j in range(k):
            members = z[labels == j]
            if members.size == 0:
                continue
            m = members.sum(axis=0)
            norm = np.linalg.norm(m)
            if norm < 1e-12:
                # degenerate (zero-mean) cluster: reseed from the farthest point
                far = int(np.argmin(np.max(z @ centroids.T, axis=1)))
                centroids[j] = z[far]
            else:
                centroids[j] = m / norm
        empty = np.setdiff1d(np.arange(k), np.unique(labels))
        for j in empty:
            far = int(np.argmin(np.max(z @ centroids.T, axis=1)))
            centroids[j] = z[far]
    inertia = float(np.sum(1.0 - np.max(z @ centroids.T, axis=1)))
    labels = np.argmax(z @ centroids.T, axis=1)
    return ClusterAssignment(
        labels=labels,
        centroids=centroids,
        inertia=inertia,
        n_iter=it,
        converged=converged,
        inertia_trace=tuple(trace),
    )


def spherical_kmeans(
    embeddings: np.ndarray,
    k: int,
    seed: int = 0,
    max_iters: int = 100,
    restarts: int = 1,
) -> ClusterAssignment:
    """Cosine k-means on unit rows; best of `restarts` seeded runs."""
    z = np.asarray(embeddings, dtype=float)
    if z.ndim != 2:
        raise ShapeError(f"need an N x d matrix, got {z.shape}")
    if not (1 <= k <= z.shape[0]):
        raise ConfigError(f"k={k} must lie in [1, N={z.shape[0]}]")
    norms = np.linalg.norm(z, axis=1)
    if np.any(norms < 1e-12):
        raise DataError("zero-norm embedding row")
    z = z / norms[:, None]
    best = None
    for child in np.random.SeedSequence(seed).spawn(restarts):
        rng = np.random.Generator(np.random.Philox(child))
        run = _kmeans_once(z, k, rng, max_iters)
        if best is None or run.inertia < best.inertia:
            best = run
    return best


# ---------------------------------------------------------------------------
# Hungarian matching and metrics
# ---------------------------------------------------------------------------


def hungarian_match(pred_labels, true_labels) -> tuple[dict, int]:
    """Optimal cluster-to-class map maximizing matched instances.

    Returns (mapping, total overlap); clusters matched to padding columns map
    to -1.
    """
    pred = np.asarray(pred_labels)
    true = np.asarray(true_labels)
    if pred.size == 0 or pred.shape != true.shape:
        raise DataError("label sequences must be equal-length and non-empty")
    pred_vals = np.unique(pred)
    true_vals = np.unique(true)
    if pred_vals.size > _MAX_CLASSES or true_vals.size > _MAX_CLASSES:
        raise DataError(f"class counts above {_MAX_CLASSES} are not supported")
    side = max(pred_vals.size, true_vals.size)
    cont = np.zeros((side, side))
    p_ix = {v: i for i, v in enumerate(pred_vals)}
    t_ix = {v: i for i, v in enumerate(true_vals)}
    for p, t in zip(pred, true):
        cont[p_ix[p], t_ix[t]] += 1
    rows, cols = linear_sum_assignment(cont, maximize=True)
    mapping = {}
    overlap = 0
    for r, c in zip(rows, cols):
        if r < pred_vals.size:
            mapping[int(pred_vals[r])] = int(true_vals[c]) if c < true_vals.size else -1
            overlap += int(cont[r, c])
    return mapping, overlap


def compute_metrics(pred_labels, true_labels, base_class_set) -> MetricsReport:
    """Acc/F1 over all, known, and novel classes under one global match."""
    pred = np.asarray(pred_labels)
    true = np.asarray(true_labels)
    base = set(int(c) for c in base_class_set)
    true_vals = set(int(v) for v in np.unique(true))
    if not base <= true_vals:
        raise DataError(f"base classes {sorted(base - true_vals)} absent from true labels")
    mapping, _ = hungarian_match(pred, true)
    mapped = np.array([mapping[int(p)] for p in pred])

    known_mask = np.isin(true, sorted(base))
    novel_mask = ~known_mask
    correct = mapped == true

    def _acc(mask):
        return float(np.mean(correct[mask])) if mask.any() else 0.0

    def _f1(classes):
        scores = []
        for c in classes:
            tp = int(np.sum((mapped == c) & (true == c)))
            fp = int(np.sum((mapped == c) & (true != c)))
            fn = int(np.sum((true == c) & (mapped != c)))
            denom = 2 * tp + fp + fn
            scores.append(2.0 * tp / denom if denom else 0.0)
        return float(np.mean(scores)) if scores else 0.0

    known_classes = sorted(base)
    novel_classes = sorted(true_vals - base)
    counts = {c: int(np.sum(true == c)) for c in sorted(true_vals)}
    return MetricsReport(
        acc_all=float(np.mean(correct)),
        acc_known=_acc(known_mask),
        acc_novel=_acc(novel_mask),
        f1_all=_f1(known_classes + novel_classes),
        f1_known=_f1(known_classes),
        f1_novel=_f1(novel_classes),
        permutation=mapping,
        counts=counts,
    )


# ---------------------------------------------------------------------------
# End-to-end discovery
# ---------------------------------------------------------------------------


def discover(model, unlabeled_features, k: int | None = None, seed: int = 0):
    """Encode, (optionally) estimate the class count, and cluster.

    Returns (ClusterAssignment, stage log). The estimator stage only appears
    in the log when k is not supplied.
    """
    from .encoder import encode_batch
    from .spectral import estimate_class_count

    mu, _, _ = encode_batch(model, unlabeled_features)
    stages = ["encode"]
    if k is None:
        est = estimate_class_count(mu, seed=seed)
        k = est.coarse_count
        stages.append("estimate")
    assignment = spherical_kmeans(mu, k, seed=seed)
    stages.append("cluster")
    return assignment, {"stages": stages, "k": int(k)}
