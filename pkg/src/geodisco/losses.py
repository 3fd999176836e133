"""Geometric training objectives over vMF-parameterized embeddings.

Three terms:
  * base bounding     - negative vMF log-density of the class proxy,
  * open dispersion   - logistic margin pushing divergent instances from the
                        nearest base proxy toward the nearest open proxy,
  * open structuring  - saturating penalty -(KL + 1)^-1 over consensus pairs.

Gradients returned here are ambient (pre tangent projection) w.r.t. mu and
scalar w.r.t. kappa; candidate selection (ranking, top-k consensus) is
discrete and treated as constant under differentiation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, ShapeError
from .proxies import ProxySet
from .vmf import (
    VmfParams,
    kl_divergence,
    log_density,
    log_norm_const,
    mean_resultant,
    mean_resultant_deriv,
)

__all__ = [
    "InstanceBatch",
    "LossWeights",
    "ConsensusGraph",
    "loss_base",
    "grad_loss_base",
    "rank_open_candidates",
    "loss_dispersion",
    "grad_loss_dispersion",
    "proxy_overlaps",
    "log_proxy_overlaps",
    "consensus_pairs",
    "loss_structuring",
    "grad_loss_structuring",
    "structuring_bulk",
    "total_objective",
]


@dataclass(frozen=True)
class InstanceBatch:
    """A mini-batch view of either the base or the unlabeled split."""

    params: tuple[VmfParams, ...]
    features_index: np.ndarray
    labels: np.ndarray | None
    domain: str  # "base" | "unlabeled"

    def __post_init__(self):
        if self.domain not in ("base", "unlabeled"):
            raise ConfigError(f"domain must be base or unlabeled, got {self.domain!r}")
        if (self.labels is not None) != (self.domain == "base"):
            raise DataError("labels must be present exactly for base-domain batches")
        dims = {p.dim for p in self.params}
        if len(dims) > 1:
            raise ShapeError(f"mixed dimensions in batch: {sorted(dims)}")

    def __len__(self) -> int:
        return len(self.params)

    def mu_matrix(self) -> np.ndarray:
        return np.stack([p.mu for p in self.params])

    def kappas(self) -> np.ndarray:
        return np.array([p.kappa for p in self.params])


@dataclass(frozen=True)
class LossWeights:
    w_base: float = 1.0
    w_dis: float = 1.0
    w_str: float = 1.0
    dispersion_fraction: float = 0.25
    consensus_k: int = 3

    def __post_init__(self):
        for name in ("w_base", "w_dis", "w_str"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ConfigError(f"{name} must be finite and >= 0, got {v!r}")
        if not (0.0 < self.dispersion_fraction <= 1.0):
            raise ConfigError("dispersion_fraction must lie in (0, 1]")
        if self.consensus_k < 1:
            raise ConfigError("consensus_k must be positive")


@dataclass(frozen=True)
class ConsensusGraph:
    pairs: tuple[tuple[int, int], ...]


# ---------------------------------------------------------------------------
# Base space bounding
# ---------------------------------------------------------------------------


def loss_base(params: VmfParams, base_proxy: np.ndarray) -> float:
    """Negative log-density of the class proxy under the instance's vMF."""
    return -log_density(params, base_proxy)


def grad_loss_base(params: VmfParams, base_proxy: np.ndarray) -> tuple[np.ndarray, float]:
    proxy = np.asarray(base_proxy, dtype=float)
    if proxy.shape != params.mu.shape:
        raise ShapeError(f"shape mismatch: {proxy.shape} vs {params.mu.shape}")
    g_mu = -params.kappa * proxy
    g_kappa = mean_resultant(params.dim, params.kappa) - float(params.mu @ proxy)
    return g_mu, g_kappa


# ---------------------------------------------------------------------------
# Open space dispersion
# ---------------------------------------------------------------------------


def rank_open_candidates(batch: InstanceBatch, base_proxies: np.ndarray) -> np.ndarray:
    """Indices of the batch ordered ascending by max base-proxy log-density.

    The head of the ordering is the most divergent from every base proxy.
    Ties preserve batch order.
    """
    if batch.domain != "unlabeled":
        raise ConfigError("candidate ranking applies to unlabeled batches")
    base_proxies = np.atleast_2d(np.asarray(base_proxies, dtype=float))
    if base_proxies.shape[0] == 0:
        raise ConfigError("at least one base proxy is required")
    mu = batch.mu_matrix()
    kap = batch.kappas()
    logc = np.array([log_norm_const(p.dim, p.kappa) for p in batch.params])
    scores = logc + kap * np.max(mu @ base_proxies.T, axis=1)
    return np.argsort(scores, kind="stable")


def loss_dispersion(params: VmfParams, open_proxy, base_proxy) -> float:
    """softplus(kappa (mu.v_B - mu.v_R)): pushes mu toward the open proxy."""
    op = np.asarray(open_proxy, dtype=float)
    bp = np.asarray(base_proxy, dtype=float)
    if op.shape != params.mu.shape or bp.shape != params.mu.shape:
        raise ShapeError("proxy dimension mismatch")
    a = params.kappa * float(params.mu @ (bp - op))
    # log(1 + e^a), stable for either sign
    return float(np.logaddexp(0.0, a))


def grad_loss_dispersion(
    params: VmfParams, open_proxy, base_proxy
) -> tuple[np.ndarray, float]:
    op = np.asarray(open_proxy, dtype=float)
    bp = np.asarray(base_proxy, dtype=float)
    if op.shape != params.mu.shape or bp.shape != params.mu.shape:
        raise ShapeError("proxy dimension mismatch")
    diff = float(params.mu @ (bp - op))
    a = params.kappa * diff
    sig = 0.5 * (1.0 + math.tanh(0.5 * a))  # logistic(a), overflow-free
    return sig * params.kappa * (bp - op), sig * diff


# ---------------------------------------------------------------------------
# Open space structuring
# ---------------------------------------------------------------------------


def log_proxy_overlaps(params: VmfParams, proxies: np.ndarray) -> np.ndarray:
    """log vMF density of the instance at every proxy."""
    proxies = np.atleast_2d(np.asarray(proxies, dtype=float))
    if proxies.shape[1] != params.dim:
        raise ShapeError(f"proxy dim {proxies.shape[1]} != instance dim {params.dim}")
    logc = log_norm_const(params.dim, params.kappa)
    return logc + params.kappa * (proxies @ params.mu)


def proxy_overlaps(params: VmfParams, proxies: np.ndarray) -> np.ndarray:
    return np.exp(log_proxy_overlaps(params, proxies))


def _topk_sets(mu: np.ndarray, kap: np.ndarray, proxies: np.ndarray, k: int):
    # overlap ranking per instance is monotone in mu . proxy at fixed kappa;
    # deterministic top-k with index tie-break via stable sort
    scores = kap[:, None] * (mu @ proxies.T)
    order = np.argsort(-scores, axis=1, kind="stable")
    return [frozenset(row[:k].tolist()) for row in order]


def consensus_pairs(batch: InstanceBatch, proxies: np.ndarray, k: int) -> ConsensusGraph:
    """Pairs whose top-k proxy overlap index sets agree (as sets)."""
    proxies = np.atleast_2d(np.asarray(proxies, dtype=float))
    if not (1 <= k <= proxies.shape[0]):
        raise ConfigError(f"k={k} out of range for {proxies.shape[0]} proxies")
    sets = _topk_sets(batch.mu_matrix(), batch.kappas(), proxies, k)
    groups: dict[frozenset, list[int]] = {}
    for i, s in enumerate(sets):
        groups.setdefault(s, []).append(i)
    pairs = []
    for members in groups.values():
        for a in range(len(members)):
            for b in range(a + 1, len(members)):
                pairs.append((members[a], members[b]))
    pairs.sort()
    return ConsensusGraph(pairs=tuple(pairs))


def structuring_bulk(
    batch: InstanceBatch, pairs: tuple[tuple[int, int], ...]
) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean symmetrized structuring loss over pairs plus ambient gradients.

    Returns (mean loss, d/d mu as an m x d array, d/d kappa as length m).
    Vectorized equivalent of averaging 0.5 (L(a,b) + L(b,a)) with
    grad_loss_structuring accumulated per instance; Bessel evaluations are
    amortized to one per batch member.
    """
    if not pairs:
        raise ConfigError("structuring_bulk requires at least one pair")
    mu = batch.mu_matrix()
    kap = batch.kappas()
    d = batch.params[0].dim
    logc = np.array([log_norm_const(d, k) for k in kap])
    a = np.array([mean_resultant(d, k) for k in kap])
    a_deriv = np.array([mean_resultant_deriv(d, k) for k in kap])
    ia = np.fromiter((p[0] for p in pairs), dtype=int, count=len(pairs))
    ib = np.fromiter((p[1] for p in pairs), dtype=int, count=len(pairs))
    cos = np.sum(mu[ia] * mu[ib], axis=1)

    g_mu = np.zeros_like(mu)
    g_kap = np.zeros(len(batch))
    total = 0.0
    half = 0.5 / len(pairs)
    for p_ix, q_ix in ((ia, ib), (ib, ia)):
        kl = logc[p_ix] - logc[q_ix] + a[p_ix] * (kap[p_ix] - kap[q_ix] * cos)
        total += half * float(np.sum(-1.0 / (kl + 1.0)))
        scale = half / (kl + 1.0) ** 2
        coeff = scale * (-a[p_ix] * kap[q_ix])
        np.add.at(g_mu, p_ix, coeff[:, None] * mu[q_ix])
        np.add.at(g_mu, q_ix, coeff[:, None] * mu[p_ix])
        np.add.at(g_kap, p_ix, scale * a_deriv[p_ix] * (kap[p_ix] - kap[q_ix] * cos))
        np.add.at(g_kap, q_ix, scale * (a[q_ix] - a[p_ix] * cos))
    return total, g_mu, g_kap


def loss_structuring(p: VmfParams, q: VmfParams) -> float:
    """-(KL(p||q) + 1)^-1; lies in [-1, 0), equals -1 iff p = q."""
    return -1.0 / (kl_divergence(p, q) + 1.0)


def grad_loss_structuring(
    p: VmfParams, q: VmfParams
) -> tuple[np.ndarray, float, np.ndarray, float]:
    """Ambient gradients of loss_structuring w.r.t. (mu_p, kappa_p, mu_q, kappa_q)."""
    if p.dim != q.dim:
        raise ShapeError(f"dimension mismatch: {p.dim} vs {q.dim}")
    d = p.dim
    kl = kl_divergence(p, q)
    a_p = mean_resultant(d, p.kappa)
    a_q = mean_resultant(d, q.kappa)
    cos_pq = float(p.mu @ q.mu)
    # d KL / d *
    dkl_mu_p = -a_p * q.kappa * q.mu
    dkl_mu_q = -a_p * q.kappa * p.mu
    dkl_kp = mean_resultant_deriv(d, p.kappa) * (p.kappa - q.kappa * cos_pq)
    dkl_kq = a_q - a_p * cos_pq
    scale = 1.0 / (kl + 1.0) ** 2
    return scale * dkl_mu_p, scale * dkl_kp, scale * dkl_mu_q, scale * dkl_kq


# ---------------------------------------------------------------------------
# Combined objective
# ---------------------------------------------------------------------------


def _dispersion_selection(
    unlabeled: InstanceBatch, proxies: ProxySet, fraction: float
) -> list[tuple[int, int, int]]:
    """(instance, open proxy row, base proxy row) for the bottom-fraction."""
    base_vecs = proxies.base_vectors()
    open_vecs = proxies.open_vectors()
    order = rank_open_candidates(unlabeled, base_vecs)
    count = max(1, math.ceil(fraction * len(unlabeled)))
    mu = unlabeled.mu_matrix()
    best_open = np.argmax(mu @ open_vecs.T, axis=1)
    best_base = np.argmax(mu @ base_vecs.T, axis=1)
    return [(int(i), int(best_open[i]), int(best_base[i])) for i in order[:count]]


def total_objective(
    base_batch: InstanceBatch,
    unlabeled_batch: InstanceBatch,
    proxies: ProxySet,
    weights: LossWeights,
) -> tuple[float, dict]:
    """Weighted sum of the three loss terms with per-term diagnostics.

    Base instances are scored against their class's base proxy (class c maps
    to proxies.base_indices[c]); dispersion covers the bottom-fraction of the
    divergence ranking; structuring is symmetrized over consensus pairs.
    Empty terms contribute zero and are flagged in the components dict.
    """
    if base_batch.domain != "base":
        raise DataError("base_batch must be a base-domain batch with labels")
    if unlabeled_batch.domain != "unlabeled":
        raise DataError("unlabeled_batch must be an unlabeled-domain batch")

    components: dict[str, float | bool] = {}
    total = 0.0

    # base bounding
    if weights.w_base > 0 and len(base_batch) > 0:
        labels = np.asarray(base_batch.labels)
        if labels.min(initial=0) < 0 or labels.max(initial=-1) >= proxies.base_indices.size:
            raise DataError("base label outside the base-class roster")
        vals = [
            loss_base(p, proxies.vectors[proxies.base_indices[c]])
            for p, c in zip(base_batch.params, labels)
        ]
        term = float(np.mean(vals))
        components["base"] = term
        total += weights.w_base * term
    else:
        components["base"] = 0.0
        components["base_empty"] = True

    # open dispersion
    if weights.w_dis > 0 and len(unlabeled_batch) > 0 and proxies.open_indices.size > 0:
        sel = _dispersion_selection(unlabeled_batch, proxies, weights.dispersion_fraction)
        base_vecs = proxies.base_vectors()
        open_vecs = proxies.open_vectors()
        vals = [
            loss_dispersion(unlabeled_batch.params[i], open_vecs[r], base_vecs[b])
            for i, r, b in sel
        ]
        term = float(np.mean(vals))
        components["dispersion"] = term
        total += weights.w_dis * term
    else:
        components["dispersion"] = 0.0
        components["dispersion_empty"] = True

    # open structuring
    if weights.w_str > 0 and len(unlabeled_batch) > 1:
        graph = consensus_pairs(unlabeled_batch, proxies.vectors, weights.consensus_k)
        if graph.pairs:
            term, _, _ = structuring_bulk(unlabeled_batch, graph.pairs)
            components["structuring"] = term
            components["consensus_pairs"] = len(graph.pairs)
            total += weights.w_str * term
        else:
            components["structuring"] = 0.0
            components["structuring_empty"] = True
    else:
        components["structuring"] = 0.0
        components["structuring_empty"] = True

    return total, components
