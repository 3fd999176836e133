"""Two-head MLP mapping raw features to vMF parameters, with manual backprop.

Architecture: tanh trunk, a d-wide direction head normalized onto S^{d-1},
and a 1-wide concentration head through softplus plus a positive floor.
Training is plain SGD with momentum; all loss gradients are analytic and the
discrete candidate selections are treated as stop-gradient.
"""

from __future__ import annotations

import copy
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, FormatError, NumericalError, ShapeError
from .losses import (
    InstanceBatch,
    LossWeights,
    _dispersion_selection,
    consensus_pairs,
    grad_loss_base,
    grad_loss_dispersion,
    loss_base,
    loss_dispersion,
    structuring_bulk,
    total_objective,
)
from .proxies import ProxySet
from .vmf import VmfParams

__all__ = [
    "EncoderModel",
    "TrainConfig",
    "init_model",
    "encode",
    "encode_batch",
    "backprop",
    "train",
    "finite_diff_check",
    "save_model",
    "load_model",
]

_MAGIC = b"GCPM"
_VERSION = 1
_DEGENERATE_NORM = 1e-12
_FD_PARAM_CAP = 10_000


@dataclass
class EncoderModel:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    kappa_floor: float = 0.01

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ConfigError("weights and biases must be non-empty and aligned")
        if self.kappa_floor <= 0:
            raise ConfigError("kappa_floor must be positive")

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def embed_dim(self) -> int:
        return self.weights[-1].shape[1] - 1

    def parameter_count(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)

    def copy(self) -> "EncoderModel":
        return EncoderModel(
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            kappa_floor=self.kappa_floor,
        )


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 2000
    batch_size_base: int = 64
    batch_size_unlabeled: int = 64
    step_size: float = 1e-3
    momentum: float = 0.9
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        if self.iterations < 0:
            raise ConfigError("iterations must be >= 0")
        if self.batch_size_base < 1 or self.batch_size_unlabeled < 1:
            raise ConfigError("batch sizes must be positive")
        if self.step_size < 0:
            raise ConfigError("step_size must be >= 0")
        if not (0.0 <= self.momentum < 1.0):
            raise ConfigError("momentum must lie in [0, 1)")


def init_model(
    d_in: int, hidden: list[int], d_embed: int, seed: int = 0, kappa_floor: float = 0.01
) -> EncoderModel:
    """Xavier-initialized trunk with a (d_embed + 1)-wide output layer."""
    rng = np.random.Generator(np.random.Philox(seed))
    widths = [d_in, *hidden, d_embed + 1]
    weights, biases = [], []
    for a, b in zip(widths[:-1], widths[1:]):
        scale = math.sqrt(2.0 / (a + b))
        weights.append(rng.standard_normal((a, b)) * scale)
        biases.append(np.zeros(b))
    return EncoderModel(weights=weights, biases=biases, kappa_floor=kappa_floor)


# ---------------------------------------------------------------------------
# Forward / heads
# ---------------------------------------------------------------------------


def _forward(model: EncoderModel, x: np.ndarray):
    """Returns (raw output, list of post-activation layer inputs)."""
    acts = [x]
    h = x
    for w, b in zip(model.weights[:-1], model.biases[:-1]):
        h = np.tanh(h @ w + b)
        acts.append(h)
    out = h @ model.weights[-1] + model.biases[-1]
    return out, acts


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def _heads(model: EncoderModel, out: np.ndarray):
    """Split raw output into (mu, kappa, norms, degenerate mask)."""
    d = model.embed_dim
    v = out[:, :d]
    norms = np.linalg.norm(v, axis=1)
    degenerate = norms < _DEGENERATE_NORM
    mu = np.where(
        degenerate[:, None],
        np.eye(1, d).repeat(out.shape[0], axis=0),
        v / np.maximum(norms, _DEGENERATE_NORM)[:, None],
    )
    mu /= np.linalg.norm(mu, axis=1, keepdims=True)
    kappa = _softplus(out[:, d]) + model.kappa_floor
    return mu, kappa, norms, degenerate


def encode_batch(model: EncoderModel, features: np.ndarray):
    """(mu matrix, kappa vector, degenerate mask) for a feature matrix."""
    x = np.atleast_2d(np.asarray(features, dtype=float))
    if x.shape[1] != model.input_dim:
        raise ShapeError(f"feature dim {x.shape[1]} != model input {model.input_dim}")
    out, _ = _forward(model, x)
    mu, kappa, _, degenerate = _heads(model, out)
    return mu, kappa, degenerate


def encode(model: EncoderModel, features) -> VmfParams:
    mu, kappa, _ = encode_batch(model, np.asarray(features, dtype=float)[None, :])
    return VmfParams(mu=mu[0], kappa=float(kappa[0]))


def _batch_params(mu: np.ndarray, kappa: np.ndarray, labels, domain: str) -> InstanceBatch:
    params = tuple(VmfParams(mu=m, kappa=float(k)) for m, k in zip(mu, kappa))
    return InstanceBatch(
        params=params,
        features_index=np.arange(len(params)),
        labels=None if labels is None else np.asarray(labels),
        domain=domain,
    )


# ---------------------------------------------------------------------------
# Backprop
# ---------------------------------------------------------------------------


def _head_backward(out: np.ndarray, mu: np.ndarray, kappa_raw_grad, mu_grad, norms):
    """Chain ambient (mu, kappa) gradients back to the raw output layer."""
    n, width = out.shape
    d = width - 1
    d_out = np.zeros_like(out)
    # mu = v / ||v||  =>  dL/dv = (g - (g.mu) mu) / ||v||
    proj = mu_grad - np.sum(mu_grad * mu, axis=1, keepdims=True) * mu
    safe = np.maximum(norms, _DEGENERATE_NORM)[:, None]
    d_out[:, :d] = proj / safe
    # kappa = softplus(raw) + floor  =>  dL/draw = g * logistic(raw)
    sig = 0.5 * (1.0 + np.tanh(0.5 * out[:, d]))
    d_out[:, d] = kappa_raw_grad * sig
    return d_out


def _layers_backward(model: EncoderModel, acts, d_out: np.ndarray):
    grads_w = [None] * len(model.weights)
    grads_b = [None] * len(model.biases)
    delta = d_out
    for li in range(len(model.weights) - 1, -1, -1):
        grads_w[li] = acts[li].T @ delta
        grads_b[li] = delta.sum(axis=0)
        if li > 0:
            delta = (delta @ model.weights[li].T) * (1.0 - acts[li] ** 2)
    return grads_w, grads_b


def backprop(
    model: EncoderModel,
    base_features: np.ndarray,
    base_labels: np.ndarray,
    unlabeled_features: np.ndarray,
    proxies: ProxySet,
    weights: LossWeights,
):
    """Exact parameter gradients of the total objective.

    Returns (grads_w, grads_b, total, components).
    """
    xb = np.atleast_2d(np.asarray(base_features, dtype=float))
    xu = np.atleast_2d(np.asarray(unlabeled_features, dtype=float))
    out_b, acts_b = _forward(model, xb)
    out_u, acts_u = _forward(model, xu)
    mu_b, kap_b, norm_b, _ = _heads(model, out_b)
    mu_u, kap_u, norm_u, _ = _heads(model, out_u)

    base_batch = _batch_params(mu_b, kap_b, base_labels, "base")
    unlab_batch = _batch_params(mu_u, kap_u, None, "unlabeled")
    if base_batch.domain != "base":
        raise DataError("base batch must carry labels")

    # single pass: each term's value and gradient share one candidate selection,
    # mirroring total_objective's reduction order exactly
    components: dict = {}
    total = 0.0
    g_mu_b = np.zeros_like(mu_b)
    g_kap_b = np.zeros(len(base_batch))
    g_mu_u = np.zeros_like(mu_u)
    g_kap_u = np.zeros(len(unlab_batch))

    labels = np.asarray(base_labels)
    if weights.w_base > 0 and len(base_batch) > 0:
        if labels.min(initial=0) < 0 or labels.max(initial=-1) >= proxies.base_indices.size:
            raise DataError("base label outside the base-class roster")
        coeff = weights.w_base / len(base_batch)
        vals = []
        for i, (p, c) in enumerate(zip(base_batch.params, labels)):
            proxy = proxies.vectors[proxies.base_indices[c]]
            vals.append(loss_base(p, proxy))
            gm, gk = grad_loss_base(p, proxy)
            g_mu_b[i] += coeff * gm
            g_kap_b[i] += coeff * gk
        term = float(np.mean(vals))
        components["base"] = term
        total += weights.w_base * term
    else:
        components["base"] = 0.0
        components["base_empty"] = True

    if weights.w_dis > 0 and len(unlab_batch) > 0 and proxies.open_indices.size > 0:
        sel = _dispersion_selection(unlab_batch, proxies, weights.dispersion_fraction)
        base_vecs = proxies.base_vectors()
        open_vecs = proxies.open_vectors()
        coeff = weights.w_dis / len(sel)
        vals = []
        for i, r, b in sel:
            vals.append(loss_dispersion(unlab_batch.params[i], open_vecs[r], base_vecs[b]))
            gm, gk = grad_loss_dispersion(unlab_batch.params[i], open_vecs[r], base_vecs[b])
            g_mu_u[i] += coeff * gm
            g_kap_u[i] += coeff * gk
        term = float(np.mean(vals))
        components["dispersion"] = term
        total += weights.w_dis * term
    else:
        components["dispersion"] = 0.0
        components["dispersion_empty"] = True

    if weights.w_str > 0 and len(unlab_batch) > 1:
        graph = consensus_pairs(unlab_batch, proxies.vectors, weights.consensus_k)
        if graph.pairs:
            term, gm, gk = structuring_bulk(unlab_batch, graph.pairs)
            components["structuring"] = term
            components["consensus_pairs"] = len(graph.pairs)
            total += weights.w_str * term
            g_mu_u += weights.w_str * gm
            g_kap_u += weights.w_str * gk
        else:
            components["structuring"] = 0.0
            components["structuring_empty"] = True
    else:
        components["structuring"] = 0.0
        components["structuring_empty"] = True

    d_out_b = _head_backward(out_b, mu_b, g_kap_b, g_mu_b, norm_b)
    d_out_u = _head_backward(out_u, mu_u, g_kap_u, g_mu_u, norm_u)
    gw_b, gb_b = _layers_backward(model, acts_b, d_out_b)
    gw_u, gb_u = _layers_backward(model, acts_u, d_out_u)
    grads_w = [a + b for a, b in zip(gw_b, gw_u)]
    grads_b = [a + b for a, b in zip(gb_b, gb_u)]
    return grads_w, grads_b, total, components


def _objective_value(model, base_features, base_labels, unlabeled_features, proxies, weights):
    xb = np.atleast_2d(np.asarray(base_features, dtype=float))
    xu = np.atleast_2d(np.asarray(unlabeled_features, dtype=float))
    mu_b, kap_b, _ = encode_batch(model, xb)
    mu_u, kap_u, _ = encode_batch(model, xu)
    base_batch = _batch_params(mu_b, kap_b, base_labels, "base")
    unlab_batch = _batch_params(mu_u, kap_u, None, "unlabeled")
    return total_objective(base_batch, unlab_batch, proxies, weights)[0]


def finite_diff_check(
    model: EncoderModel,
    base_features: np.ndarray,
    base_labels: np.ndarray,
    unlabeled_features: np.ndarray,
    proxies: ProxySet,
    weights: LossWeights,
    epsilon: float = 1e-5,
) -> float:
    """Max relative error of backprop against central finite differences."""
    if not (1e-8 < epsilon < 1e-2):
        raise ConfigError(f"epsilon must lie in (1e-8, 1e-2), got {epsilon}")
    if model.parameter_count() > _FD_PARAM_CAP:
        raise ConfigError(
            f"model has {model.parameter_count()} parameters; "
            f"exhaustive check capped at {_FD_PARAM_CAP}"
        )
    grads_w, grads_b, _, _ = backprop(
        model, base_features, base_labels, unlabeled_features, proxies, weights
    )
    worst = 0.0
    arrays = list(zip(model.weights, grads_w)) + list(zip(model.biases, grads_b))
    for param, grad in arrays:
        flat = param.ravel()
        gflat = grad.ravel()
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + epsilon
            hi = _objective_value(
                model, base_features, base_labels, unlabeled_features, proxies, weights
            )
            flat[idx] = orig - epsilon
            lo = _objective_value(
                model, base_features, base_labels, unlabeled_features, proxies, weights
            )
            flat[idx] = orig
            fd = (hi - lo) / (2.0 * epsilon)
            denom = max(abs(fd), abs(gflat[idx]))
            if denom < 1e-12:
                continue  # both effectively zero
            worst = max(worst, abs(fd - gflat[idx]) / denom)
    return worst


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


def train(model, base_dataset, unlabeled_dataset, proxies: ProxySet, config: TrainConfig):
    """Seeded minibatch SGD with momentum; returns (trained copy, loss trace)."""
    base_x = np.asarray(base_dataset.features, dtype=float)
    base_y = np.asarray(base_dataset.labels)
    unlab_x = np.asarray(unlabeled_dataset.features, dtype=float)
    if base_y.min(initial=0) < 0 or base_y.max(initial=-1) >= proxies.base_indices.size:
        raise DataError("base dataset label outside the proxy base-class roster")

    model = model.copy()
    rng = np.random.Generator(np.random.Philox(config.seed))
    vel_w = [np.zeros_like(w) for w in model.weights]
    vel_b = [np.zeros_like(b) for b in model.biases]
    nb = base_x.shape[0]
    nu = unlab_x.shape[0]
    bs_b = min(config.batch_size_base, nb)
    bs_u = min(config.batch_size_unlabeled, nu)
    trace = []
    for it in range(config.iterations):
        ib = rng.choice(nb, size=bs_b, replace=False)
        iu = rng.choice(nu, size=bs_u, replace=False)
        gw, gb, total, _ = backprop(
            model, base_x[ib], base_y[ib], unlab_x[iu], proxies, config.weights
        )
        if not math.isfinite(total) or any(
            not np.all(np.isfinite(g)) for g in gw + gb
        ):
            raise NumericalError(f"non-finite loss or gradient at iteration {it}")
        for w, v, g in zip(model.weights, vel_w, gw):
            v *= config.momentum
            v -= config.step_size * g
            w += v
        for b, v, g in zip(model.biases, vel_b, gb):
            v *= config.momentum
            v -= config.step_size * g
            b += v
        trace.append(total)
    return model, trace


# ---------------------------------------------------------------------------
# Model file format: magic "GCPM", version u32, layer count u32, per layer
# (rows u32, cols u32, f64 row-major weights, f64 biases), kappa_floor f64.
# ---------------------------------------------------------------------------


def save_model(model: EncoderModel, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", _VERSION, len(model.weights)))
        for w, b in zip(model.weights, model.biases):
            fh.write(struct.pack("<II", w.shape[0], w.shape[1]))
            fh.write(w.astype("<f8").tobytes())
            fh.write(b.astype("<f8").tobytes())
        fh.write(struct.pack("<d", model.kappa_floor))


def load_model(path) -> EncoderModel:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != _MAGIC:
        raise FormatError(f"{path}: bad magic at offset 0, expected GCPM")
    try:
        version, layers = struct.unpack_from("<II", raw, 4)
        if version != _VERSION:
            raise FormatError(f"{path}: unsupported version {version} at offset 4")
        off = 12
        weights, biases = [], []
        for _ in range(layers):
            rows, cols = struct.unpack_from("<II", raw, off)
            off += 8
            need = (rows * cols + cols) * 8
            if len(raw) < off + need:
                raise FormatError(f"{path}: truncated at offset {len(raw)}")
            w = np.frombuffer(raw, dtype="<f8", count=rows * cols, offset=off)
            off += rows * cols * 8
            b = np.frombuffer(raw, dtype="<f8", count=cols, offset=off)
            off += cols * 8
            weights.append(w.reshape(rows, cols).copy())
            biases.append(b.copy())
        (kappa_floor,) = struct.unpack_from("<d", raw, off)
    except struct.error as exc:
        raise FormatError(f"{path}: truncated header ({exc})") from exc
    return EncoderModel(weights=weights, biases=biases, kappa_floor=kappa_floor)
