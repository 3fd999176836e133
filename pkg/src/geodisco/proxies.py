"""Uniformly distributed proxies on S^{d-1} via Riesz s-energy minimization.

Energy of a configuration counts both ordered pairs:
    E_s = sum_{i != j} xi_s(theta_ij),  theta_ij = geodesic distance,
with xi_s(t) = t^(-s) for s > 0 and log(1/t) for s = 0.

Minimization is projected (Riemannian) gradient descent with backtracking;
restarts are independent, so the best of several seeded initializations is
returned. A ProxySet is immutable after construction.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    ConfigError,
    DegenerateConfigurationError,
    DomainError,
    FormatError,
    ShapeError,
)

__all__ = [
    "ProxySet",
    "EnergyMinConfig",
    "geodesic_distance",
    "riesz_energy",
    "minimize_energy",
    "assign_base_proxies",
    "save_proxies",
    "load_proxies",
]

_CLAMP = 1.0 - 1e-12
_COINCIDENCE_TOL = 1e-12
_MAGIC = b"GCPX"
_VERSION = 1


@dataclass(frozen=True)
class EnergyMinConfig:
    restarts: int = 8
    max_iters: int = 2000
    step_size: float = 0.1
    tolerance: float = 1e-13

    def __post_init__(self):
        if self.restarts < 1 or self.max_iters < 1:
            raise ConfigError("restarts and max_iters must be positive")
        if self.step_size <= 0 or self.tolerance <= 0:
            raise ConfigError("step_size and tolerance must be positive")


@dataclass(frozen=True)
class ProxySet:
    """n unit vectors with their Riesz exponent, final energy, and partition."""

    vectors: np.ndarray
    s: float
    energy: float
    base_indices: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))
    open_indices: np.ndarray | None = None
    converged: bool = True

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=float)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 2:
            raise ShapeError(f"proxy matrix must be n x d with d >= 2, got {v.shape}")
        norms = np.linalg.norm(v, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-9):
            raise DomainError("proxy rows must be unit-norm within 1e-9")
        object.__setattr__(self, "vectors", v)
        v.flags.writeable = False
        base = np.asarray(self.base_indices, dtype=int)
        if self.open_indices is None:
            mask = np.ones(v.shape[0], dtype=bool)
            mask[base] = False
            object.__setattr__(self, "open_indices", np.flatnonzero(mask))
        opn = np.asarray(self.open_indices, dtype=int)
        combined = np.sort(np.concatenate([base, opn]))
        if base.size + opn.size != v.shape[0] or not np.array_equal(
            combined, np.arange(v.shape[0])
        ):
            raise ConfigError("base and open indices must partition {0..n-1}")
        object.__setattr__(self, "base_indices", base)
        object.__setattr__(self, "open_indices", opn)

    @property
    def n(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def base_vectors(self) -> np.ndarray:
        return self.vectors[self.base_indices]

    def open_vectors(self) -> np.ndarray:
        return self.vectors[self.open_indices]


def geodesic_distance(u, v) -> float:
    """arccos of the clamped inner product; range [0, pi]."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape:
        raise ShapeError(f"shape mismatch: {u.shape} vs {v.shape}")
    return float(np.arccos(np.clip(u @ v, -1.0, 1.0)))


def _pairwise_theta(vectors: np.ndarray) -> np.ndarray:
    cos = np.clip(vectors @ vectors.T, -_CLAMP, _CLAMP)
    return np.arccos(cos), cos


def riesz_energy(vectors: np.ndarray, s: float) -> float:
    """Total Riesz s-energy over ordered pairs."""
    vectors = np.asarray(vectors, dtype=float)
    if vectors.ndim != 2 or vectors.shape[0] < 2:
        raise ShapeError("need an n x d matrix with n >= 2")
    if s < 0:
        raise DomainError(f"Riesz exponent must be >= 0, got {s}")
    theta = np.arccos(np.clip(vectors @ vectors.T, -1.0, 1.0))
    iu = np.triu_indices(vectors.shape[0], k=1)
    th = theta[iu]
    if np.any(th <= _COINCIDENCE_TOL):
        raise DegenerateConfigurationError("coincident proxies: Riesz kernel is singular")
    if s > 0:
        return 2.0 * float(np.sum(th**-s))
    return -2.0 * float(np.sum(np.log(th)))


def _energy_and_grad(vectors: np.ndarray, s: float) -> tuple[float, np.ndarray]:
    theta, cos = _pairwise_theta(vectors)
    np.fill_diagonal(theta, 1.0)  # masked below
    if s > 0:
        kern = theta**-s
        dkern = -s * theta ** (-s - 1.0)
    else:
        kern = -np.log(theta)
        dkern = -1.0 / theta
    np.fill_diagonal(kern, 0.0)
    np.fill_diagonal(dkern, 0.0)
    energy = float(np.sum(kern))
    # d theta_ij / d u_i = -u_j / sqrt(1 - cos^2); both ordered pairs hit u_i
    w = dkern / np.sqrt(1.0 - cos * cos)
    np.fill_diagonal(w, 0.0)
    grad = -2.0 * (w @ vectors)
    return energy, grad


def _tangent(grad: np.ndarray, vectors: np.ndarray) -> np.ndarray:
    return grad - np.sum(grad * vectors, axis=1, keepdims=True) * vectors


def _descend(v0: np.ndarray, s: float, config: EnergyMinConfig) -> tuple[np.ndarray, float, bool]:
    v = v0.copy()
    energy, grad = _energy_and_grad(v, s)
    step = config.step_size
    converged = False
    for _ in range(config.max_iters):
        g = _tangent(grad, v)
        moved = False
        for _ in range(60):
            trial = v - step * g
            trial /= np.linalg.norm(trial, axis=1, keepdims=True)
            e_new, g_new = _energy_and_grad(trial, s)
            if e_new < energy:
                moved = True
                break
            step *= 0.5
            if step < 1e-16:
                break
        if not moved:
            converged = True
            break
        rel = (energy - e_new) / (abs(energy) + 1.0)
        v, energy, grad = trial, e_new, g_new
        step = min(step * 1.9, config.step_size * 10.0)
        if rel < config.tolerance:
            converged = True
            break
    return v, energy, converged


def minimize_energy(
    n: int,
    d: int,
    s: float = 1.0,
    config: EnergyMinConfig | None = None,
    seed: int = 0,
) -> ProxySet:
    """Best-of-restarts projected gradient descent; deterministic given seed."""
    if n < 2 or d < 2:
        raise DomainError(f"need n >= 2 and d >= 2, got n={n}, d={d}")
    if s < 0:
        raise DomainError(f"Riesz exponent must be >= 0, got {s}")
    config = config or EnergyMinConfig()
    children = np.random.SeedSequence(seed).spawn(config.restarts)
    best = None
    for child in children:
        rng = np.random.Generator(np.random.Philox(child))
        v0 = rng.standard_normal((n, d))
        v0 /= np.linalg.norm(v0, axis=1, keepdims=True)
        v, energy, converged = _descend(v0, s, config)
        if best is None or energy < best[1]:
            best = (v, energy, converged)
    v, _, converged = best
    # canonical energy via the ordered-pair sum so file round-trips agree exactly
    return ProxySet(vectors=v, s=float(s), energy=riesz_energy(v, s), converged=converged)


def assign_base_proxies(
    proxies: ProxySet, num_base: int, seed: int = 0, method: str = "random"
) -> ProxySet:
    """Partition the proxy set into base and open indices.

    `random` draws num_base indices uniformly (the default); `spread` greedily
    maximizes the minimum pairwise geodesic distance of the chosen set.
    """
    if num_base > proxies.n:
        raise ConfigError(f"num_base={num_base} exceeds proxy count {proxies.n}")
    if num_base < 0:
        raise ConfigError("num_base must be >= 0")
    if method == "random":
        rng = np.random.Generator(np.random.Philox(seed))
        base = np.sort(rng.choice(proxies.n, size=num_base, replace=False))
    elif method == "spread":
        base = _spread_selection(proxies.vectors, num_base)
    else:
        raise ConfigError(f"unknown assignment method {method!r}")
    mask = np.ones(proxies.n, dtype=bool)
    mask[base] = False
    return replace(proxies, base_indices=base, open_indices=np.flatnonzero(mask))


def _spread_selection(vectors: np.ndarray, num_base: int) -> np.ndarray:
    if num_base == 0:
        return np.empty(0, dtype=int)
    chosen = [0]
    cos = vectors @ vectors.T
    while len(chosen) < num_base:
        closest = np.max(cos[:, chosen], axis=1)
        closest[chosen] = np.inf
        chosen.append(int(np.argmin(closest)))
    return np.sort(np.asarray(chosen, dtype=int))


# ---------------------------------------------------------------------------
# Proxy file format: magic "GCPX", version u32, n u32, d u32, s f64,
# n*d little-endian f64 row-major, u32 base count, base indices as u32.
# ---------------------------------------------------------------------------


def save_proxies(proxies: ProxySet, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<III", _VERSION, proxies.n, proxies.dim))
        fh.write(struct.pack("<d", proxies.s))
        fh.write(proxies.vectors.astype("<f8").tobytes())
        fh.write(struct.pack("<I", proxies.base_indices.size))
        fh.write(proxies.base_indices.astype("<u4").tobytes())


def load_proxies(path) -> ProxySet:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != _MAGIC:
        raise FormatError(f"{path}: bad magic at offset 0, expected GCPX")
    try:
        version, n, d = struct.unpack_from("<III", raw, 4)
        if version != _VERSION:
            raise FormatError(f"{path}: unsupported version {version} at offset 4")
        (s,) = struct.unpack_from("<d", raw, 16)
        off = 24
        vec_bytes = n * d * 8
        if len(raw) < off + vec_bytes + 4:
            raise FormatError(f"{path}: truncated at offset {len(raw)}")
        vectors = np.frombuffer(raw, dtype="<f8", count=n * d, offset=off).reshape(n, d).copy()
        off += vec_bytes
        (nb,) = struct.unpack_from("<I", raw, off)
        off += 4
        if len(raw) < off + nb * 4:
            raise FormatError(f"{path}: truncated at offset {len(raw)}")
        base = np.frombuffer(raw, dtype="<u4", count=nb, offset=off).astype(int)
    except struct.error as exc:
        raise FormatError(f"{path}: truncated header ({exc})") from exc
    if not np.all(np.isfinite(vectors)):
        bad = int(np.flatnonzero(~np.isfinite(vectors.ravel()))[0])
        raise FormatError(f"{path}: non-finite value at offset {24 + bad * 8}")
    energy = riesz_energy(vectors, s) if n >= 2 else 0.0
    return ProxySet(vectors=vectors, s=s, energy=energy, base_indices=base)
