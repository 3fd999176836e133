"""Synthetic shifted long-tailed benchmarks and embedding file I/O.

The generator plants well-separated vMF class clusters on S^{d_embed-1},
lifts them into feature space through a fixed random linear map plus
Gaussian noise, rotates the unlabeled domain's base-class directions by a
configurable angle (domain shift), and gives novel classes geometrically
decaying sizes (long tail). Everything is a pure function of the seed.
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, FormatError
from .vmf import VmfParams, sample

__all__ = [
    "SynthConfig",
    "EmbeddingDataset",
    "generate_synthetic",
    "write_embeddings",
    "read_embeddings",
]

_MAGIC = b"GCPE"
_VERSION = 1
_FLAG_LABELS = 1
_FLAG_UNLABELED_DOMAIN = 2
_MIN_SEPARATION_DEG = 30.0
_MIN_NOVEL_SIZE = 5


@dataclass(frozen=True)
class SynthConfig:
    d_feature: int = 32
    d_embed: int = 16
    num_base: int = 5
    num_novel: int = 3
    per_base_count: int = 100
    imbalance_ratio: float = 8.0
    shift_angle_deg: float = 15.0
    gen_kappa: float = 20.0
    noise_sigma: float = 0.1
    nuisance_dim: int = 4
    nuisance_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if min(self.d_feature, self.d_embed) < 2:
            raise ConfigError("feature and embedding dimensions must be >= 2")
        if min(self.num_base, self.num_novel, self.per_base_count) < 1:
            raise ConfigError("class counts and per_base_count must be >= 1")
        if self.imbalance_ratio < 1.0:
            raise ConfigError("imbalance_ratio must be >= 1")
        if not (0.0 <= self.shift_angle_deg <= 90.0):
            raise ConfigError("shift_angle_deg must lie in [0, 90]")
        if self.gen_kappa <= 0:
            raise ConfigError("gen_kappa must be positive")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be >= 0")
        if self.nuisance_dim < 0:
            raise ConfigError("nuisance_dim must be >= 0")
        if self.nuisance_scale < 0:
            raise ConfigError("nuisance_scale must be >= 0")


@dataclass(frozen=True)
class EmbeddingDataset:
    features: np.ndarray
    labels: np.ndarray | None
    domain: str  # "base" | "unlabeled"
    base_classes: frozenset

    def __post_init__(self):
        f = np.asarray(self.features, dtype=float)
        object.__setattr__(self, "features", f)
        if self.labels is not None:
            lab = np.asarray(self.labels, dtype=int)
            if lab.min(initial=0) < 0:
                raise DataError("labels must be non-negative")
            if lab.shape[0] != f.shape[0]:
                raise DataError("label count does not match feature rows")
            object.__setattr__(self, "labels", lab)
        if self.domain not in ("base", "unlabeled"):
            raise DataError(f"domain must be base or unlabeled, got {self.domain!r}")
        if self.domain == "base" and self.labels is not None:
            present = set(int(v) for v in np.unique(self.labels))
            if not set(self.base_classes) <= present:
                raise DataError("base_classes must appear among base-split labels")


def _separated_directions(rng, count: int, dim: int) -> np.ndarray:
    """Rejection-sample unit directions with pairwise angle >= 30 degrees."""
    min_cos = math.cos(math.radians(_MIN_SEPARATION_DEG))
    dirs: list[np.ndarray] = []
    budget = 2000 * count
    while len(dirs) < count:
        if budget <= 0:
            raise DataError(
                f"could not place {count} directions at >= {_MIN_SEPARATION_DEG} deg "
                f"separation in d={dim}; reduce class count or raise d_embed"
            )
        budget -= 1
        cand = rng.standard_normal(dim)
        cand /= np.linalg.norm(cand)
        if all(float(cand @ d) < min_cos for d in dirs):
            dirs.append(cand)
    return np.stack(dirs)


def _rotate_by_angle(rng, direction: np.ndarray, angle_rad: float) -> np.ndarray:
    """Rotate exactly angle_rad in the plane spanned by direction and a random
    orthogonal vector."""
    if angle_rad == 0.0:
        return direction.copy()
    w = rng.standard_normal(direction.size)
    w -= (w @ direction) * direction
    w /= np.linalg.norm(w)
    out = math.cos(angle_rad) * direction + math.sin(angle_rad) * w
    return out / np.linalg.norm(out)


def _novel_sizes(config: SynthConfig) -> list[int]:
    m = config.num_novel
    if m == 1:
        return [config.per_base_count]
    sizes = [
        int(round(config.per_base_count * config.imbalance_ratio ** (-i / (m - 1))))
        for i in range(m)
    ]
    if sizes[-1] < _MIN_NOVEL_SIZE:
        raise DataError(
            f"smallest novel class would have {sizes[-1]} < {_MIN_NOVEL_SIZE} instances; "
            "raise per_base_count or lower imbalance_ratio"
        )
    return sizes


def generate_synthetic(config: SynthConfig):
    """Returns (base EmbeddingDataset, unlabeled EmbeddingDataset, truth labels)."""
    rng = np.random.Generator(np.random.Philox(config.seed))
    total_classes = config.num_base + config.num_novel
    dirs = _separated_directions(rng, total_classes, config.d_embed)
    lift = rng.standard_normal((config.d_embed, config.d_feature)) / math.sqrt(config.d_embed)
    # low-rank nuisance directions (shared "batch effect" axes) that dominate
    # raw cosine similarity but carry no class signal
    if config.nuisance_dim > 0:
        nuisance = rng.standard_normal((config.nuisance_dim, config.d_feature))
        nuisance /= math.sqrt(config.nuisance_dim)
    else:
        nuisance = None
    shift = math.radians(config.shift_angle_deg)
    shifted_base_dirs = np.stack(
        [_rotate_by_angle(rng, dirs[c], shift) for c in range(config.num_base)]
    )

    def _emit(direction, count, sub_seed):
        z = sample(VmfParams(mu=direction, kappa=config.gen_kappa), count, sub_seed)
        x = z @ lift
        x += config.noise_sigma * rng.standard_normal(x.shape)
        if nuisance is not None and config.nuisance_scale > 0:
            coeffs = rng.standard_normal((count, config.nuisance_dim))
            x += config.nuisance_scale * (coeffs @ nuisance)
        return x

    sub_seeds = rng.integers(0, 2**63 - 1, size=2 * total_classes)

    base_feats, base_labels = [], []
    for c in range(config.num_base):
        base_feats.append(_emit(dirs[c], config.per_base_count, int(sub_seeds[c])))
        base_labels.extend([c] * config.per_base_count)

    unlab_feats, truth = [], []
    for c in range(config.num_base):
        unlab_feats.append(
            _emit(shifted_base_dirs[c], config.per_base_count, int(sub_seeds[total_classes + c]))
        )
        truth.extend([c] * config.per_base_count)
    for j, size in enumerate(_novel_sizes(config)):
        c = config.num_base + j
        unlab_feats.append(_emit(dirs[c], size, int(sub_seeds[total_classes + c])))
        truth.extend([c] * size)

    base_classes = frozenset(range(config.num_base))
    base = EmbeddingDataset(
        features=np.concatenate(base_feats),
        labels=np.asarray(base_labels),
        domain="base",
        base_classes=base_classes,
    )
    unlabeled = EmbeddingDataset(
        features=np.concatenate(unlab_feats),
        labels=None,
        domain="unlabeled",
        base_classes=base_classes,
    )
    return base, unlabeled, np.asarray(truth)


# ---------------------------------------------------------------------------
# Binary format: magic "GCPE", version u32 (=1), flags u32 (bit0 labels
# present, bit1 unlabeled domain), N u32, D u32, f64 LE row-major features,
# (if flagged) N x u32 labels, u32 base-class count, base-class ids as u32.
# CSV alternative selected by the .csv extension.
# ---------------------------------------------------------------------------


def write_embeddings(dataset: EmbeddingDataset, path) -> None:
    if str(path).endswith(".csv"):
        _write_csv(dataset, path)
        return
    n, d = dataset.features.shape
    with open(path, "wb") as fh:
        flags = 0
        if dataset.labels is not None:
            flags |= _FLAG_LABELS
        if dataset.domain == "unlabeled":
            flags |= _FLAG_UNLABELED_DOMAIN
        fh.write(_MAGIC)
        fh.write(struct.pack("<IIII", _VERSION, flags, n, d))
        fh.write(dataset.features.astype("<f8").tobytes())
        if dataset.labels is not None:
            fh.write(dataset.labels.astype("<u4").tobytes())
        ids = np.asarray(sorted(dataset.base_classes), dtype="<u4")
        fh.write(struct.pack("<I", ids.size))
        fh.write(ids.tobytes())


def read_embeddings(path) -> EmbeddingDataset:
    if str(path).endswith(".csv"):
        return _read_csv(path)
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != _MAGIC:
        raise FormatError(f"{path}: bad magic at offset 0, expected GCPE")
    if len(raw) < 20:
        raise FormatError(f"{path}: truncated header at offset {len(raw)}")
    version, flags, n, d = struct.unpack_from("<IIII", raw, 4)
    if version != _VERSION:
        raise FormatError(f"{path}: unsupported version {version} at offset 4")
    off = 20
    feat_bytes = n * d * 8
    if len(raw) < off + feat_bytes:
        raise FormatError(f"{path}: features truncated at offset {len(raw)}")
    features = np.frombuffer(raw, dtype="<f8", count=n * d, offset=off).reshape(n, d).copy()
    if not np.all(np.isfinite(features)):
        bad = int(np.flatnonzero(~np.isfinite(features.ravel()))[0])
        raise FormatError(f"{path}: non-finite value at offset {off + bad * 8}")
    off += feat_bytes
    labels = None
    if flags & _FLAG_LABELS:
        if len(raw) < off + n * 4:
            raise FormatError(f"{path}: labels truncated at offset {len(raw)}")
        labels = np.frombuffer(raw, dtype="<u4", count=n, offset=off).astype(int)
        off += n * 4
    if len(raw) < off + 4:
        raise FormatError(f"{path}: base-class block truncated at offset {len(raw)}")
    (nb,) = struct.unpack_from("<I", raw, off)
    off += 4
    if len(raw) < off + nb * 4:
        raise FormatError(f"{path}: base-class ids truncated at offset {len(raw)}")
    ids = np.frombuffer(raw, dtype="<u4", count=nb, offset=off).astype(int)
    domain = "unlabeled" if flags & _FLAG_UNLABELED_DOMAIN else "base"
    return EmbeddingDataset(
        features=features, labels=labels, domain=domain, base_classes=frozenset(int(i) for i in ids)
    )


def _write_csv(dataset: EmbeddingDataset, path) -> None:
    n, d = dataset.features.shape
    with open(path, "w", newline="") as fh:
        fh.write(f"# domain={dataset.domain}\n")
        fh.write("# base_classes=" + ",".join(str(c) for c in sorted(dataset.base_classes)) + "\n")
        writer = csv.writer(fh)
        writer.writerow(["id", "label", *[f"f{i}" for i in range(d)]])
        for i in range(n):
            label = "" if dataset.labels is None else str(int(dataset.labels[i]))
            writer.writerow([i, label, *[f"{v:.17g}" for v in dataset.features[i]]])


def _read_csv(path) -> EmbeddingDataset:
    domain = "base"
    base_classes: frozenset = frozenset()
    rows = []
    labels = []
    with open(path, newline="") as fh:
        header = None
        for line in fh:
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition("=")
                if key.strip() == "domain":
                    domain = value.strip()
                elif key.strip() == "base_classes":
                    base_classes = frozenset(
                        int(v) for v in value.split(",") if v.strip() != ""
                    )
                continue
            cells = next(csv.reader([line]))
            if header is None:
                if cells[:2] != ["id", "label"]:
                    raise FormatError(f"{path}: expected header id,label,f0.., got {cells[:2]}")
                header = cells
                continue
            labels.append(cells[1])
            rows.append([float(v) for v in cells[2:]])
    if not rows:
        raise FormatError(f"{path}: no data rows")
    have_labels = any(cell != "" for cell in labels)
    if have_labels and not all(cell != "" for cell in labels):
        raise FormatError(f"{path}: mixed labeled and unlabeled rows")
    features = np.asarray(rows, dtype=float)
    if not np.all(np.isfinite(features)):
        raise FormatError(f"{path}: non-finite feature value")
    return EmbeddingDataset(
        features=features,
        labels=np.asarray([int(v) for v in labels]) if have_labels else None,
        domain=domain,
        base_classes=base_classes,
    )
