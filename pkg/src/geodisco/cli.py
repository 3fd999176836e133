"""Command-line front end: synth, proxies, train, estimate, discover, eval,
bench-estimate.

Every subcommand is a pure function of its files, config, and flags; all
randomness flows from explicit seeds, so reruns are byte-identical. Exit
codes: 0 success, 1 usage/configuration error, 2 data or file-format error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys

import numpy as np

from . import data as dataio
from . import encoder, losses, pipeline, proxies, spectral
from .errors import ConfigError, DataError, FormatError, NumericalError

__all__ = ["main", "dispatch"]

_EXIT_USAGE = 1
_EXIT_DATA = 2
_EXIT_NUMERICAL = 3


class _Parser(argparse.ArgumentParser):
    """argparse that signals usage errors through ConfigError (exit 1)."""

    def error(self, message):
        raise ConfigError(message)


# ---------------------------------------------------------------------------
# Config handling
# ---------------------------------------------------------------------------


def _build_dataclass(cls, payload: dict, where: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(payload) - names
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}; allowed {sorted(names)}")
    return cls(**payload)


def _load_config(path, section: str, cls, allowed_sections):
    if path is None:
        return cls()
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise DataError(f"config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"config {path}: invalid object notation ({exc})") from exc
    if not isinstance(doc, dict):
        raise FormatError(f"config {path}: top level must be an object")
    unknown = set(doc) - set(allowed_sections)
    if unknown:
        raise ConfigError(
            f"config {path}: unknown sections {sorted(unknown)}; allowed {sorted(allowed_sections)}"
        )
    return _build_dataclass(cls, doc.get(section, {}), f"config {path} [{section}]")


def _emit(obj: dict, out_path=None) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True)
    print(text)
    if out_path:
        with open(out_path, "w") as fh:
            fh.write(text + "\n")


def _write_labels(labels, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "label"])
        for i, lab in enumerate(labels):
            writer.writerow([i, int(lab)])


def _read_labels(path) -> np.ndarray:
    try:
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r]
    except OSError as exc:
        raise DataError(f"labels {path}: {exc}") from exc
    if not rows:
        raise FormatError(f"labels {path}: empty file")
    if rows[0] and rows[0][0] == "index":
        rows = rows[1:]
    try:
        return np.asarray([int(r[-1]) for r in rows])
    except ValueError as exc:
        raise FormatError(f"labels {path}: non-integer label ({exc})") from exc


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

_RUN_SECTIONS = ("synth", "energy", "train", "weights", "window", "seeds")


def _cmd_synth(args) -> int:
    cfg = _load_config(args.config, "synth", dataio.SynthConfig, _RUN_SECTIONS)
    base, unlabeled, truth = dataio.generate_synthetic(cfg)
    import os

    os.makedirs(args.out_dir, exist_ok=True)
    dataio.write_embeddings(base, os.path.join(args.out_dir, "base.gcpe"))
    dataio.write_embeddings(unlabeled, os.path.join(args.out_dir, "unlabeled.gcpe"))
    _write_labels(truth, os.path.join(args.out_dir, "truth.csv"))
    _emit(
        {
            "stage": "synth",
            "base_count": int(base.features.shape[0]),
            "unlabeled_count": int(unlabeled.features.shape[0]),
            "d_feature": int(base.features.shape[1]),
            "class_sizes": {str(k): int(v) for k, v in zip(*np.unique(truth, return_counts=True))},
        }
    )
    return 0


def _cmd_proxies(args) -> int:
    cfg = _load_config(args.config, "energy", proxies.EnergyMinConfig, _RUN_SECTIONS)
    pset = proxies.minimize_energy(args.count, args.dim, s=args.s, config=cfg, seed=args.seed)
    if args.num_base:
        pset = proxies.assign_base_proxies(pset, args.num_base, seed=args.seed)
    proxies.save_proxies(pset, args.out)
    _emit(
        {
            "stage": "proxies",
            "n": pset.n,
            "dim": pset.dim,
            "s": pset.s,
            "energy": pset.energy,
            "base_indices": [int(i) for i in pset.base_indices],
        }
    )
    return 0


def _cmd_train(args) -> int:
    cfg = _load_config(args.config, "train", encoder.TrainConfig, _RUN_SECTIONS)
    weights = _load_config(args.config, "weights", losses.LossWeights, _RUN_SECTIONS)
    cfg = dataclasses.replace(cfg, weights=weights)
    base = dataio.read_embeddings(args.base)
    unlabeled = dataio.read_embeddings(args.unlabeled)
    if base.labels is None:
        raise DataError(f"train: base split {args.base} carries no labels")
    pset = proxies.load_proxies(args.proxies)
    model = encoder.init_model(
        base.features.shape[1], list(args.hidden), pset.dim, seed=cfg.seed
    )
    trained, trace = encoder.train(model, base, unlabeled, pset, cfg)
    encoder.save_model(trained, args.out)
    if args.trace:
        with open(args.trace, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "loss"])
            for i, v in enumerate(trace):
                writer.writerow([i, f"{v:.17g}"])
    if args.plot:
        from .plots import plot_loss_trace

        plot_loss_trace(trace, args.plot)
    n = len(trace)
    _emit(
        {
            "stage": "train",
            "iterations": n,
            "initial_loss": trace[0],
            "final_loss": trace[-1],
            "leading_mean": float(np.mean(trace[: max(1, n // 20)])),
            "trailing_mean": float(np.mean(trace[-max(1, n // 20) :])),
        }
    )
    return 0


def _parse_window(text):
    if text is None:
        return None
    parts = text.split(",")
    if len(parts) != 2:
        raise ConfigError(f"--window expects a,b, got {text!r}")
    try:
        return (int(parts[0]), int(parts[1]))
    except ValueError as exc:
        raise ConfigError(f"--window expects integers, got {text!r}") from exc


def _unit_embeddings(path) -> np.ndarray:
    ds = dataio.read_embeddings(path)
    z = ds.features
    norms = np.linalg.norm(z, axis=1)
    if np.any(norms < 1e-12):
        raise DataError(f"{path}: zero-norm embedding row")
    return z / norms[:, None]


def _cmd_estimate(args) -> int:
    z = _unit_embeddings(args.embeddings)
    est = spectral.estimate_class_count(
        z,
        window=_parse_window(args.window),
        level=args.level,
        neighbor_count=args.neighbor_count,
        seed=args.seed,
    )
    if args.report:
        with open(args.report, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["index", "eigenvalue", "gap"])
            for i, ev in enumerate(est.eigenvalues):
                gap = est.gaps[i - 1] if i >= 1 else 0.0
                writer.writerow([i, f"{ev:.17g}", f"{gap:.17g}"])
        if args.plot:
            from .plots import plot_spectrum

            plot_spectrum(est.eigenvalues, est.gaps, est.coarse_count, est.fine_count, args.plot)
    _emit(
        {
            "stage": "estimate",
            "coarse_count": est.coarse_count,
            "fine_count": est.fine_count,
            "selected_count": est.selected_count,
            "level": est.level,
            "search_window": list(est.search_window),
        }
    )
    return 0


def _cmd_discover(args) -> int:
    model = encoder.load_model(args.model)
    unlabeled = dataio.read_embeddings(args.unlabeled)
    assignment, log = pipeline.discover(model, unlabeled.features, k=args.k, seed=args.seed)
    _write_labels(assignment.labels, args.out)
    _emit(
        {
            "stage": "discover",
            "stages": log["stages"],
            "k": log["k"],
            "inertia": assignment.inertia,
            "n_iter": assignment.n_iter,
            "converged": assignment.converged,
        }
    )
    return 0


def _cmd_eval(args) -> int:
    pred = _read_labels(args.pred)
    truth = _read_labels(args.truth)
    try:
        base_classes = frozenset(int(v) for v in args.base_classes.split(","))
    except ValueError as exc:
        raise ConfigError(f"--base-classes expects comma-separated ints ({exc})") from exc
    report = pipeline.compute_metrics(pred, truth, base_classes)
    _emit({"stage": "eval", **report.to_dict()}, args.out)
    return 0


def _cmd_bench_estimate(args) -> int:
    z = _unit_embeddings(args.embeddings)
    result = spectral.benchmark_estimation(
        z,
        k_max=args.k_max,
        window=_parse_window(args.window),
        neighbor_count=args.neighbor_count,
        seed=args.seed,
    )
    _emit({"stage": "bench-estimate", **result})
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _build_parser() -> _Parser:
    parser = _Parser(prog="geodisco", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate the synthetic benchmark")
    p.add_argument("--config", default=None, help="JSON config (synth section)")
    p.add_argument("--out-dir", required=True, help="directory for base/unlabeled/truth files")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("proxies", help="energy-minimized proxy placement")
    p.add_argument("--dim", type=int, required=True, help="sphere ambient dimension")
    p.add_argument("--count", type=int, required=True, help="number of proxies")
    p.add_argument("--s", type=float, default=1.0, help="energy kernel exponent (default 1.0)")
    p.add_argument("--num-base", type=int, default=0, help="base proxies to assign (default 0)")
    p.add_argument("--seed", type=int, default=0, help="seed (default 0)")
    p.add_argument("--config", default=None, help="JSON config (energy section)")
    p.add_argument("--out", required=True, help="output proxy file")
    p.set_defaults(func=_cmd_proxies)

    p = sub.add_parser("train", help="train the two-head encoder")
    p.add_argument("--base", required=True, help="labeled base-split embedding file")
    p.add_argument("--unlabeled", required=True, help="unlabeled-split embedding file")
    p.add_argument("--proxies", required=True, help="proxy file")
    p.add_argument("--config", default=None, help="JSON config (train + weights sections)")
    p.add_argument(
        "--hidden", type=int, nargs="*", default=[64], help="trunk widths (default 64)"
    )
    p.add_argument("--out", required=True, help="output model file")
    p.add_argument("--trace", default=None, help="optional loss-trace CSV")
    p.add_argument("--plot", default=None, help="optional loss-trace figure (PNG)")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("estimate", help="spectral class-count estimate")
    p.add_argument("--embeddings", required=True, help="embedding file (rows normalized)")
    p.add_argument("--level", choices=["coarse", "fine"], default="coarse", help="granularity")
    p.add_argument("--window", default=None, help="search window k_min,k_max")
    p.add_argument("--neighbor-count", type=int, default=20, help="kNN degree (default 20)")
    p.add_argument("--seed", type=int, default=0, help="subsampling seed (default 0)")
    p.add_argument("--report", default=None, help="optional (index,eigenvalue,gap) CSV")
    p.add_argument("--plot", default=None, help="spectrum figure, rendered with --report")
    p.set_defaults(func=_cmd_estimate)

    p = sub.add_parser("discover", help="encode, estimate count, cluster")
    p.add_argument("--model", required=True, help="trained model file")
    p.add_argument("--unlabeled", required=True, help="unlabeled embedding file")
    p.add_argument("--k", type=int, default=None, help="cluster count (skips the estimator)")
    p.add_argument("--seed", type=int, default=0, help="seed (default 0)")
    p.add_argument("--out", required=True, help="assignment CSV (index,label)")
    p.set_defaults(func=_cmd_discover)

    p = sub.add_parser("eval", help="Hungarian-matched accuracy and F1")
    p.add_argument("--pred", required=True, help="predicted-label CSV")
    p.add_argument("--truth", required=True, help="true-label CSV")
    p.add_argument("--base-classes", required=True, help="comma-separated base class ids")
    p.add_argument("--out", default=None, help="optional metrics JSON file")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("bench-estimate", help="time spectral vs sweep-k baseline")
    p.add_argument("--embeddings", required=True, help="embedding file")
    p.add_argument("--k-max", type=int, default=20, help="baseline sweep bound (default 20)")
    p.add_argument("--window", default=None, help="search window k_min,k_max")
    p.add_argument("--neighbor-count", type=int, default=20, help="kNN degree (default 20)")
    p.add_argument("--seed", type=int, default=0, help="seed (default 0)")
    p.set_defaults(func=_cmd_bench_estimate)

    return parser


def dispatch(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return _EXIT_USAGE
    except (DataError, FormatError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return _EXIT_DATA
    except (NumericalError, FloatingPointError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return _EXIT_NUMERICAL


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
