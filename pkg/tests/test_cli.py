"""End-to-end tests of the command-line interface via dispatch()."""

import json

import numpy as np
import pytest

from geodisco.cli import dispatch
from geodisco.data import EmbeddingDataset, write_embeddings


def _run(capsys, argv):
    code = dispatch(argv)
    out = capsys.readouterr()
    payload = json.loads(out.out) if code == 0 and out.out.strip() else None
    return code, payload, out.err


def _unit_blob_file(path, k=3, per=30, d=8, seed=0):
    from geodisco.vmf import VmfParams, sample

    parts = [
        sample(VmfParams(mu=np.eye(d)[i], kappa=60.0), per, seed * 10 + i) for i in range(k)
    ]
    ds = EmbeddingDataset(
        features=np.concatenate(parts), labels=None, domain="unlabeled", base_classes=frozenset()
    )
    write_embeddings(ds, path)


class TestExitCodes:
    def test_unknown_command(self, capsys):
        code, _, err = _run(capsys, ["frobnicate"])
        assert code == 1
        assert "usage error" in err

    def test_missing_required_flag(self, capsys):
        code, _, err = _run(capsys, ["synth"])
        assert code == 1

    def test_bad_window_flag(self, tmp_path, capsys):
        z = tmp_path / "z.gcpe"
        _unit_blob_file(z)
        code, _, err = _run(capsys, ["estimate", "--embeddings", str(z), "--window", "abc"])
        assert code == 1
        assert "window" in err

    def test_missing_file(self, tmp_path, capsys):
        code, _, err = _run(
            capsys, ["estimate", "--embeddings", str(tmp_path / "absent.gcpe")]
        )
        assert code == 2
        assert "data error" in err

    def test_corrupt_file(self, tmp_path, capsys):
        bad = tmp_path / "bad.gcpe"
        bad.write_bytes(b"JUNKJUNKJUNK")
        code, _, err = _run(capsys, ["estimate", "--embeddings", str(bad)])
        assert code == 2

    def test_config_unknown_key(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"synth": {"bogus_knob": 1}}))
        code, _, err = _run(
            capsys, ["synth", "--config", str(cfg), "--out-dir", str(tmp_path / "o")]
        )
        assert code == 1
        assert "bogus_knob" in err

    def test_config_unknown_section(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"mystery": {}}))
        code, _, err = _run(
            capsys, ["synth", "--config", str(cfg), "--out-dir", str(tmp_path / "o")]
        )
        assert code == 1

    def test_config_invalid_json(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text("{not json")
        code, _, err = _run(
            capsys, ["synth", "--config", str(cfg), "--out-dir", str(tmp_path / "o")]
        )
        assert code == 2

    def test_help_exits_zero(self, capsys):
        with pytest.raises(SystemExit) as exc:
            dispatch(["--help"])
        assert exc.value.code == 0
        assert "synth" in capsys.readouterr().out


class TestSynth:
    def test_writes_three_artifacts(self, tmp_path, capsys):
        out = tmp_path / "data"
        cfg = tmp_path / "cfg.json"
        cfg.write_text(
            json.dumps({"synth": {"per_base_count": 20, "num_novel": 2, "imbalance_ratio": 2.0}})
        )
        code, payload, _ = _run(capsys, ["synth", "--config", str(cfg), "--out-dir", str(out)])
        assert code == 0
        assert (out / "base.gcpe").exists()
        assert (out / "unlabeled.gcpe").exists()
        assert (out / "truth.csv").exists()
        assert payload["base_count"] == 5 * 20
        assert len(payload["class_sizes"]) == 7


class TestProxies:
    def test_writes_proxy_file(self, tmp_path, capsys):
        out = tmp_path / "p.gcpx"
        code, payload, _ = _run(
            capsys,
            ["proxies", "--dim", "4", "--count", "6", "--num-base", "2", "--out", str(out)],
        )
        assert code == 0
        assert out.exists()
        assert payload["n"] == 6
        assert payload["dim"] == 4
        assert len(payload["base_indices"]) == 2


class TestEstimateAndEval:
    def test_estimate_report_and_plot(self, tmp_path, capsys):
        z = tmp_path / "z.gcpe"
        _unit_blob_file(z, k=3)
        rep = tmp_path / "spectrum.csv"
        fig = tmp_path / "spectrum.png"
        code, payload, _ = _run(
            capsys,
            [
                "estimate",
                "--embeddings",
                str(z),
                "--neighbor-count",
                "10",
                "--report",
                str(rep),
                "--plot",
                str(fig),
            ],
        )
        assert code == 0
        assert payload["coarse_count"] == 3
        assert rep.exists() and fig.exists()
        header = rep.read_text().splitlines()[0]
        assert header == "index,eigenvalue,gap"

    def test_eval_identity_is_perfect(self, tmp_path, capsys):
        labels = tmp_path / "labels.csv"
        labels.write_text(
            "index,label\n" + "\n".join(f"{i},{i % 3}" for i in range(30)) + "\n"
        )
        code, payload, _ = _run(
            capsys,
            ["eval", "--pred", str(labels), "--truth", str(labels), "--base-classes", "0,1"],
        )
        assert code == 0
        assert payload["acc_all"] == 1.0
        assert payload["f1_novel"] == 1.0


class TestPipelineDeterminism:
    def _full_run(self, root, capsys):
        """synth -> proxies -> train -> discover -> eval, tiny settings."""
        root.mkdir(exist_ok=True)
        cfg = root / "cfg.json"
        cfg.write_text(
            json.dumps(
                {
                    "synth": {
                        "d_feature": 10,
                        "d_embed": 6,
                        "num_base": 3,
                        "num_novel": 2,
                        "per_base_count": 25,
                        "imbalance_ratio": 2.0,
                    },
                    "train": {
                        "iterations": 40,
                        "batch_size_base": 16,
                        "batch_size_unlabeled": 16,
                    },
                }
            )
        )
        assert dispatch(["synth", "--config", str(cfg), "--out-dir", str(root)]) == 0
        assert (
            dispatch(
                [
                    "proxies",
                    "--dim",
                    "6",
                    "--count",
                    "8",
                    "--num-base",
                    "3",
                    "--out",
                    str(root / "p.gcpx"),
                ]
            )
            == 0
        )
        assert (
            dispatch(
                [
                    "train",
                    "--base",
                    str(root / "base.gcpe"),
                    "--unlabeled",
                    str(root / "unlabeled.gcpe"),
                    "--proxies",
                    str(root / "p.gcpx"),
                    "--config",
                    str(cfg),
                    "--hidden",
                    "16",
                    "--out",
                    str(root / "m.gcpm"),
                    "--trace",
                    str(root / "trace.csv"),
                    "--plot",
                    str(root / "trace.png"),
                ]
            )
            == 0
        )
        assert (
            dispatch(
                [
                    "discover",
                    "--model",
                    str(root / "m.gcpm"),
                    "--unlabeled",
                    str(root / "unlabeled.gcpe"),
                    "--k",
                    "5",
                    "--out",
                    str(root / "pred.csv"),
                ]
            )
            == 0
        )
        assert (
            dispatch(
                [
                    "eval",
                    "--pred",
                    str(root / "pred.csv"),
                    "--truth",
                    str(root / "truth.csv"),
                    "--base-classes",
                    "0,1,2",
                    "--out",
                    str(root / "metrics.json"),
                ]
            )
            == 0
        )
        capsys.readouterr()

    def test_reruns_are_byte_identical(self, tmp_path, capsys):
        a, b = tmp_path / "a", tmp_path / "b"
        self._full_run(a, capsys)
        self._full_run(b, capsys)
        names = [
            "base.gcpe",
            "unlabeled.gcpe",
            "truth.csv",
            "p.gcpx",
            "m.gcpm",
            "trace.csv",
            "trace.png",
            "pred.csv",
            "metrics.json",
        ]
        for name in names:
            assert (a / name).read_bytes() == (b / name).read_bytes(), name

    def test_explicit_k_skips_estimator_stage(self, tmp_path, capsys):
        root = tmp_path / "r"
        self._full_run(root, capsys)
        code, payload, _ = _run(
            capsys,
            [
                "discover",
                "--model",
                str(root / "m.gcpm"),
                "--unlabeled",
                str(root / "unlabeled.gcpe"),
                "--k",
                "4",
                "--out",
                str(root / "pred2.csv"),
            ],
        )
        assert code == 0
        assert payload["stages"] == ["encode", "cluster"]
        assert payload["k"] == 4

    def test_discover_without_k_runs_estimator(self, tmp_path, capsys):
        root = tmp_path / "r"
        self._full_run(root, capsys)
        code, payload, _ = _run(
            capsys,
            [
                "discover",
                "--model",
                str(root / "m.gcpm"),
                "--unlabeled",
                str(root / "unlabeled.gcpe"),
                "--out",
                str(root / "pred3.csv"),
            ],
        )
        assert code == 0
        assert payload["stages"] == ["encode", "estimate", "cluster"]
        assert payload["k"] >= 2


class TestBenchEstimate:
    def test_reports_both_estimators(self, tmp_path, capsys):
        z = tmp_path / "z.gcpe"
        _unit_blob_file(z, k=4, per=40)
        code, payload, _ = _run(
            capsys, ["bench-estimate", "--embeddings", str(z), "--k-max", "6"]
        )
        assert code == 0
        for key in ("spectral_count", "baseline_count", "speedup"):
            assert key in payload
        assert payload["spectral_seconds"] > 0
        assert payload["baseline_seconds"] > 0
