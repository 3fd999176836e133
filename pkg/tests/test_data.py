"""Tests for the synthetic benchmark generator and embedding file formats."""

import numpy as np
import pytest

from geodisco.errors import ConfigError, DataError, FormatError
from geodisco.data import (
    EmbeddingDataset,
    SynthConfig,
    generate_synthetic,
    read_embeddings,
    write_embeddings,
)


class TestConfigValidation:
    @pytest.mark.parametrize(
        "kwargs",
        [
            {"d_feature": 1},
            {"d_embed": 1},
            {"num_base": 0},
            {"num_novel": 0},
            {"per_base_count": 0},
            {"imbalance_ratio": 0.5},
            {"shift_angle_deg": -1.0},
            {"shift_angle_deg": 91.0},
            {"gen_kappa": 0.0},
            {"noise_sigma": -0.1},
            {"nuisance_dim": -1},
            {"nuisance_scale": -0.5},
        ],
    )
    def test_rejects_bad_values(self, kwargs):
        with pytest.raises(ConfigError):
            SynthConfig(**kwargs)


class TestGenerator:
    def test_deterministic_bit_identical(self):
        cfg = SynthConfig(seed=3)
        b1, u1, t1 = generate_synthetic(cfg)
        b2, u2, t2 = generate_synthetic(cfg)
        assert np.array_equal(b1.features, b2.features)
        assert np.array_equal(b1.labels, b2.labels)
        assert np.array_equal(u1.features, u2.features)
        assert np.array_equal(t1, t2)

    def test_seed_changes_data(self):
        b1, _, _ = generate_synthetic(SynthConfig(seed=0))
        b2, _, _ = generate_synthetic(SynthConfig(seed=1))
        assert not np.array_equal(b1.features, b2.features)

    def test_label_rosters(self):
        cfg = SynthConfig(num_base=4, num_novel=2, seed=5)
        base, unlab, truth = generate_synthetic(cfg)
        assert set(np.unique(base.labels)) == set(range(4))
        assert set(np.unique(truth)) == set(range(6))
        assert base.base_classes == frozenset(range(4))
        assert unlab.labels is None
        assert unlab.domain == "unlabeled"
        assert base.domain == "base"

    def test_counts_and_long_tail(self):
        cfg = SynthConfig(num_base=3, num_novel=3, per_base_count=80, imbalance_ratio=8.0)
        base, unlab, truth = generate_synthetic(cfg)
        assert base.features.shape[0] == 3 * 80
        assert unlab.features.shape[0] == truth.shape[0]
        sizes = [int(np.sum(truth == c)) for c in range(3, 6)]
        assert sizes[0] == 80
        assert sizes == sorted(sizes, reverse=True)
        assert sizes[-1] == round(80 / 8.0)

    def test_single_novel_class_uses_head_count(self):
        cfg = SynthConfig(num_novel=1, per_base_count=50)
        _, _, truth = generate_synthetic(cfg)
        assert int(np.sum(truth == cfg.num_base)) == 50

    def test_tiny_tail_rejected(self):
        cfg = SynthConfig(per_base_count=10, imbalance_ratio=8.0, num_novel=3)
        with pytest.raises(DataError):
            generate_synthetic(cfg)

    def test_separation_budget_exhaustion(self):
        # far too many classes for a 2-sphere at >= 30 degrees separation
        cfg = SynthConfig(d_embed=2, num_base=10, num_novel=10, per_base_count=100)
        with pytest.raises(DataError):
            generate_synthetic(cfg)

    def test_zero_shift_keeps_domains_aligned(self):
        cfg = SynthConfig(
            shift_angle_deg=0.0, noise_sigma=0.0, nuisance_scale=0.0, gen_kappa=200.0, seed=7
        )
        base, unlab, truth = generate_synthetic(cfg)
        # class means should align across domains when no shift is applied
        for c in range(cfg.num_base):
            mb = base.features[base.labels == c].mean(axis=0)
            mu = unlab.features[truth == c].mean(axis=0)
            cos = mb @ mu / (np.linalg.norm(mb) * np.linalg.norm(mu))
            assert cos > 0.98

    def test_shift_moves_base_class_means(self):
        kw = dict(noise_sigma=0.0, nuisance_scale=0.0, gen_kappa=200.0, seed=8)
        base, unlab, truth = generate_synthetic(SynthConfig(shift_angle_deg=45.0, **kw))
        c = 0
        mb = base.features[base.labels == c].mean(axis=0)
        mu = unlab.features[truth == c].mean(axis=0)
        cos = mb @ mu / (np.linalg.norm(mb) * np.linalg.norm(mu))
        assert cos < 0.9


class TestDatasetValidation:
    def test_label_count_mismatch(self):
        with pytest.raises(DataError):
            EmbeddingDataset(
                features=np.ones((3, 2)),
                labels=np.array([0, 1]),
                domain="base",
                base_classes=frozenset({0, 1}),
            )

    def test_negative_labels(self):
        with pytest.raises(DataError):
            EmbeddingDataset(
                features=np.ones((2, 2)),
                labels=np.array([-1, 0]),
                domain="base",
                base_classes=frozenset({0}),
            )

    def test_bad_domain(self):
        with pytest.raises(DataError):
            EmbeddingDataset(
                features=np.ones((2, 2)), labels=None, domain="test", base_classes=frozenset()
            )

    def test_base_classes_must_be_present(self):
        with pytest.raises(DataError):
            EmbeddingDataset(
                features=np.ones((2, 2)),
                labels=np.array([0, 0]),
                domain="base",
                base_classes=frozenset({0, 3}),
            )


class TestBinaryFormat:
    def _dataset(self, labeled=True):
        rng = np.random.Generator(np.random.Philox(0))
        feats = rng.standard_normal((12, 4))
        if labeled:
            return EmbeddingDataset(
                features=feats,
                labels=rng.integers(0, 3, size=12),
                domain="base",
                base_classes=frozenset({0, 1, 2}),
            )
        return EmbeddingDataset(
            features=feats, labels=None, domain="unlabeled", base_classes=frozenset({0, 1})
        )

    @pytest.mark.parametrize("labeled", [True, False])
    def test_round_trip(self, tmp_path, labeled):
        ds = self._dataset(labeled)
        path = tmp_path / "d.gcpe"
        write_embeddings(ds, path)
        back = read_embeddings(path)
        assert np.array_equal(back.features, ds.features)
        if labeled:
            assert np.array_equal(back.labels, ds.labels)
        else:
            assert back.labels is None
        assert back.domain == ds.domain
        assert back.base_classes == ds.base_classes

    def test_byte_identical_rewrite(self, tmp_path):
        ds = self._dataset()
        p1, p2 = tmp_path / "a.gcpe", tmp_path / "b.gcpe"
        write_embeddings(ds, p1)
        write_embeddings(ds, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.gcpe"
        path.write_bytes(b"NOPE" + b"\x00" * 40)
        with pytest.raises(FormatError, match="offset 0"):
            read_embeddings(path)

    def test_truncated_features(self, tmp_path):
        ds = self._dataset()
        path = tmp_path / "d.gcpe"
        write_embeddings(ds, path)
        blob = path.read_bytes()
        path.write_bytes(blob[:40])
        with pytest.raises(FormatError, match="truncated"):
            read_embeddings(path)

    def test_unsupported_version(self, tmp_path):
        ds = self._dataset()
        path = tmp_path / "d.gcpe"
        write_embeddings(ds, path)
        blob = bytearray(path.read_bytes())
        blob[4] = 9
        path.write_bytes(bytes(blob))
        with pytest.raises(FormatError, match="version"):
            read_embeddings(path)

    def test_non_finite_rejected(self, tmp_path):
        ds = self._dataset()
        path = tmp_path / "d.gcpe"
        write_embeddings(ds, path)
        blob = bytearray(path.read_bytes())
        import struct

        blob[20:28] = struct.pack("<d", float("nan"))
        path.write_bytes(bytes(blob))
        with pytest.raises(FormatError, match="non-finite"):
            read_embeddings(path)


class TestCsvFormat:
    @pytest.mark.parametrize("labeled", [True, False])
    def test_round_trip(self, tmp_path, labeled):
        rng = np.random.Generator(np.random.Philox(4))
        feats = rng.standard_normal((8, 3))
        ds = EmbeddingDataset(
            features=feats,
            labels=rng.integers(0, 2, size=8) if labeled else None,
            domain="base" if labeled else "unlabeled",
            base_classes=frozenset({0, 1}) if labeled else frozenset(),
        )
        path = tmp_path / "d.csv"
        write_embeddings(ds, path)
        back = read_embeddings(path)
        assert np.array_equal(back.features, ds.features)  # %.17g preserves doubles
        if labeled:
            assert np.array_equal(back.labels, ds.labels)
        else:
            assert back.labels is None
        assert back.domain == ds.domain
        assert back.base_classes == ds.base_classes

    def test_bad_header(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("colA,colB\n1,2\n")
        with pytest.raises(FormatError, match="header"):
            read_embeddings(path)

    def test_empty_file(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("id,label,f0\n")
        with pytest.raises(FormatError, match="no data"):
            read_embeddings(path)

    def test_mixed_labels_rejected(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("id,label,f0\n0,1,0.5\n1,,0.25\n")
        with pytest.raises(FormatError, match="mixed"):
            read_embeddings(path)
