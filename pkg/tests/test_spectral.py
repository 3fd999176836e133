"""Tests for the eigengap class-count estimator and its k-means baseline."""

import numpy as np
import pytest

from geodisco.errors import ConfigError, DomainError, ShapeError
from geodisco.spectral import (
    build_affinity,
    count_estimation_baseline,
    estimate_class_count,
    normalized_laplacian,
)
from geodisco.vmf import VmfParams, sample


def _planted(num_clusters, seed, d=32, kappa=30.0, n_max=200, n_min=20):
    """vMF mixture on mutually orthogonal directions, long-tailed sizes."""
    rng = np.random.Generator(np.random.Philox(seed))
    q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    sizes = np.geomspace(n_max, n_min, num_clusters).round().astype(int)
    parts = [
        sample(VmfParams(mu=q[:, i], kappa=kappa), int(sizes[i]), seed * 100 + i)
        for i in range(num_clusters)
    ]
    return np.concatenate(parts)


class TestAffinity:
    def test_two_block_structure(self):
        # two orthogonal duplicated directions: affinity splits into 2x2 blocks
        z = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
        g = build_affinity(z, neighbor_count=1)
        expected = np.array(
            [
                [1.0, 1.0, 0.0, 0.0],
                [1.0, 1.0, 0.0, 0.0],
                [0.0, 0.0, 1.0, 1.0],
                [0.0, 0.0, 1.0, 1.0],
            ]
        )
        assert np.array_equal(g.weights, expected)
        assert np.array_equal(g.degree, np.full(4, 2.0))
        assert not g.isolated.any()

    def test_negative_correlations_rectified(self):
        z = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0]])
        g = build_affinity(z, neighbor_count=2)
        assert np.min(g.weights) >= 0.0
        assert g.weights[0, 1] == 0.0

    def test_symmetry_and_self_loops(self):
        rng = np.random.Generator(np.random.Philox(3))
        z = rng.standard_normal((30, 5))
        z /= np.linalg.norm(z, axis=1, keepdims=True)
        g = build_affinity(z, neighbor_count=4)
        assert np.array_equal(g.weights, g.weights.T)
        assert np.array_equal(np.diag(g.weights), np.ones(30))

    def test_non_unit_rows_rejected(self):
        with pytest.raises(DomainError):
            build_affinity(np.ones((3, 2)))

    def test_bad_neighbor_count(self):
        z = np.eye(3)
        with pytest.raises(ConfigError):
            build_affinity(z, neighbor_count=0)

    def test_bad_shape(self):
        with pytest.raises(ShapeError):
            build_affinity(np.ones(4))


class TestLaplacian:
    def test_two_block_spectrum(self):
        # each block is all-ones 2x2 with degree 2; normalized Laplacian has
        # eigenvalues {0, 1} per block, so the sorted spectrum is 0, 0, 1, 1
        z = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
        lap = normalized_laplacian(build_affinity(z, neighbor_count=1))
        eig = np.linalg.eigvalsh(lap)
        assert np.allclose(eig, [0.0, 0.0, 1.0, 1.0], atol=1e-12)

    def test_spectrum_bounds(self):
        rng = np.random.Generator(np.random.Philox(7))
        z = rng.standard_normal((60, 6))
        z /= np.linalg.norm(z, axis=1, keepdims=True)
        lap = normalized_laplacian(build_affinity(z, neighbor_count=5))
        eig = np.linalg.eigvalsh(lap)
        assert eig[0] >= -1e-9
        assert eig[-1] <= 2.0 + 1e-9
        assert abs(eig[0]) <= 1e-9  # connected or not, 0 is always present

    def test_component_count_equals_zero_eigenvalues(self):
        z = np.vstack(
            [
                sample(VmfParams(mu=np.eye(8)[i], kappa=200.0), 10, seed=i)
                for i in range(3)
            ]
        )
        lap = normalized_laplacian(build_affinity(z, neighbor_count=3))
        eig = np.linalg.eigvalsh(lap)
        assert np.sum(eig < 1e-8) == 3


class TestEstimator:
    def test_recovers_planted_count(self):
        for k in (3, 5, 7):
            z = _planted(k, seed=k)
            est = estimate_class_count(z, neighbor_count=10, seed=k)
            assert est.coarse_count == k

    def test_permutation_invariance(self):
        z = _planted(4, seed=11)
        rng = np.random.Generator(np.random.Philox(11))
        perm = rng.permutation(z.shape[0])
        a = estimate_class_count(z, neighbor_count=10, seed=0)
        b = estimate_class_count(z[perm], neighbor_count=10, seed=0)
        assert a.coarse_count == b.coarse_count
        assert np.allclose(np.sort(a.eigenvalues), np.sort(b.eigenvalues), atol=1e-9)

    def test_subsampling_is_deterministic(self):
        z = _planted(3, seed=2, n_max=600, n_min=500)
        a = estimate_class_count(z, n_max=300, seed=5)
        b = estimate_class_count(z, n_max=300, seed=5)
        assert np.array_equal(a.eigenvalues, b.eigenvalues)
        assert a.coarse_count == b.coarse_count

    def test_window_validation(self):
        z = _planted(3, seed=1)
        with pytest.raises(ConfigError):
            estimate_class_count(z, window=(1, 10))
        with pytest.raises(ConfigError):
            estimate_class_count(z, window=(5, 5))
        with pytest.raises(ConfigError):
            estimate_class_count(z, window=(2, z.shape[0]))

    def test_level_validation(self):
        z = _planted(3, seed=1)
        with pytest.raises(ConfigError):
            estimate_class_count(z, level="medium")

    def test_window_restricts_answer(self):
        z = _planted(6, seed=4)
        est = estimate_class_count(z, window=(2, 4), neighbor_count=10)
        assert 2 <= est.coarse_count <= 4

    def test_fine_exceeds_coarse(self):
        z = _planted(5, seed=9)
        est = estimate_class_count(z, level="fine", neighbor_count=10)
        assert est.fine_count > est.coarse_count
        assert est.selected_count == est.fine_count

    def test_selected_count_coarse(self):
        z = _planted(3, seed=6)
        est = estimate_class_count(z, neighbor_count=10)
        assert est.selected_count == est.coarse_count


class TestBaseline:
    def test_recovers_well_separated_count(self):
        z = _planted(4, seed=3, kappa=100.0, n_max=60, n_min=40)
        base = count_estimation_baseline(z, k_max=8, seed=0)
        assert base.count == 4
        assert not base.degenerate

    def test_degenerate_single_cluster(self):
        z = np.tile(np.eye(1, 6), (30, 1))
        base = count_estimation_baseline(z, k_max=6)
        assert base.degenerate
        assert base.count == 2

    def test_k_max_validation(self):
        with pytest.raises(ConfigError):
            count_estimation_baseline(np.eye(5), k_max=1)
