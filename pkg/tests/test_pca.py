import numpy as np
import pytest

from sqnet import pca
from sqnet.errors import CompatibilityError, DimensionError, EmptyDataset, MetricError
from sqnet.linalg import packed_size, vec_lt
from sqnet.neural.train import TrainConfig
from sqnet.sketch import OuterProductMap


def standardized(rng, n, d):
    X = rng.normal(size=(n, d)) @ rng.normal(size=(d, d))
    return (X - X.mean(0)) / X.std(0)


def test_empirical_covariance_examples():
    R = pca.empirical_covariance([[1.0, 0.0], [-1.0, 0.0]])
    np.testing.assert_array_equal(R.values, [1, 0, 0])
    a, b = 2.0, -3.0
    np.testing.assert_array_equal(pca.empirical_covariance([[a, b]], standardized=False).values, [a * a, a * b, b * b])


def test_empirical_covariance_dense_oracle(rng):
    X = standardized(rng, 200, 8)
    R = pca.empirical_covariance(X)
    dense = np.zeros((8, 8))
    for row in X:
        dense += np.outer(row, row)
    dense /= 200
    np.testing.assert_allclose(R.dense(), dense, atol=1e-12)


def test_empirical_covariance_errors():
    with pytest.raises(EmptyDataset):
        pca.empirical_covariance(np.zeros((0, 3)))


def test_unstandardized_warning():
    X = np.array([[5.0, 1.0], [6.0, -1.0], [7.0, 0.0]])
    with pytest.warns(UserWarning):
        pca.empirical_covariance(X)


def test_sketch_identity_projection(rng):
    X = standardized(rng, 50, 3)
    A = OuterProductMap(np.eye(6))
    z = pca.cpca_sketch(X, A)
    np.testing.assert_allclose(z.values, pca.empirical_covariance(X).values, atol=1e-12)


def test_sketch_single_row_projection(rng):
    x = rng.normal(size=(40, 1))
    z = pca.cpca_sketch(x, OuterProductMap(np.ones((1, 1))))
    assert z.values[0] == pytest.approx(np.mean(x**2))


def test_sketch_two_routes(rng):
    X = standardized(rng, 300, 5)
    A = pca.random_projection(5, 9, seed=3)
    z = pca.cpca_sketch(X, A)
    np.testing.assert_allclose(z.values, A.A @ pca.empirical_covariance(X).values, atol=1e-9)


def test_decode_identity_exact(rng):
    X = standardized(rng, 100, 4)
    A = OuterProductMap(np.eye(10))
    R_hat = pca.decode_covariance_random(pca.cpca_sketch(X, A), A)
    np.testing.assert_allclose(R_hat.values, pca.empirical_covariance(X).values, atol=1e-14)


def test_decode_full_size_exact(rng):
    X = standardized(rng, 1024, 16)
    A = pca.random_projection(16, 136, seed=0)
    R_hat = pca.decode_covariance_random(pca.cpca_sketch(X, A), A)
    assert np.max(np.abs(R_hat.values - pca.empirical_covariance(X).values)) <= 1e-6


def test_decode_minimum_norm_residual(rng):
    X = standardized(rng, 80, 2)
    A = pca.random_projection(2, 1, seed=5)
    z = pca.cpca_sketch(X, A)
    R_hat = pca.decode_covariance_random(z, A)
    assert abs(A.A @ R_hat.values - z.values)[0] <= 1e-8


def test_decode_rejects_foreign_sketch(rng):
    X = standardized(rng, 20, 3)
    z = pca.cpca_sketch(X, pca.random_projection(3, 4, seed=1))
    with pytest.raises(CompatibilityError):
        pca.decode_covariance_random(z, pca.random_projection(3, 4, seed=2))


def test_pca_from_cov():
    np.testing.assert_allclose(np.abs(pca.pca_from_cov(np.diag([3.0, 1.0]), 1)), [[1.0], [0.0]])
    V = pca.pca_from_cov(np.eye(4), 4)
    np.testing.assert_allclose(V @ V.T, np.eye(4), atol=1e-12)
    with pytest.raises(DimensionError):
        pca.pca_from_cov(np.eye(3), 0)


def test_pca_orthonormal(rng):
    R = pca.empirical_covariance(standardized(rng, 100, 7))
    V = pca.pca_from_cov(R, 4)
    np.testing.assert_allclose(V.T @ V, np.eye(4), atol=1e-8)


class TestRidge:
    def test_identity_r22(self):
        R = np.array([[1.0, 0.3, -0.2], [0.3, 1.0, 0.0], [-0.2, 0.0, 1.0]])
        theta = pca.ridge_from_cov(R, pca.RidgeSplit((0,), (1, 2), lam=0.0))
        np.testing.assert_allclose(theta, [[0.3, -0.2]])

    def test_zero_cross(self):
        R = np.diag([1.0, 2.0, 3.0])
        np.testing.assert_allclose(pca.ridge_from_cov(R, pca.RidgeSplit((0,), (1, 2))), [[0.0, 0.0]])

    def test_raw_data_oracle(self, rng):
        X = standardized(rng, 500, 6)
        split = pca.RidgeSplit((0,), (1, 2, 3, 4, 5))
        theta = pca.ridge_from_cov(pca.empirical_covariance(X), split)
        Y, F = X[:, :1], X[:, 1:]
        G = F.T @ F / 500
        lam = np.sqrt(np.sum(G * G))
        direct = np.linalg.solve(G + lam * np.eye(5), F.T @ Y / 500).T
        np.testing.assert_allclose(theta, direct, atol=1e-8)

    def test_overlap_rejected(self):
        with pytest.raises(DimensionError):
            pca.RidgeSplit((0, 1), (1, 2))


class TestMetrics:
    def test_self_reference(self, rng):
        X = standardized(rng, 100, 5)
        R = pca.empirical_covariance(X)
        e = pca.pca_recon_error(X, R)
        assert pca.lre(e, e) == 0.0

    def test_reversed_order_worse(self, rng):
        X = rng.normal(size=(300, 4)) * np.array([5.0, 2.0, 1.0, 0.3])
        R = pca.empirical_covariance(X, standardized=False).dense()
        Q = np.linalg.eigh(R)[1]  # ascending
        flipped = Q @ np.diag([10.0, 5.0, 2.0, 1.0]) @ Q.T  # smallest directions ranked first
        assert pca.lre(pca.pca_recon_error(X, flipped), pca.pca_recon_error(X, R)) > 0

    def test_error_matches_direct_projection(self, rng):
        X = standardized(rng, 150, 8)
        R = pca.empirical_covariance(X)
        w, Q = np.linalg.eigh(R.dense())
        Q = Q[:, ::-1]
        errs = []
        for r in range(1, 9):
            P = Q[:, :r] @ Q[:, :r].T
            errs.append(np.sum((X - X @ P) ** 2))
        assert pca.pca_recon_error(X, R) == pytest.approx(np.mean(errs), rel=1e-9, abs=1e-9)

    def test_lre_needs_positive(self):
        with pytest.raises(MetricError):
            pca.lre(1.0, 0.0)

    def test_l1(self):
        assert pca.l1_cov_error(np.array([1.0, 0.0, 1.0]), np.array([0.0, 0.0, 1.0])) == pytest.approx(1 / 3)


def test_cov_serialization_round_trip(rng):
    R = pca.empirical_covariance(standardized(rng, 30, 3))
    back = pca.CovarianceEstimate.from_bytes(R.to_bytes())
    assert back.values.tobytes() == R.values.tobytes() and back.d == 3


def test_family_is_standardized(rng):
    X = pca.CovFamily(d=6, n=200).sample(rng)
    np.testing.assert_allclose(X.mean(0), 0, atol=1e-12)
    np.testing.assert_allclose(X.std(0), 1, atol=1e-12)


class _Single(pca.CovFamily):
    def __init__(self, X):
        super().__init__(d=X.shape[1], n=X.shape[0])
        self.X = X

    def sample(self, rng, n=None):
        return self.X


def test_sqnet_zero_steps_is_initialization(rng):
    fam = pca.CovFamily(d=4, n=32)
    a = pca.meta_train_cov_sqnet(fam, 3, TrainConfig(steps=0, seed=1))
    b = pca.meta_train_cov_sqnet(fam, 3, TrainConfig(steps=0, seed=1))
    assert a.losses == []
    np.testing.assert_array_equal(a.query_net.params, b.query_net.params)
    np.testing.assert_array_equal(a.fmap.A, b.fmap.A)


def test_sqnet_overfits_single_dataset(rng):
    X = standardized(rng, 64, 4)
    model = pca.meta_train_cov_sqnet(_Single(X), packed_size(4), TrainConfig(steps=1500, lr=3e-3, seed=0), batch=2)
    z = pca.cpca_sketch(X, model.fmap)
    R_hat = pca.decode_covariance_sqnet(z, model)
    assert pca.l1_cov_error(R_hat, pca.empirical_covariance(X)) < 0.01
    assert np.all(np.abs(R_hat.values) <= 1.0)
