"""Variance-cutoff PCA against an SVD oracle and hand-built spectra."""

import numpy as np
import pytest
from sklearn.base import clone

from cropcascade import (
    DegenerateDataError,
    DimensionMismatchError,
    InsufficientDataError,
    InvalidInputError,
    VarianceCutoffPCA,
)


def random_matrix(seed: int, n: int, d: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    # Anisotropic columns so the spectrum is spread out.
    return rng.normal(0.0, 1.0, (n, d)) * np.linspace(3.0, 0.3, d) + rng.normal(
        0.0, 2.0, d
    )


class TestSpectrum:
    def test_components_are_orthonormal(self):
        X = random_matrix(0, 50, 8)
        pca = VarianceCutoffPCA(variance_fraction=1.0).fit(X)
        gram = pca.components_ @ pca.components_.T
        assert np.allclose(gram, np.eye(pca.n_components_), atol=1e-9)

    def test_explained_variances_non_increasing(self):
        X = random_matrix(1, 40, 10)
        pca = VarianceCutoffPCA(variance_fraction=1.0).fit(X)
        assert np.all(np.diff(pca.explained_variance_) <= 1e-12)
        assert np.all(pca.explained_variance_ >= 0.0)

    def test_agrees_with_svd_oracle(self):
        X = random_matrix(2, 40, 7)
        pca = VarianceCutoffPCA(variance_fraction=1.0).fit(X)
        centered = X - X.mean(axis=0)
        _, s, vt = np.linalg.svd(centered, full_matrices=False)
        oracle_variances = s**2 / (X.shape[0] - 1)
        assert pca.n_components_ == 7
        assert np.allclose(pca.explained_variance_, oracle_variances, atol=1e-8)
        # Each component matches the SVD right-singular vector up to sign.
        alignment = np.abs(np.sum(pca.components_ * vt, axis=1))
        assert np.allclose(alignment, 1.0, atol=1e-8)

    def test_gram_route_when_features_outnumber_samples(self):
        X = random_matrix(3, 10, 30)
        pca = VarianceCutoffPCA(variance_fraction=1.0).fit(X)
        assert pca.n_components_ <= 9  # centered rank is at most n - 1
        gram = pca.components_ @ pca.components_.T
        assert np.allclose(gram, np.eye(pca.n_components_), atol=1e-9)
        # All of the data's variance is captured, so reconstruction is exact.
        assert np.allclose(pca.inverse_transform(pca.transform(X)), X, atol=1e-8)
        centered = X - X.mean(axis=0)
        _, s, _ = np.linalg.svd(centered, full_matrices=False)
        oracle = (s**2 / 9.0)[: pca.n_components_]
        assert np.allclose(pca.explained_variance_, oracle, atol=1e-8)

    def test_sign_convention_is_deterministic(self):
        X = random_matrix(4, 30, 5)
        a = VarianceCutoffPCA(variance_fraction=1.0).fit(X)
        b = VarianceCutoffPCA(variance_fraction=1.0).fit(X.copy())
        assert np.array_equal(a.components_, b.components_)
        peaks = a.components_[
            np.arange(a.n_components_), np.abs(a.components_).argmax(axis=1)
        ]
        assert np.all(peaks > 0.0)


class TestComponentCount:
    def test_rank_one_data_needs_one_component(self):
        rng = np.random.default_rng(5)
        X = np.outer(rng.normal(size=25), rng.normal(size=6)) + 3.0
        pca = VarianceCutoffPCA(variance_fraction=0.99).fit(X)
        assert pca.n_components_ == 1
        assert np.allclose(pca.inverse_transform(pca.transform(X)), X, atol=1e-9)

    def test_cutoff_boundary_on_known_spectrum(self):
        # Centered columns [1,-2,1] and [1,0,-1] are orthogonal with exact
        # sample variances 3 and 1, so the covariance eigenvalues are [3, 1]
        # and the top component covers exactly 75% of the variance.
        X = np.array([[1.0, 1.0], [-2.0, 0.0], [1.0, -1.0]]) + np.array([10.0, 20.0])
        assert VarianceCutoffPCA(variance_fraction=0.74).fit(X).n_components_ == 1
        assert VarianceCutoffPCA(variance_fraction=0.75).fit(X).n_components_ == 1
        assert VarianceCutoffPCA(variance_fraction=0.76).fit(X).n_components_ == 2
        pca = VarianceCutoffPCA(variance_fraction=0.75).fit(X)
        assert pca.explained_variance_ == pytest.approx([3.0], abs=1e-12)
        assert pca.explained_variance_ratio_ == pytest.approx([0.75], abs=1e-12)

    def test_fraction_one_reconstructs_exactly(self):
        X = random_matrix(6, 20, 4)
        pca = VarianceCutoffPCA(variance_fraction=1.0).fit(X)
        assert pca.n_components_ == 4
        assert np.allclose(pca.inverse_transform(pca.transform(X)), X, atol=1e-9)

    def test_projection_reduces_dimension(self):
        X = random_matrix(7, 60, 12)
        pca = VarianceCutoffPCA(variance_fraction=0.5).fit(X)
        Z = pca.transform(X)
        assert Z.shape == (60, pca.n_components_)
        assert pca.n_components_ < 12
        captured = pca.explained_variance_ratio_.sum()
        assert captured >= 0.5
        # Minimality: dropping the last component dips below the target.
        if pca.n_components_ > 1:
            assert captured - pca.explained_variance_ratio_[-1] < 0.5


class TestValidation:
    def test_zero_variance_data(self):
        with pytest.raises(DegenerateDataError):
            VarianceCutoffPCA().fit(np.ones((5, 3)))

    def test_single_sample(self):
        with pytest.raises(InsufficientDataError):
            VarianceCutoffPCA().fit(np.ones((1, 3)))

    @pytest.mark.parametrize("fraction", [0.0, -0.1, 1.5, np.nan])
    def test_bad_fraction(self, fraction):
        with pytest.raises(InvalidInputError):
            VarianceCutoffPCA(variance_fraction=fraction).fit(np.eye(4))

    def test_unfitted_transform(self):
        with pytest.raises(InvalidInputError):
            VarianceCutoffPCA().transform(np.eye(3))
        with pytest.raises(InvalidInputError):
            VarianceCutoffPCA().inverse_transform(np.eye(3))

    def test_dimension_mismatches(self):
        pca = VarianceCutoffPCA(variance_fraction=1.0).fit(random_matrix(8, 20, 5))
        with pytest.raises(DimensionMismatchError):
            pca.transform(np.zeros((4, 6)))
        with pytest.raises(DimensionMismatchError):
            pca.inverse_transform(np.zeros((4, pca.n_components_ + 1)))

    def test_non_finite_and_wrong_rank_inputs(self):
        with pytest.raises(InvalidInputError):
            VarianceCutoffPCA().fit(np.array([[1.0, np.inf], [0.0, 1.0]]))
        with pytest.raises(InvalidInputError):
            VarianceCutoffPCA().fit(np.array([1.0, 2.0, 3.0]))


class TestEstimatorApi:
    def test_get_params_and_clone(self):
        pca = VarianceCutoffPCA(variance_fraction=0.8)
        assert pca.get_params() == {"variance_fraction": 0.8}
        twin = clone(pca)
        assert twin.get_params() == pca.get_params()
        assert not hasattr(twin, "components_")

    def test_set_params_roundtrip(self):
        pca = VarianceCutoffPCA().set_params(variance_fraction=0.6)
        assert pca.variance_fraction == 0.6

    def test_fit_transform_matches_fit_then_transform(self):
        X = random_matrix(9, 25, 6)
        Z1 = VarianceCutoffPCA(variance_fraction=0.9).fit_transform(X)
        Z2 = VarianceCutoffPCA(variance_fraction=0.9).fit(X).transform(X)
        assert np.array_equal(Z1, Z2)
