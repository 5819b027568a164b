"""PCA that keeps the smallest component count reaching a variance target."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .errors import (
    DegenerateDataError,
    DimensionMismatchError,
    InsufficientDataError,
    InvalidInputError,
)


def _validate_matrix(X, *, name: str = "X") -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise InvalidInputError(f"{name} must be 2-D, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise InvalidInputError(f"{name} contains non-finite values")
    return X


class VarianceCutoffPCA(BaseEstimator, TransformerMixin):
    """Principal components truncated at a cumulative-variance fraction.

    `n_components_` is the smallest k whose top-k eigenvalues of the sample
    covariance sum to at least `variance_fraction` of the total variance.
    Works in whichever space is cheaper: the d x d covariance when d <= n,
    otherwise the n x n Gram matrix (the two share their nonzero spectrum).

    Component signs are fixed so each component's largest-magnitude entry
    is positive, making fitted models reproducible across runs.
    """

    def __init__(self, variance_fraction: float = 0.99):
        self.variance_fraction = variance_fraction

    def fit(self, X, y=None):
        if not 0.0 < self.variance_fraction <= 1.0:
            raise InvalidInputError(
                f"variance_fraction must lie in (0, 1], got {self.variance_fraction}"
            )
        X = _validate_matrix(X)
        n, d = X.shape
        if n < 2:
            raise InsufficientDataError("PCA needs at least 2 samples")
        self.mean_ = X.mean(axis=0)
        centered = X - self.mean_
        eigenvalues, components = self._spectrum(centered)
        total = float(eigenvalues.sum())
        if total <= 0.0:
            raise DegenerateDataError("data has zero variance; nothing to project")
        cumulative = np.cumsum(eigenvalues)
        k = int(np.searchsorted(cumulative, self.variance_fraction * total) + 1)
        k = min(k, eigenvalues.size)
        # Deterministic sign: largest-|entry| of each component points positive.
        kept = components[:k].copy()
        flip = kept[np.arange(k), np.abs(kept).argmax(axis=1)] < 0
        kept[flip] *= -1.0
        self.components_ = kept
        self.explained_variance_ = eigenvalues[:k].copy()
        self.explained_variance_ratio_ = self.explained_variance_ / total
        self.n_components_ = k
        self.n_features_in_ = d
        return self

    @staticmethod
    def _spectrum(centered: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Eigenvalues (descending, clipped at 0) and unit components (rows)."""
        n, d = centered.shape
        if d <= n:
            cov = centered.T @ centered / (n - 1)
            eigenvalues, vectors = np.linalg.eigh(cov)
            order = np.argsort(eigenvalues)[::-1]
            return np.clip(eigenvalues[order], 0.0, None), vectors[:, order].T
        # Gram trick: eigh of the n x n matrix, then map back to feature space.
        gram = centered @ centered.T / (n - 1)
        eigenvalues, vectors = np.linalg.eigh(gram)
        order = np.argsort(eigenvalues)[::-1]
        eigenvalues = np.clip(eigenvalues[order], 0.0, None)
        vectors = vectors[:, order]
        positive = eigenvalues > 1e-12 * max(eigenvalues[0], 1.0)
        eigenvalues = eigenvalues[positive]
        scale = np.sqrt((n - 1) * eigenvalues)
        components = (centered.T @ vectors[:, positive]) / scale
        return eigenvalues, components.T

    def _check_fitted(self) -> None:
        if not hasattr(self, "components_"):
            raise InvalidInputError("this PCA instance is not fitted yet")

    def transform(self, X) -> np.ndarray:
        self._check_fitted()
        X = _validate_matrix(X)
        if X.shape[1] != self.n_features_in_:
            raise DimensionMismatchError(
                f"expected {self.n_features_in_} features, got {X.shape[1]}"
            )
        return (X - self.mean_) @ self.components_.T

    def inverse_transform(self, Z) -> np.ndarray:
        self._check_fitted()
        Z = _validate_matrix(Z, name="Z")
        if Z.shape[1] != self.n_components_:
            raise DimensionMismatchError(
                f"expected {self.n_components_} components, got {Z.shape[1]}"
            )
        return Z @ self.components_ + self.mean_
