"""Video-level features: average-pool frame embeddings, center, and project.

The projection is a PCA fitted on the pooled per-video vectors of the
training fold. Eigenvectors come from a dense symmetric eigendecomposition
of the population covariance; each component's sign is fixed so its
largest-magnitude entry is positive (ties broken by lowest index), which
makes the fitted model fully deterministic.
"""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from ._validation import as_float_matrix
from .errors import DataError


def average_pool(frames):
    """Elementwise mean across frame rows; a video must have >= 1 frame."""
    frames = as_float_matrix(frames, "frames")
    if frames.shape[0] < 1:
        raise DataError("cannot pool a video with zero frames")
    return frames.mean(axis=0)


def pool_embeddings(matrix):
    """Average-pool every post in an EmbeddingMatrix: post_id -> vector."""
    return {
        post_id: average_pool(matrix.frames_for(post_id))
        for post_id in matrix.post_ids()
    }


def _fix_signs(components):
    """Make each column's largest-magnitude entry positive (ties: lowest index)."""
    for j in range(components.shape[1]):
        column = components[:, j]
        pivot = int(np.argmax(np.abs(column)))
        if column[pivot] < 0:
            components[:, j] = -column
    return components


class FramePCA(TransformerMixin, BaseEstimator):
    """PCA over pooled frame embeddings.

    ``n_components`` is either an integer target dimension or a float in
    (0, 1), interpreted as the minimum explained-variance ratio to retain.
    """

    def __init__(self, n_components=64):
        self.n_components = n_components

    def fit(self, X, y=None):
        X = as_float_matrix(X)
        n_samples, n_features = X.shape
        if n_samples < 2:
            raise DataError(f"PCA requires at least 2 samples, got {n_samples}")
        self.mean_ = X.mean(axis=0)
        centered = X - self.mean_
        covariance = centered.T @ centered / n_samples
        eigenvalues, eigenvectors = np.linalg.eigh(covariance)
        order = np.argsort(eigenvalues)[::-1]
        eigenvalues = np.clip(eigenvalues[order], 0.0, None)
        eigenvectors = _fix_signs(eigenvectors[:, order])

        if isinstance(self.n_components, float) and 0.0 < self.n_components < 1.0:
            total = eigenvalues.sum()
            if total == 0.0:
                n_components = 1
            else:
                ratio = np.cumsum(eigenvalues) / total
                n_components = int(np.searchsorted(ratio, self.n_components) + 1)
            n_components = min(n_components, min(n_samples, n_features))
        else:
            n_components = int(self.n_components)
            if not 1 <= n_components <= min(n_samples, n_features):
                raise ValueError(
                    f"n_components={n_components} out of range "
                    f"[1, {min(n_samples, n_features)}] for a {n_samples}x{n_features} fit"
                )

        self.all_eigenvalues_ = eigenvalues
        self.eigenvalues_ = eigenvalues[:n_components].copy()
        self.components_ = eigenvectors[:, :n_components].copy()
        self.n_components_ = n_components
        self.n_features_in_ = n_features
        total = eigenvalues.sum()
        self.explained_variance_ratio_ = (
            self.eigenvalues_ / total if total > 0 else np.zeros(n_components)
        )
        return self

    def _check_fitted(self):
        if not hasattr(self, "components_"):
            raise NotFittedError("FramePCA is not fitted")

    def transform(self, X):
        """Project centered vectors: rows of X map to rows of (X - mean) @ W."""
        self._check_fitted()
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 1
        if single:
            X = X.reshape(1, -1)
        if X.shape[1] != self.n_features_in_:
            raise DataError(
                f"expected vectors of length {self.n_features_in_}, got {X.shape[1]}"
            )
        projected = (X - self.mean_) @ self.components_
        return projected[0] if single else projected

    def to_dict(self):
        self._check_fitted()
        return {
            "mean": self.mean_.tolist(),
            "components": self.components_.tolist(),  # row-major, d_in x d_out
            "eigenvalues": self.eigenvalues_.tolist(),
            "d_in": int(self.n_features_in_),
            "d_out": int(self.n_components_),
        }

    @classmethod
    def from_dict(cls, payload):
        model = cls(n_components=payload["d_out"])
        model.mean_ = np.array(payload["mean"], dtype=np.float64)
        model.components_ = np.array(payload["components"], dtype=np.float64)
        model.eigenvalues_ = np.array(payload["eigenvalues"], dtype=np.float64)
        model.n_features_in_ = int(payload["d_in"])
        model.n_components_ = int(payload["d_out"])
        total = model.eigenvalues_.sum()
        model.explained_variance_ratio_ = (
            model.eigenvalues_ / total if total > 0 else np.zeros(model.n_components_)
        )
        return model


def video_feature(pca, frames):
    """Pooled-then-projected feature for one video; equals transform(pool)."""
    return pca.transform(average_pool(frames))
