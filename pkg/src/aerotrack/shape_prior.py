"""PCA shape prior over 3D keypoint shape vectors."""

import io
import zipfile
from collections import Counter

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from ._io import atomic_write_bytes
from .exceptions import ConfigError, DataError, PreconditionError
from .fleet import check_shape_vector
from .keypoints import N_KEYPOINTS, WHEEL_CENTERS

SHAPE_DIM = 3 * N_KEYPOINTS


class ShapePrior(TransformerMixin, BaseEstimator):
    """Mean shape plus the top-``n_components`` principal directions.

    Shape vectors are mean-centered but not rescaled, all coordinates being
    meters. ``transform`` maps shapes to parameter vectors ``b`` and
    ``inverse_transform`` generates shapes ``W b + s_m``; ``predict`` labels
    parameter vectors by nearest training neighbors.

    Parameters
    ----------
    n_components : int, default=5
        Basis dimension ``k``.
    n_neighbors : int, default=5
        Neighbors consulted by :meth:`predict`.
    validate_shapes : bool, default=True
        Check each training shape (ground contacts at ``z = 0``, mirror
        symmetry, length > width > 0).

    Attributes
    ----------
    mean_ : ndarray of shape (99,)
    components_ : ndarray of shape (k, 99)
        Orthonormal rows; ``W`` is its transpose.
    explained_variance_ : ndarray of shape (k,)
    explained_variance_ratio_ : ndarray of shape (k,)
    params_ : ndarray of shape (n_samples, k)
        Training parameter vectors ``b_i``.
    labels_ : ndarray of shape (n_samples,)
    templates_ : dict
        Category label -> mean of that category's ``b_i``.
    """

    def __init__(self, n_components=5, n_neighbors=5, validate_shapes=True):
        self.n_components = n_components
        self.n_neighbors = n_neighbors
        self.validate_shapes = validate_shapes

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        n, d = X.shape
        k = int(self.n_components)
        if d != SHAPE_DIM:
            raise DataError(f"shape vectors must have {SHAPE_DIM} values, got {d}")
        if k < 1 or k > SHAPE_DIM or k >= n:
            raise ConfigError(f"n_components={k} invalid for {n} samples of dimension {d}")
        if self.validate_shapes:
            for i, s in enumerate(X):
                check_shape_vector(s, name=f"shape {i}")
        labels = np.asarray(y if y is not None else ["unknown"] * n, dtype=object)
        if len(labels) != n:
            raise DataError("one label per shape is required")

        self.mean_ = X.mean(axis=0)
        centered = X - self.mean_
        _, S, Vt = np.linalg.svd(centered, full_matrices=False)
        # deterministic sign: largest-magnitude loading of each component is positive
        signs = np.sign(Vt[np.arange(len(Vt)), np.argmax(np.abs(Vt), axis=1)])
        signs[signs == 0] = 1.0
        Vt = Vt * signs[:, None]
        var = S**2 / max(n - 1, 1)
        total = var.sum()
        self.components_ = Vt[:k]
        self.explained_variance_ = var[:k]
        self.explained_variance_ratio_ = var[:k] / total if total > 0 else np.zeros(k)
        self.params_ = centered @ self.components_.T
        self.residual_ = float((S[k:] ** 2).sum())
        self.labels_ = labels
        self.templates_ = {
            lab: self.params_[labels == lab].mean(axis=0) for lab in sorted(set(labels.tolist()))
        }
        self.n_features_in_ = d
        return self

    @property
    def W(self):
        check_is_fitted(self, "components_")
        return self.components_.T

    @property
    def k(self):
        components = getattr(self, "components_", None)
        if components is None:
            check_is_fitted(self, "components_")
        return components.shape[0]

    def transform(self, X):
        check_is_fitted(self, "components_")
        X = check_array(X, dtype=np.float64)
        return (X - self.mean_) @ self.components_.T

    def inverse_transform(self, B):
        check_is_fitted(self, "components_")
        B = check_array(B, dtype=np.float64)
        if B.shape[1] != self.k:
            raise DataError(f"parameter vectors must have {self.k} values, got {B.shape[1]}")
        return B @ self.components_ + self.mean_

    def generate(self, b):
        """Body-frame keypoints ``(33, 3)`` of the shape ``W b + s_m``."""
        b = np.asarray(b, dtype=float)
        if b.shape != (self.k,):
            raise DataError(f"parameter vector must have {self.k} values, got shape {b.shape}")
        return (b @ self.components_ + self.mean_).reshape(N_KEYPOINTS, 3)

    def reconstruction_residual(self, X=None):
        """Total squared residual of projecting ``X`` (default: training data) onto the basis."""
        check_is_fitted(self, "components_")
        if X is None:
            return float(self.residual_)
        X = check_array(X, dtype=np.float64)
        R = X - self.inverse_transform(self.transform(X))
        return float((R**2).sum())

    def template(self, label):
        check_is_fitted(self, "templates_")
        if label not in self.templates_:
            raise KeyError(f"no template for category {label!r}")
        return self.templates_[label]

    def kneighbors(self, b, n_neighbors=None):
        """Indices and distances of the nearest training parameter vectors."""
        check_is_fitted(self, "params_")
        n = int(n_neighbors or self.n_neighbors)
        if len(self.params_) == 0:
            raise PreconditionError("prior has no training parameters")
        if n < 1 or n > len(self.params_):
            raise PreconditionError(f"n_neighbors={n} exceeds training set size {len(self.params_)}")
        dist = np.linalg.norm(self.params_ - np.asarray(b, dtype=float), axis=1)
        order = np.lexsort((np.arange(len(dist)), dist))[:n]
        return order, dist[order]

    def classify(self, b, n_neighbors=None):
        """Majority category among the nearest neighbors, with vote counts.

        Ties go to the label with the smaller mean neighbor distance, then to
        the lexicographically smaller label.
        """
        idx, dist = self.kneighbors(b, n_neighbors)
        labels = self.labels_[idx]
        votes = Counter(labels.tolist())
        top = max(votes.values())
        tied = [lab for lab, c in votes.items() if c == top]
        mean_d = {lab: float(dist[labels == lab].mean()) for lab in tied}
        # distances equal up to rounding count as tied
        best = min(mean_d.values())
        close = [lab for lab in tied if mean_d[lab] <= best * (1.0 + 1e-9) + 1e-12]
        winner = min(close)
        return winner, dict(votes)

    def predict(self, B):
        B = np.atleast_2d(np.asarray(B, dtype=float))
        return np.array([self.classify(b)[0] for b in B], dtype=object)

    def dimensions(self, b):
        """(length, width, height) extents of the generated keypoints."""
        kp = self.generate(b)
        ext = kp.max(axis=0) - kp.min(axis=0)
        return tuple(float(v) for v in ext)

    def wheelbase(self, b):
        kp = self.generate(b)
        rl, rr, fl, fr = WHEEL_CENTERS
        return float((kp[fl, 0] + kp[fr, 0]) / 2.0 - (kp[rl, 0] + kp[rr, 0]) / 2.0)

    # --------------------------------------------------------------- persistence

    def save(self, path):
        check_is_fitted(self, "components_")
        labels = sorted(self.templates_)
        arrays = dict(
            mean=self.mean_,
            components=self.components_,
            explained_variance=self.explained_variance_,
            explained_variance_ratio=self.explained_variance_ratio_,
            params=self.params_,
            labels=np.asarray(self.labels_.tolist(), dtype=str),
            template_labels=np.asarray(labels, dtype=str),
            templates=np.array([self.templates_[lab] for lab in labels]).reshape(len(labels), -1),
            n_neighbors=np.array(self.n_neighbors),
            residual=np.array(self.residual_),
        )
        # np.savez stamps entries with the wall clock; fixed timestamps keep files byte-reproducible
        buf = io.BytesIO()
        with zipfile.ZipFile(buf, "w", zipfile.ZIP_STORED) as zf:
            for name, arr in arrays.items():
                member = io.BytesIO()
                np.lib.format.write_array(member, np.asarray(arr), allow_pickle=False)
                zf.writestr(zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0)), member.getvalue())
        atomic_write_bytes(path, buf.getvalue())

    @classmethod
    def load(cls, path):
        with np.load(path, allow_pickle=False) as z:
            prior = cls(n_components=int(z["components"].shape[0]), n_neighbors=int(z["n_neighbors"]))
            prior.mean_ = z["mean"]
            prior.components_ = z["components"]
            prior.explained_variance_ = z["explained_variance"]
            prior.explained_variance_ratio_ = z["explained_variance_ratio"]
            prior.params_ = z["params"]
            prior.labels_ = np.asarray(z["labels"].tolist(), dtype=object)
            prior.templates_ = {
                str(lab): row for lab, row in zip(z["template_labels"].tolist(), z["templates"])
            }
            prior.residual_ = float(z["residual"])
            prior.n_features_in_ = SHAPE_DIM
        return prior


def build_prior(shapes, labels=None, k=5, **kwargs):
    """Fit a :class:`ShapePrior` on shape vectors ``(n, 99)``."""
    return ShapePrior(n_components=k, **kwargs).fit(np.asarray(shapes, dtype=float), labels)


def generate_shape(prior, b):
    """The 99-value shape vector ``W b + s_m``."""
    b = np.asarray(b, dtype=float)
    if b.shape != (prior.k,):
        raise DataError(f"parameter vector must have shape ({prior.k},), got {b.shape}")
    return prior.inverse_transform(b[None, :])[0]


def classify_type(prior, b, n_neighbors=5):
    return prior.classify(b, n_neighbors)


def prior_from_fleet(models, k=5, **kwargs):
    shapes = np.array([m.shape_vector for m in models])
    return build_prior(shapes, [m.category for m in models], k=k, **kwargs)
