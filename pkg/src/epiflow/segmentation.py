"""Motion segmentation from self-expression coefficients.

Sampled correspondences are lifted, their closed-form self-expression
matrix ``C*`` becomes a graph affinity, and normalized-cut spectral
clustering assigns each point to a rigid motion.
"""

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh
from scipy.optimize import linear_sum_assignment
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.cluster import KMeans

from .exceptions import DisconnectedGraphWarning
from .subspace import SelfExpression, lift, subspace_expression
from .types import CorrespondenceSet

ZERO_EIGENVALUE = 1e-8


@dataclass(frozen=True, eq=False)
class MotionLabels:
    labels: np.ndarray
    k: int
    affinity: np.ndarray


def _normalize(a):
    d = a.sum(axis=1)
    inv = np.zeros_like(d)
    nz = d > 0
    inv[nz] = 1.0 / np.sqrt(d[nz])
    return a * np.outer(inv, inv)


def build_affinity(c, n_neighbors=None):
    """Affinity ``|C| + |C^T|`` with zero diagonal, symmetrically degree-normalized.

    With ``n_neighbors`` each point keeps only its strongest links (union
    of the per-row top-``n_neighbors`` sets) before normalization.
    """
    c = np.asarray(c.c if isinstance(c, SelfExpression) else c, dtype=np.float64)
    a = np.abs(c) + np.abs(c.T)
    np.fill_diagonal(a, 0.0)
    if n_neighbors is not None and n_neighbors < len(a) - 1:
        order = np.argsort(-a, axis=1, kind="stable")[:, :n_neighbors]
        keep = np.zeros(a.shape, dtype=bool)
        np.put_along_axis(keep, order, True, axis=1)
        a = np.where(keep | keep.T, a, 0.0)
    return _normalize(a)


def laplacian_spectrum(affinity, count):
    """Smallest ``count`` eigenpairs of the symmetric normalized Laplacian."""
    a = np.asarray(affinity, dtype=np.float64)
    n = len(a)
    count = min(count, n)
    lap = np.eye(n) - _normalize(a)
    w, v = eigh(lap, subset_by_index=[0, count - 1])
    return np.maximum(w, 0.0), v


def spectral_cluster(affinity, k, n_init=10, random_state=0):
    """Normalized-cut spectral clustering into ``k`` groups."""
    a = np.asarray(affinity, dtype=np.float64)
    if k < 1:
        raise ValueError("k must be at least 1")
    if k == 1:
        return MotionLabels(np.zeros(len(a), dtype=int), 1, a)
    w, v = laplacian_spectrum(a, k + 1)
    if len(w) > k and w[k] < ZERO_EIGENVALUE:
        warnings.warn(
            f"affinity graph has more than {k} connected components",
            DisconnectedGraphWarning,
            stacklevel=2,
        )
    emb = v[:, :k]
    norms = np.linalg.norm(emb, axis=1, keepdims=True)
    emb = emb / np.where(norms > 0, norms, 1.0)
    km = KMeans(n_clusters=k, n_init=n_init, random_state=random_state)
    labels = _relabel(km.fit_predict(emb))
    return MotionLabels(labels, int(labels.max()) + 1, a)


def _relabel(labels):
    """Renumber clusters by first appearance so ids are canonical."""
    _, first = np.unique(labels, return_index=True)
    order = np.argsort(first)
    mapping = np.empty(len(order), dtype=int)
    mapping[labels[np.sort(first)]] = np.arange(len(order))
    return mapping[labels]


def estimate_motion_count(affinity, k_max=5, floor=3e-3):
    """Eigengap estimate of the number of motions.

    Picks the ``k <= k_max`` maximizing ``lam_{k+1} / (mean(lam_1..lam_k) + floor)``
    over the normalized-Laplacian spectrum: the first eigenvalue that jumps
    well above all smaller ones.
    """
    if k_max < 1:
        raise ValueError("k_max must be at least 1")
    w, _ = laplacian_spectrum(affinity, k_max + 1)
    if len(w) < 2:
        return 1
    ks = np.arange(1, len(w))
    gaps = [w[k] / (np.mean(w[:k]) + floor) for k in ks]
    return int(ks[int(np.argmax(gaps))])


def clustering_accuracy(truth, labels):
    """Fraction of agreeing labels after the best one-to-one relabelling."""
    truth = np.asarray(truth)
    labels = np.asarray(labels)
    t_ids, t_inv = np.unique(truth, return_inverse=True)
    l_ids, l_inv = np.unique(labels, return_inverse=True)
    counts = np.zeros((len(t_ids), len(l_ids)))
    np.add.at(counts, (t_inv, l_inv), 1)
    rows, cols = linear_sum_assignment(-counts)
    return counts[rows, cols].sum() / len(truth)


def _as_correspondences(X):
    if isinstance(X, CorrespondenceSet):
        return X
    a = np.asarray(X, dtype=np.float64)
    if a.ndim != 2 or a.shape[1] != 4:
        raise ValueError("expected a CorrespondenceSet or an (N, 4) array of x, y, x', y'")
    return CorrespondenceSet.from_points(a[:, :2], a[:, 2:])


class MotionSegmenter(ClusterMixin, BaseEstimator):
    """Cluster correspondences into rigid motions.

    Parameters
    ----------
    n_motions : int or "auto"
        Number of motions; ``"auto"`` uses the eigengap estimate.
    lambda_sub : float
        Relaxation weight of the self-expression problem.
    n_neighbors : int or None
        Affinity sparsification, see ``build_affinity``.
    max_motions : int
        Upper bound for the automatic estimate.
    normalize : bool
        Hartley-normalize both point sets before lifting.
    random_state : int
        Seed for the k-means restarts.

    Attributes
    ----------
    labels_ : ndarray of shape (n_points,)
    n_motions_ : int
    affinity_ : ndarray of shape (n_points, n_points)
    """

    def __init__(self, n_motions="auto", lambda_sub=10.0, n_neighbors=30,
                 max_motions=5, normalize=True, random_state=0):
        self.n_motions = n_motions
        self.lambda_sub = lambda_sub
        self.n_neighbors = n_neighbors
        self.max_motions = max_motions
        self.normalize = normalize
        self.random_state = random_state

    def fit(self, X, y=None):
        """Segment ``X``: a ``CorrespondenceSet`` or ``(N, 4)`` array ``[x, y, x', y']``."""
        corrs = _as_correspondences(X)
        if len(corrs) < 2:
            raise ValueError("need at least two correspondences")
        h = lift(corrs, normalize=self.normalize)
        c = subspace_expression(h, self.lambda_sub)
        affinity = build_affinity(c, self.n_neighbors)
        if self.n_motions == "auto":
            k = estimate_motion_count(affinity, self.max_motions)
        else:
            k = int(self.n_motions)
        result = spectral_cluster(affinity, k, random_state=self.random_state)
        self.labels_ = result.labels
        self.n_motions_ = result.k
        self.affinity_ = affinity
        self.coefficients_ = c.c
        return self
