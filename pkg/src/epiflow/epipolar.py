"""Fundamental matrix estimation and the Sampson epipolar loss."""

import warnings
from dataclasses import dataclass

import numpy as np

from .exceptions import (
    DegenerateConfiguration,
    SingularPointWarning,
    SvdFailure,
    TooFewPoints,
)

SINGULAR_DENOMINATOR = 1e-12


@dataclass(frozen=True, eq=False)
class FundamentalMatrix:
    """3x3 rank-2 matrix, unit Frobenius norm, largest-magnitude entry positive."""

    m: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.m, dtype=np.float64)
        if m.shape != (3, 3):
            raise ValueError(f"fundamental matrix must be 3x3, got {m.shape}")
        m = canonicalize(m)
        m.setflags(write=False)
        object.__setattr__(self, "m", m)

    def __array__(self, dtype=None, copy=None):
        return self.m if dtype is None else self.m.astype(dtype)


def canonicalize(m):
    """Scale ``m`` to unit Frobenius norm with its largest-magnitude entry positive."""
    m = np.array(m, dtype=np.float64)
    norm = np.linalg.norm(m)
    if norm == 0:
        raise ValueError("zero matrix has no canonical scale")
    m /= norm
    if m.flat[np.argmax(np.abs(m))] < 0:
        m = -m
    return m


def hartley_transform(points):
    """Similarity moving the centroid to the origin with mean distance sqrt(2).

    ``points`` is ``(N, 2)``; returns the 3x3 matrix acting on homogeneous
    column vectors.
    """
    points = np.asarray(points, dtype=np.float64)
    centroid = points.mean(axis=0)
    mean_dist = np.mean(np.linalg.norm(points - centroid, axis=1))
    scale = np.sqrt(2.0) / mean_dist if mean_dist > 0 else 1.0
    return np.array(
        [
            [scale, 0.0, -scale * centroid[0]],
            [0.0, scale, -scale * centroid[1]],
            [0.0, 0.0, 1.0],
        ]
    )


def apply_transform(t, points):
    """Apply a 3x3 affine transform to ``(N, 2)`` points."""
    return points @ t[:2, :2].T + t[:2, 2]


def _svd(a, **kwargs):
    try:
        return np.linalg.svd(a, **kwargs)
    except np.linalg.LinAlgError as exc:
        raise SvdFailure(f"SVD did not converge on a {a.shape} matrix: {exc}") from exc


def enforce_rank2(m):
    u, s, vt = _svd(m)
    s[2] = 0.0
    return (u * s) @ vt


def estimate_fundamental_8pt(corrs, rank_tol=1e-10):
    """Normalized eight-point estimate of F from a ``CorrespondenceSet``.

    Each image is Hartley-normalized, the linear system is solved in the
    least-squares sense, the solution is denormalized and its smallest
    singular value is zeroed.

    Raises
    ------
    TooFewPoints
        Fewer than 8 correspondences.
    DegenerateConfiguration
        The design matrix has numerical rank below 8.
    """
    from .subspace import lift_points

    n = len(corrs)
    if n < 8:
        raise TooFewPoints(f"need at least 8 correspondences, got {n}")
    p1 = corrs.points
    p2 = corrs.points + corrs.displacement
    t1 = hartley_transform(p1)
    t2 = hartley_transform(p2)
    a = lift_points(apply_transform(t1, p1), apply_transform(t2, p2)).T
    _, s, vt = _svd(a, full_matrices=False)
    rank = int(np.sum(s > rank_tol * s[0])) if s[0] > 0 else 0
    if rank < 8:
        raise DegenerateConfiguration(
            f"design matrix has numerical rank {rank} < 8", rank=rank
        )
    f_norm = vt[-1].reshape(3, 3, order="F")
    f = t2.T @ f_norm @ t1
    return FundamentalMatrix(enforce_rank2(canonicalize(f)))


def _sampson_terms(corrs, f):
    f = np.asarray(f, dtype=np.float64)
    x = corrs.x
    xp = corrs.x_prime
    fx = x @ f.T  # rows F x_i
    ftxp = xp @ f  # rows F^T x'_i
    num = np.einsum("ij,ij->i", xp, fx)
    den = fx[:, 0] ** 2 + fx[:, 1] ** 2 + ftxp[:, 0] ** 2 + ftxp[:, 1] ** 2
    ok = den >= SINGULAR_DENOMINATOR
    skipped = int(np.count_nonzero(~ok))
    if skipped:
        warnings.warn(
            f"{skipped} correspondence(s) at both epipoles skipped",
            SingularPointWarning,
            stacklevel=3,
        )
    return num, den, fx, ftxp, ok


def sampson_distances(corrs, f):
    """Per-correspondence squared Sampson distance; skipped points give 0."""
    num, den, _, _, ok = _sampson_terms(corrs, f)
    out = np.zeros(len(num))
    out[ok] = num[ok] ** 2 / den[ok]
    return out


def sampson_loss(corrs, f):
    """Sum of squared Sampson distances of ``corrs`` under ``f``."""
    return float(np.sum(sampson_distances(corrs, f)))


def sampson_gradient(corrs, f):
    """Gradient of each Sampson term w.r.t. the second-image point ``(x', y')``.

    Since ``x' = x + v`` this is also the gradient with respect to the flow
    vector at the source pixel.  ``f`` is held fixed.  Returns ``(N, 2)``.
    """
    f = np.asarray(f, dtype=np.float64)
    num, den, fx, ftxp, ok = _sampson_terms(corrs, f)
    # d num / d x'_k = (F x)_k ;  d den / d x'_k = 2 sum_j (F^T x')_j F[k, j], j < 2
    dden = 2.0 * (ftxp[:, :2] @ f[:2, :2].T)
    grad = np.zeros((len(num), 2))
    n, d = num[ok, None], den[ok, None]
    grad[ok] = 2.0 * n * fx[ok, :2] / d - n**2 * dden[ok] / d**2
    return grad
