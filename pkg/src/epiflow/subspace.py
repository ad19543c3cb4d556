"""Epipolar lifting and the soft epipolar losses built on it.

A correspondence ``x -> x'`` lifts to ``h = vec(x' x^T)``, a 9-vector
orthogonal to ``vec(F)``.  Lifted vectors of one rigid motion therefore
span at most eight dimensions, which the nuclear-norm loss and the
self-expression (union-of-subspaces) loss exploit without estimating F.
"""

from dataclasses import dataclass

import numpy as np

from .epipolar import _svd, apply_transform, hartley_transform
from .exceptions import NoValidPixels

RANK_CUTOFF = 1e-10


def lift_points(p, q):
    """Lift ``(N, 2)`` first-image points ``p`` and second-image points ``q``.

    Returns the ``(9, N)`` matrix with columns
    ``(x x', x y', x, y x', y y', y, x', y', 1)``.
    """
    x, y = p[:, 0], p[:, 1]
    xp, yp = q[:, 0], q[:, 1]
    one = np.ones_like(x)
    return np.stack([x * xp, x * yp, x, y * xp, y * yp, y, xp, yp, one])


@dataclass(frozen=True, eq=False)
class LiftedMatrix:
    """The ``9 x N`` matrix of lifted correspondences.

    ``transforms`` holds the two Hartley matrices applied before lifting,
    or ``None`` for raw pixel coordinates.  ``adaptive`` marks transforms
    computed from the lifted points themselves, so that the second one
    moves with the flow.
    """

    h: np.ndarray
    source_pixels: np.ndarray = None
    transforms: tuple = None
    adaptive: bool = False

    @property
    def n(self):
        return self.h.shape[1]

    def flow_gradient(self, grad_h):
        """Chain a ``(9, N)`` gradient through the lifting to ``(N, 2)`` flow gradients.

        Only ``x'`` varies with the flow.  For adaptive normalization the
        derivative of the second image's centroid and scale is included,
        which makes the gradient blind to translating or scaling ``x'``.
        """
        g = np.asarray(grad_h)
        s = 1.0 if self.transforms is None else self.transforms[1][0, 0]
        x, y = self.h[2], self.h[5]
        gu = g[0] * x + g[3] * y + g[6]
        gv = g[1] * x + g[4] * y + g[7]
        grad = np.stack([gu, gv], axis=1)
        if self.adaptive:
            q = self.h[6:8].T
            r = np.linalg.norm(q, axis=1)
            u = np.divide(q, r[:, None], out=np.zeros_like(q), where=r[:, None] > 0)
            radial = np.sum(grad * q) / np.sum(r)
            grad = grad - grad.mean(axis=0) - radial * (u - u.mean(axis=0))
        return s * grad


def lift(corrs, normalize=True, transforms=None):
    """Lift a ``CorrespondenceSet`` into a ``LiftedMatrix``.

    With ``normalize`` each image's points are Hartley-normalized first;
    pass ``transforms`` to reuse a fixed pair of normalizations.
    """
    p = corrs.points
    q = corrs.points + corrs.displacement
    adaptive = transforms is None and normalize
    if adaptive:
        transforms = (hartley_transform(p), hartley_transform(q))
    if transforms is not None:
        p = apply_transform(transforms[0], p)
        q = apply_transform(transforms[1], q)
    return LiftedMatrix(lift_points(p, q), corrs.pixels, transforms, adaptive)


def _as_h(h):
    return np.asarray(h.h if isinstance(h, LiftedMatrix) else h, dtype=np.float64)


def singular_values(h):
    return _svd(_as_h(h), compute_uv=False)


def numerical_rank(h, tol=1e-8):
    """Number of singular values above ``tol`` times the largest."""
    s = singular_values(h)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.sum(s > tol * s[0]))


def nuclear_norm_loss(h):
    """Sum of the singular values of H."""
    return float(np.sum(singular_values(h)))


def nuclear_norm_gradient(h):
    """Subgradient ``U V^T`` of the nuclear norm.

    Singular directions with ``sigma < 1e-10 * sigma_1`` are dropped.
    """
    u, s, vt = _svd(_as_h(h), full_matrices=False)
    keep = s > RANK_CUTOFF * s[0] if s.size and s[0] > 0 else np.zeros(s.shape, bool)
    return u[:, keep] @ vt[keep]


@dataclass(frozen=True, eq=False)
class SelfExpression:
    """Closed-form self-expression coefficients ``C* = (I + lam H^T H)^-1 lam H^T H``."""

    c: np.ndarray
    lambda_sub: float


def _check_lambda(lambda_sub):
    if not lambda_sub > 0:
        raise ValueError(f"lambda_sub must be positive, got {lambda_sub}")


def _shrink(s2, lambda_sub):
    return lambda_sub * s2 / (1.0 + lambda_sub * s2)


def subspace_expression(h, lambda_sub):
    """Closed-form coefficients from the thin SVD; the N x N inverse is never formed."""
    _check_lambda(lambda_sub)
    _, s, vt = _svd(_as_h(h), full_matrices=False)
    c = (vt.T * _shrink(s**2, lambda_sub)) @ vt
    return SelfExpression(0.5 * (c + c.T), lambda_sub)


def subspace_loss(h, lambda_sub):
    """Union-of-subspaces loss with C replaced by its closed-form optimum.

    Plugging ``C*`` back in reduces the loss to
    ``0.5 * sum_i lam s_i^2 / (1 + lam s_i^2)`` over the singular values of H.
    """
    _check_lambda(lambda_sub)
    s = singular_values(h)
    return float(0.5 * np.sum(_shrink(s**2, lambda_sub)))


def subspace_loss_direct(h, lambda_sub):
    """Dense evaluation of ``0.5 ||C*||^2 + lam/2 ||H C* - H||^2``; O(N^3)."""
    _check_lambda(lambda_sub)
    h = _as_h(h)
    g = lambda_sub * (h.T @ h)
    c = np.linalg.solve(np.eye(h.shape[1]) + g, g)
    return float(0.5 * np.sum(c**2) + 0.5 * lambda_sub * np.sum((h @ c - h) ** 2))


def subspace_gradient(h, lambda_sub, envelope=False):
    """Gradient of the subspace loss with respect to H, shape ``(9, N)``.

    The default differentiates the singular-value form,
    ``U diag(lam s / (1 + lam s^2)^2) V^T``.  ``envelope=True`` instead holds
    ``C*`` fixed and differentiates the quadratic objective; since ``C*`` is
    the minimizer both give the same matrix.
    """
    _check_lambda(lambda_sub)
    h = _as_h(h)
    if envelope:
        c = subspace_expression(h, lambda_sub).c
        return lambda_sub * (h @ c - h) @ (c - np.eye(h.shape[1])).T
    u, s, vt = _svd(h, full_matrices=False)
    w = lambda_sub * s / (1.0 + lambda_sub * s**2) ** 2
    return (u * w) @ vt


def subspace_gradient_matrix(h, lambda_sub):
    """Gradient via the 9x9 Gram form ``lam (I + lam H H^T)^-2 H``."""
    _check_lambda(lambda_sub)
    h = _as_h(h)
    a = np.eye(h.shape[0]) + lambda_sub * (h @ h.T)
    return lambda_sub * np.linalg.solve(a, np.linalg.solve(a, h))


def sample_pixels(mask, count=2000, seed=None):
    """Uniformly sample up to ``count`` non-occluded flat pixel indices, sorted.

    ``seed`` may be an int or a ``numpy.random.Generator``.  When fewer than
    ``count`` pixels are visible all of them are returned.
    """
    if count < 9:
        raise ValueError("count must be at least 9")
    values = mask.values if hasattr(mask, "values") else np.asarray(mask, dtype=bool)
    valid = np.flatnonzero(values)
    if valid.size == 0:
        raise NoValidPixels("the mask excludes every pixel")
    if valid.size <= count:
        return valid
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(valid, size=count, replace=False))
