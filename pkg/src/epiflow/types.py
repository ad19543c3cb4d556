"""Value types shared by the loss and optimizer modules.

Pixel coordinates follow the image convention: origin at the top-left
pixel centre, ``x`` grows to the right (column index) and ``y`` grows
downward (row index).  Arrays are stored row-major as ``(height, width)``.
"""

from dataclasses import dataclass, fields

import numpy as np

from ._validation import check_finite, check_positive_int

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])
CHARBONNIER_EPS = 1e-3


def _frozen(a):
    if a.flags.writeable or not a.flags.c_contiguous:
        a = np.array(a, order="C")
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Image:
    """Grayscale ``(H, W)`` or colour ``(H, W, 3)`` image with values in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim == 3 and data.shape[2] == 1:
            data = data[:, :, 0]
        if data.ndim not in (2, 3) or (data.ndim == 3 and data.shape[2] != 3):
            raise ValueError(f"image must be (H, W) or (H, W, 3), got {data.shape}")
        if data.shape[0] < 1 or data.shape[1] < 1:
            raise ValueError("image must be at least 1x1")
        check_finite(data, "image")
        if data.min() < 0.0 or data.max() > 1.0:
            raise ValueError("image intensities must lie in [0, 1]")
        object.__setattr__(self, "data", _frozen(data))

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def shape(self):
        return self.data.shape[:2]

    @property
    def channels(self):
        return 1 if self.data.ndim == 2 else 3

    def gray(self):
        """Return the single-channel intensity array (luma for colour input)."""
        return to_gray(self.data)


@dataclass(frozen=True, eq=False)
class FlowField:
    """Dense displacement field; ``uv[..., 0]`` is horizontal, ``uv[..., 1]`` vertical."""

    uv: np.ndarray

    def __post_init__(self):
        uv = np.asarray(self.uv)
        if not np.issubdtype(uv.dtype, np.floating):
            uv = uv.astype(np.float64)
        if uv.ndim != 3 or uv.shape[2] != 2:
            raise ValueError(f"flow must be (H, W, 2), got {uv.shape}")
        check_finite(uv, "flow")
        object.__setattr__(self, "uv", _frozen(uv))

    @classmethod
    def zeros(cls, height, width):
        return cls(np.zeros((height, width, 2)))

    @property
    def u(self):
        return self.uv[..., 0]

    @property
    def v(self):
        return self.uv[..., 1]

    @property
    def height(self):
        return self.uv.shape[0]

    @property
    def width(self):
        return self.uv.shape[1]

    @property
    def shape(self):
        return self.uv.shape[:2]


@dataclass(frozen=True, eq=False)
class OcclusionMask:
    """Binary visibility map, ``True`` where the pixel is not occluded."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim != 2:
            raise ValueError(f"mask must be (H, W), got {values.shape}")
        if values.dtype != bool:
            if not np.isin(values, (0, 1)).all():
                raise ValueError("mask values must be 0 or 1")
            values = values.astype(bool)
        object.__setattr__(self, "values", _frozen(values))

    @classmethod
    def ones(cls, height, width):
        return cls(np.ones((height, width), dtype=bool))

    @property
    def shape(self):
        return self.values.shape

    @property
    def count(self):
        return int(self.values.sum())


@dataclass(frozen=True, eq=False)
class CorrespondenceSet:
    """Point pairs ``x_i -> x'_i`` stored as first-image points plus displacements.

    Keeping the displacement rather than ``x'`` makes the conversion back to
    a flow field exact.  ``pixels`` holds flat (row-major) pixel indices when
    the set was built from a flow field.
    """

    points: np.ndarray
    displacement: np.ndarray
    pixels: np.ndarray = None
    image_shape: tuple = None

    def __post_init__(self):
        points = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        disp = np.asarray(self.displacement, dtype=np.float64).reshape(-1, 2)
        if points.shape != disp.shape:
            raise ValueError("points and displacement must have the same length")
        object.__setattr__(self, "points", _frozen(points))
        object.__setattr__(self, "displacement", _frozen(disp))
        if self.pixels is not None:
            pixels = np.asarray(self.pixels, dtype=np.intp)
            if pixels.shape != (len(points),):
                raise ValueError("pixels must have one index per correspondence")
            object.__setattr__(self, "pixels", _frozen(pixels))

    @classmethod
    def from_points(cls, x, x_prime):
        """Build from two ``(N, 2)`` or homogeneous ``(N, 3)`` point arrays."""
        x = _dehomogenize(x)
        x_prime = _dehomogenize(x_prime)
        return cls(x, x_prime - x)

    def __len__(self):
        return len(self.points)

    @property
    def x(self):
        """First-image points as homogeneous ``(N, 3)`` rows ``(x, y, 1)``."""
        return _homogeneous(self.points)

    @property
    def x_prime(self):
        """Second-image points as homogeneous ``(N, 3)`` rows ``(x', y', 1)``."""
        return _homogeneous(self.points + self.displacement)

    def subset(self, index):
        pixels = None if self.pixels is None else self.pixels[index]
        return CorrespondenceSet(
            self.points[index], self.displacement[index], pixels, self.image_shape
        )

    def to_flow(self, base=None):
        """Scatter the displacements back onto a flow field.

        Pixels not covered by the set keep the values of ``base`` (zeros
        when omitted).
        """
        if self.pixels is None or self.image_shape is None:
            raise ValueError("correspondences carry no pixel indices")
        h, w = self.image_shape
        uv = np.zeros((h * w, 2)) if base is None else np.array(base.uv).reshape(-1, 2)
        uv[self.pixels] = self.displacement
        return FlowField(uv.reshape(h, w, 2))


def _homogeneous(p):
    return np.hstack([p, np.ones((len(p), 1))])


def _dehomogenize(p):
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 2 or p.shape[1] not in (2, 3):
        raise ValueError(f"points must be (N, 2) or (N, 3), got {p.shape}")
    if p.shape[1] == 3:
        p = p[:, :2] / p[:, 2:3]
    return p


@dataclass
class LossConfig:
    """Weights and constants of the unsupervised loss.

    ``mu2=None`` selects the per-regularizer default from ``MU2_DEFAULTS``.
    """

    mu1: float = 0.02
    mu2: float = None
    lambda1: float = 0.5
    lambda2: float = 1.0
    lambda3: float = 1.0
    alpha1: float = 0.5
    alpha2: float = 0.5
    tau: float = 3.0
    lambda_sub: float = 10.0
    sample_count: int = 2000
    charbonnier_eps: float = CHARBONNIER_EPS
    census_radius: int = 3
    census_epsilon: float = 0.02
    normalize_lifting: bool = True
    full_subspace_gradient: bool = True
    rng_seed: int = 0

    MU2_DEFAULTS = {"none": 0.0, "sampson": 0.02, "lowrank": 0.01, "subspace": 0.001}

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if f.type is float and value is not None and value < 0:
                raise ValueError(f"{f.name} must be non-negative, got {value}")
        check_positive_int(self.sample_count, "sample_count")
        if self.sample_count < 9:
            raise ValueError("sample_count must be at least 9")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.lambda_sub <= 0:
            raise ValueError("lambda_sub must be positive")

    def epipolar_weight(self, regularizer):
        if regularizer not in self.MU2_DEFAULTS:
            raise ValueError(f"unknown regularizer {regularizer!r}")
        if regularizer == "none":
            return 0.0
        return self.MU2_DEFAULTS[regularizer] if self.mu2 is None else self.mu2


def to_gray(data):
    data = np.asarray(data, dtype=np.float64)
    if data.ndim == 2:
        return data
    return data @ LUMA_WEIGHTS


def charbonnier(x, eps=CHARBONNIER_EPS):
    """Robust penalty ``sqrt(x**2 + eps**2)``, elementwise."""
    x = np.asarray(x, dtype=np.float64)
    return np.sqrt(x * x + eps * eps)


def charbonnier_grad(x, eps=CHARBONNIER_EPS):
    x = np.asarray(x, dtype=np.float64)
    return x / np.sqrt(x * x + eps * eps)


def pixel_grid(height, width):
    """Return ``(xs, ys)`` coordinate arrays of shape ``(H, W)``."""
    ys, xs = np.mgrid[0:height, 0:width]
    return xs.astype(np.float64), ys.astype(np.float64)


def flow_to_correspondences(flow, mask=None):
    """Convert a flow field to point pairs ``x -> x + v``.

    Occluded pixels (``mask`` False) are left out.  An all-occluded mask
    gives an empty set.
    """
    h, w = flow.shape
    xs, ys = pixel_grid(h, w)
    points = np.stack([xs.ravel(), ys.ravel()], axis=1)
    disp = np.asarray(flow.uv, dtype=np.float64).reshape(-1, 2)
    pixels = np.arange(h * w)
    if mask is not None:
        if mask.shape != (h, w):
            raise ValueError("mask and flow dimensions differ")
        keep = mask.values.ravel()
        points, disp, pixels = points[keep], disp[keep], pixels[keep]
    return CorrespondenceSet(points, disp, pixels, (h, w))
