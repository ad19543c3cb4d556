"""Input validation helpers in the spirit of ``sklearn.utils.validation``."""

import numbers

import numpy as np


def check_finite(a, name="array"):
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains NaN or infinite values")


def check_positive_int(value, name):
    if not isinstance(value, numbers.Integral) or value < 1:
        raise ValueError(f"{name} must be a positive integer, got {value!r}")


def as_image(obj):
    """Accept an ``Image`` or an array and return an ``Image``.

    Integer arrays are assumed to be 8-bit and rescaled to [0, 1].
    """
    from .types import Image

    if isinstance(obj, Image):
        return obj
    a = np.asarray(obj)
    if np.issubdtype(a.dtype, np.integer):
        a = a.astype(np.float64) / 255.0
    return Image(a)


def as_flow(obj, shape=None):
    from .types import FlowField

    flow = obj if isinstance(obj, FlowField) else FlowField(np.asarray(obj))
    if shape is not None and flow.shape != tuple(shape):
        raise ValueError(f"flow shape {flow.shape} does not match image {tuple(shape)}")
    return flow


def check_pair(pair):
    """Validate an image pair and return it as two ``Image`` objects."""
    try:
        ref, target = pair
    except (TypeError, ValueError):
        raise ValueError("expected a pair (reference, target) of images") from None
    ref, target = as_image(ref), as_image(target)
    if ref.shape != target.shape or ref.channels != target.channels:
        raise ValueError(
            f"images differ in size: {ref.data.shape} vs {target.data.shape}"
        )
    return ref, target


def check_same_shape(*arrays_or_shapes):
    shapes = [tuple(getattr(a, "shape", a))[:2] for a in arrays_or_shapes]
    if len(set(shapes)) > 1:
        raise ValueError(f"dimension mismatch: {shapes}")
