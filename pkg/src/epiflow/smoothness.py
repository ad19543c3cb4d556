"""Edge-aware first- plus second-order flow smoothness."""

from dataclasses import dataclass

import numpy as np

from .types import FlowField, Image, to_gray


def _forward_diff(a, axis):
    d = np.zeros_like(a)
    if axis == 1:
        d[:, :-1] = a[:, 1:] - a[:, :-1]
    else:
        d[:-1] = a[1:] - a[:-1]
    return d


def _second_diff(a, axis):
    d = np.zeros_like(a)
    if axis == 1:
        d[:, 1:-1] = a[:, 2:] - 2 * a[:, 1:-1] + a[:, :-2]
    else:
        d[1:-1] = a[2:] - 2 * a[1:-1] + a[:-2]
    return d


def edge_weights(gray, alpha1=0.5, alpha2=0.5):
    """``exp(-alpha |grad I|_1)`` for the first- and second-order terms."""
    g1 = np.abs(_forward_diff(gray, 1)) + np.abs(_forward_diff(gray, 0))
    g2 = np.abs(_second_diff(gray, 1)) + np.abs(_second_diff(gray, 0))
    return np.exp(-alpha1 * g1), np.exp(-alpha2 * g2)


@dataclass
class SmoothnessLoss:
    value: float
    first_order: float
    second_order: float
    grad: np.ndarray


class SmoothnessTerm:
    """Smoothness loss with edge weights precomputed from one reference image."""

    def __init__(self, ref, alpha1=0.5, alpha2=0.5):
        gray = ref.gray() if isinstance(ref, Image) else to_gray(ref)
        self.w1, self.w2 = edge_weights(gray, alpha1, alpha2)

    def evaluate(self, flow_uv):
        v = np.asarray(flow_uv, dtype=np.float64)
        if v.shape[:2] != self.w1.shape:
            raise ValueError("flow and image dimensions differ")
        n = self.w1.size
        w1 = self.w1[..., None]
        w2 = self.w2[..., None]
        dx, dy = _forward_diff(v, 1), _forward_diff(v, 0)
        sx, sy = _second_diff(v, 1), _second_diff(v, 0)
        first = float(np.sum(w1 * (np.abs(dx) + np.abs(dy)))) / n
        second = float(np.sum(w2 * (np.abs(sx) + np.abs(sy)))) / n

        grad = np.zeros_like(v)
        cx, cy = w1 * np.sign(dx) / n, w1 * np.sign(dy) / n
        grad[:, 1:] += cx[:, :-1]
        grad[:, :-1] -= cx[:, :-1]
        grad[1:] += cy[:-1]
        grad[:-1] -= cy[:-1]
        c2x, c2y = w2 * np.sign(sx) / n, w2 * np.sign(sy) / n
        grad[:, 2:] += c2x[:, 1:-1]
        grad[:, 1:-1] -= 2 * c2x[:, 1:-1]
        grad[:, :-2] += c2x[:, 1:-1]
        grad[2:] += c2y[1:-1]
        grad[1:-1] -= 2 * c2y[1:-1]
        grad[:-2] += c2y[1:-1]
        return SmoothnessLoss(first + second, first, second, grad)


def smoothness_loss(flow, ref, alpha1=0.5, alpha2=0.5):
    """Edge-aware smoothness of ``flow`` guided by ``ref``; returns ``(value, grad)``."""
    uv = flow.uv if isinstance(flow, FlowField) else flow
    out = SmoothnessTerm(ref, alpha1, alpha2).evaluate(uv)
    return out.value, out.grad
