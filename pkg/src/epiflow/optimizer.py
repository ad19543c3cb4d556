"""Coarse-to-fine direct minimization of the unsupervised flow loss.

Forward and backward flows are optimized together by momentum gradient
descent.  Photometric and smoothness terms act on every pyramid level; the
epipolar regularizer (Sampson, nuclear norm or subspace) is applied at the
finest level only, on a fresh random sample of visible pixels each
iteration.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from ._validation import as_flow, check_pair, check_positive_int
from .epipolar import estimate_fundamental_8pt, sampson_gradient, sampson_loss
from .exceptions import DegenerateConfiguration, NonConvergenceWarning, TooFewPoints
from .photometric import PhotometricTerm, _bilinear, occlusion_mask
from .smoothness import SmoothnessTerm
from .subspace import (
    lift,
    nuclear_norm_gradient,
    nuclear_norm_loss,
    sample_pixels,
    subspace_gradient,
    subspace_loss,
)
from .types import FlowField, Image, LossConfig, OcclusionMask, flow_to_correspondences

REGULARIZERS = ("none", "sampson", "lowrank", "subspace")
FINETUNE_DEFAULTS = {"iterations": 50, "step": 0.03, "precondition_sigma": 0.0}
MIN_LEVEL_SIZE = 32


@dataclass
class OptimizerConfig:
    """Optimizer schedule; ``loss`` carries the loss weights.

    ``step`` is the initial RMS per-pixel displacement of one update; it
    decays geometrically to ``step * final_step_ratio`` over each level.
    Gradients are smoothed by a Gaussian of width ``precondition_sigma``
    pixels before normalization, which stands in for the implicit
    smoothness prior of a network and keeps per-pixel updates from
    overfitting the census term.
    """

    regularizer: str = "none"
    levels: int = 4
    iterations: int = 200
    step: float = 0.5
    final_step_ratio: float = 0.05
    momentum: float = 0.9
    f_refresh_interval: int = 10
    warmup_iterations: int = 20
    precondition_sigma: float = 8.0
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        if self.regularizer not in REGULARIZERS:
            raise ValueError(f"regularizer must be one of {REGULARIZERS}, got {self.regularizer!r}")
        check_positive_int(self.iterations, "iterations")
        check_positive_int(self.levels, "levels")
        check_positive_int(self.f_refresh_interval, "f_refresh_interval")
        if self.warmup_iterations < 0:
            raise ValueError("warmup_iterations must be non-negative")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.step <= 0 or not 0 < self.final_step_ratio <= 1:
            raise ValueError("step must be positive and final_step_ratio in (0, 1]")
        if self.precondition_sigma < 0:
            raise ValueError("precondition_sigma must be non-negative")

    @classmethod
    def for_finetune(cls, **kwargs):
        """Short, small-step schedule without preconditioning for refining a good flow."""
        params = dict(FINETUNE_DEFAULTS)
        params.update(kwargs)
        return cls(**params)

    @property
    def mu2(self):
        return self.loss.epipolar_weight(self.regularizer)


# -- pyramid -----------------------------------------------------------------


def downsample(data):
    """Halve resolution by 2x2 area averaging (odd edges are replicated)."""
    h, w = data.shape[:2]
    pad = [(0, h % 2), (0, w % 2)] + [(0, 0)] * (data.ndim - 2)
    p = np.pad(data, pad, mode="edge")
    return 0.25 * (p[0::2, 0::2] + p[1::2, 0::2] + p[0::2, 1::2] + p[1::2, 1::2])


def upsample_flow(uv, shape):
    """Bilinearly resize a flow field to ``shape`` and rescale its vectors."""
    h, w = uv.shape[:2]
    sy, sx = shape[0] / h, shape[1] / w
    ys, xs = np.mgrid[0 : shape[0], 0 : shape[1]].astype(np.float64)
    px = (xs + 0.5) / sx - 0.5
    py = (ys + 0.5) / sy - 0.5
    out = _bilinear(np.asarray(uv, dtype=np.float64), px, py)
    out[..., 0] *= sx
    out[..., 1] *= sy
    return out


@dataclass
class Pyramid:
    """Image pairs from finest (index 0) to coarsest."""

    levels: list

    @classmethod
    def build(cls, ref, target, max_levels=4, min_size=MIN_LEVEL_SIZE):
        levels = [(ref, target)]
        while len(levels) < max_levels:
            a, b = levels[-1]
            if min(a.shape) // 2 < min_size:
                break
            levels.append((Image(downsample(a.data)), Image(downsample(b.data))))
        return cls(levels)

    @property
    def level_count(self):
        return len(self.levels)


# -- loss ----------------------------------------------------------------------


@dataclass
class LossReport:
    """Loss values of one flow direction and the gradient of ``total``."""

    total: float
    photo: float
    smooth: float
    epipolar: float
    intensity: float
    census: float
    gradient: float
    grad: np.ndarray
    grad_photo: np.ndarray
    grad_smooth: np.ndarray
    grad_epipolar: np.ndarray

    def summary(self):
        return {
            k: getattr(self, k)
            for k in ("total", "photo", "smooth", "epipolar", "intensity", "census", "gradient")
        }


class FlowObjective:
    """Total loss ``photo + mu1 * smooth + mu2 * epipolar`` for one flow direction."""

    def __init__(self, ref, target, cfg=None, regularizer="none"):
        self.cfg = cfg or LossConfig()
        if regularizer not in REGULARIZERS:
            raise ValueError(f"unknown regularizer {regularizer!r}")
        self.regularizer = regularizer
        self.mu2 = self.cfg.epipolar_weight(regularizer)
        self.photo = PhotometricTerm(ref, target, self.cfg)
        self.smooth = SmoothnessTerm(ref, self.cfg.alpha1, self.cfg.alpha2)
        self.shape = ref.shape

    def epipolar(self, uv, sample, fundamental=None, transforms=None):
        """Epipolar loss on the sampled pixels and its (sparse) flow gradient."""
        grad = np.zeros(uv.shape)
        if self.regularizer == "none" or sample is None or len(sample) == 0:
            return 0.0, grad
        corrs = flow_to_correspondences(FlowField(uv)).subset(sample)
        if self.regularizer == "sampson":
            f = estimate_fundamental_8pt(corrs) if fundamental is None else fundamental
            value = sampson_loss(corrs, f)
            g = sampson_gradient(corrs, f)
        else:
            h = lift(corrs, normalize=self.cfg.normalize_lifting, transforms=transforms)
            if self.regularizer == "lowrank":
                value = nuclear_norm_loss(h)
                g = h.flow_gradient(nuclear_norm_gradient(h))
            else:
                lam = self.cfg.lambda_sub
                value = subspace_loss(h, lam)
                g = h.flow_gradient(
                    subspace_gradient(h, lam, envelope=not self.cfg.full_subspace_gradient)
                )
        grad.reshape(-1, 2)[sample] = g
        return value, grad

    def evaluate(self, uv, mask=None, sample=None, fundamental=None, transforms=None):
        uv = np.asarray(uv, dtype=np.float64)
        ph = self.photo.evaluate(uv, mask)
        sm = self.smooth.evaluate(uv)
        ep, ep_grad = self.epipolar(uv, sample, fundamental, transforms)
        mu1, mu2 = self.cfg.mu1, self.mu2
        total = ph.total + mu1 * sm.value + mu2 * ep
        grad = ph.grad + mu1 * sm.grad + mu2 * ep_grad
        return LossReport(
            total, ph.total, sm.value, ep, ph.intensity, ph.census, ph.gradient,
            grad, ph.grad, sm.grad, ep_grad,
        )


def total_loss(ref, target, flow, mask=None, cfg=None, regularizer="none",
               sample=None, fundamental=None):
    """Evaluate the total loss of ``flow`` on ``(ref, target)`` as a ``LossReport``.

    ``sample`` lists the flat pixel indices used by the epipolar term; when
    omitted it is drawn from ``mask`` with ``cfg.rng_seed``.
    """
    cfg = cfg or LossConfig()
    ref, target = check_pair((ref, target))
    flow = as_flow(flow, ref.shape)
    if mask is None:
        mask = OcclusionMask.ones(*ref.shape)
    if sample is None and regularizer != "none":
        sample = sample_pixels(mask, cfg.sample_count, cfg.rng_seed)
    objective = FlowObjective(ref, target, cfg, regularizer)
    return objective.evaluate(flow.uv, mask, sample, fundamental)


# -- optimization ---------------------------------------------------------------


@dataclass
class OptimizeResult:
    forward: FlowField
    backward: FlowField
    occlusion: OcclusionMask
    history: list
    converged: bool = True


def _precondition(grad, sigma):
    if sigma <= 0:
        return grad
    return gaussian_filter(grad, (sigma, sigma, 0), mode="nearest")


def _normalized(grad):
    rms = np.sqrt(np.mean(np.sum(grad * grad, axis=-1)))
    return grad / rms if rms > 0 else grad


class _Direction:
    """State of one flow direction during optimization."""

    def __init__(self, objective, uv):
        self.objective = objective
        self.uv = np.array(uv, dtype=np.float64)
        self.velocity = np.zeros_like(self.uv)
        self.fundamental = None


def _refresh_fundamental(state, sample):
    corrs = flow_to_correspondences(FlowField(state.uv)).subset(sample)
    try:
        state.fundamental = estimate_fundamental_8pt(corrs)
    except (DegenerateConfiguration, TooFewPoints):
        state.fundamental = None


def _run_level(pair, fw_uv, bw_uv, cfg, finest, rng, history, iteration0):
    ref, target = pair
    lcfg = cfg.loss
    reg = cfg.regularizer if finest else "none"
    states = [
        _Direction(FlowObjective(ref, target, lcfg, reg), fw_uv),
        _Direction(FlowObjective(target, ref, lcfg, reg), bw_uv),
    ]
    h, w = ref.shape
    decay = cfg.final_step_ratio ** (1.0 / max(cfg.iterations - 1, 1))
    best = (np.inf, None, None, None)
    it = iteration0
    for i in range(cfg.iterations):
        if it >= cfg.warmup_iterations:
            masks = [
                occlusion_mask(states[0].uv, states[1].uv, lcfg.tau),
                occlusion_mask(states[1].uv, states[0].uv, lcfg.tau),
            ]
            if masks[0].count == 0 or masks[1].count == 0:
                masks = [OcclusionMask.ones(h, w), OcclusionMask.ones(h, w)]
        else:
            masks = [OcclusionMask.ones(h, w), OcclusionMask.ones(h, w)]
        step = cfg.step * decay**i
        record = {"level_shape": (h, w), "iteration": it, "step": step}
        total = 0.0
        for name, state, mask in zip(("forward", "backward"), states, masks):
            sample = None
            if reg != "none":
                sample = sample_pixels(mask, lcfg.sample_count, rng)
                if reg == "sampson" and (state.fundamental is None or i % cfg.f_refresh_interval == 0):
                    _refresh_fundamental(state, sample)
                if reg == "sampson" and state.fundamental is None:
                    sample = None
            report = state.objective.evaluate(state.uv, mask, sample, state.fundamental)
            record[name] = report.summary()
            total += report.total
            state.velocity = cfg.momentum * state.velocity + (1 - cfg.momentum) * _normalized(_precondition(report.grad, cfg.precondition_sigma))
        record["total"] = total
        history.append(record)
        if finest and np.isfinite(total) and total < best[0]:
            best = (total, states[0].uv.copy(), states[1].uv.copy(), masks[0])
        for state in states:
            state.uv -= step * state.velocity
        it += 1
    if finest and best[1] is not None:
        return best[1], best[2], best[3], it
    return states[0].uv, states[1].uv, masks[0], it


def optimize(pair, cfg=None, init=None, init_backward=None, finest_only=False):
    """Estimate forward and backward flow for an image pair.

    Returns an ``OptimizeResult`` holding the best-so-far finest-level
    flows, the forward occlusion mask and the per-iteration loss history.
    A ``NonConvergenceWarning`` is issued when the finest-level loss does
    not improve over the last quarter of its iterations.
    """
    cfg = cfg or OptimizerConfig()
    ref, target = check_pair(pair)
    if init is not None:
        init = as_flow(init, ref.shape)
    if init_backward is not None:
        init_backward = as_flow(init_backward, ref.shape)
    pyramid = Pyramid.build(ref, target, 1 if finest_only else cfg.levels)
    rng = np.random.default_rng(cfg.loss.rng_seed)
    history = []

    levels = pyramid.levels[::-1]
    coarse_shape = levels[0][0].shape
    fw = np.zeros(coarse_shape + (2,))
    bw = np.zeros(coarse_shape + (2,))
    if init is not None:
        fw = upsample_flow(init.uv, coarse_shape)
    if init_backward is not None:
        bw = upsample_flow(init_backward.uv, coarse_shape)
    elif init is not None:
        bw = -fw  # first-order inverse of the initial forward flow
    it = 0
    mask = None
    for idx, pair_l in enumerate(levels):
        shape = pair_l[0].shape
        if fw.shape[:2] != shape:
            fw = upsample_flow(fw, shape)
            bw = upsample_flow(bw, shape)
        finest = idx == len(levels) - 1
        fw, bw, mask, it = _run_level(pair_l, fw, bw, cfg, finest, rng, history, it)

    converged = _check_convergence(history, cfg.iterations)
    return OptimizeResult(FlowField(fw), FlowField(bw), mask, history, converged)


def _check_convergence(history, iterations):
    final = [r["total"] for r in history[-iterations:]]
    quarter = max(len(final) // 4, 1)
    if len(final) < 4 or min(final[-quarter:]) < min(final[:-quarter]):
        return True
    warnings.warn(
        "finest-level loss did not improve over the last 25% of iterations",
        NonConvergenceWarning,
        stacklevel=3,
    )
    return False


def finetune_epipolar(pair, base_flow, cfg=None, base_backward=None):
    """Refine an externally supplied flow at the finest level only.

    ``cfg`` defaults to ``OptimizerConfig.for_finetune()``.  Without
    ``base_backward`` the backward flow starts at ``-base_flow``.
    """
    base_flow = as_flow(base_flow)
    cfg = cfg or OptimizerConfig.for_finetune()
    return optimize(pair, cfg, init=base_flow, init_backward=base_backward, finest_only=True)
