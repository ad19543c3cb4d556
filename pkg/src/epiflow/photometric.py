"""Occlusion-aware photometric data terms.

The warped target ``I2(x + v(x))`` is compared with the reference through
three Charbonnier-penalized residuals: intensity, a ternary census
signature and the central-difference image gradient.  Each term is
averaged over pixels that are both non-occluded and warped from inside the
target; flow gradients are exact for the bilinear warp.
"""

from dataclasses import dataclass

import numpy as np

from ._kernels import census_loss_grad
from .exceptions import EmptyMask
from .types import LUMA_WEIGHTS, FlowField, Image, LossConfig, OcclusionMask, to_gray


def _bilinear(img, px, py, with_grad=False):
    """Sample ``img`` (H, W[, C]) at real coordinates, clamping to the border."""
    h, w = img.shape[:2]
    pxc = np.clip(px, 0.0, w - 1)
    pyc = np.clip(py, 0.0, h - 1)
    x0 = np.minimum(np.floor(pxc).astype(np.intp), max(w - 2, 0))
    y0 = np.minimum(np.floor(pyc).astype(np.intp), max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = pxc - x0
    fy = pyc - y0
    if img.ndim == 3:
        fx, fy = fx[..., None], fy[..., None]
    i00, i01, i10, i11 = img[y0, x0], img[y0, x1], img[y1, x0], img[y1, x1]
    top = i00 + fx * (i01 - i00)
    bottom = i10 + fx * (i11 - i10)
    out = top + fy * (bottom - top)
    if not with_grad:
        return out
    dx = (1 - fy) * (i01 - i00) + fy * (i11 - i10)
    dy = bottom - top
    # the sample does not move when its coordinate is clamped
    inside_x = (px >= 0) & (px <= w - 1)
    inside_y = (py >= 0) & (py <= h - 1)
    if img.ndim == 3:
        inside_x, inside_y = inside_x[..., None], inside_y[..., None]
    return out, np.where(inside_x, dx, 0.0), np.where(inside_y, dy, 0.0)


def _sample_coords(flow_uv):
    h, w = flow_uv.shape[:2]
    ys, xs = np.mgrid[0:h, 0:w]
    px = xs + flow_uv[..., 0]
    py = ys + flow_uv[..., 1]
    valid = (px >= 0) & (px <= w - 1) & (py >= 0) & (py <= h - 1)
    return px, py, valid


def warp(target, flow, with_grad=False):
    """Backward-warp ``target`` by ``flow``: ``out(x) = target(x + flow(x))``.

    Returns ``(Image, valid)`` where ``valid`` marks samples taken inside the
    target.  With ``with_grad`` the partial derivatives of the warped
    intensities with respect to ``u`` and ``v`` are appended as arrays.
    """
    data = target.data if isinstance(target, Image) else np.asarray(target, dtype=np.float64)
    uv = flow.uv if isinstance(flow, FlowField) else np.asarray(flow, dtype=np.float64)
    if data.shape[:2] != uv.shape[:2]:
        raise ValueError("target and flow dimensions differ")
    px, py, valid = _sample_coords(uv)
    if with_grad:
        out, du, dv = _bilinear(data, px, py, with_grad=True)
        return Image(np.clip(out, 0.0, 1.0)), valid, du, dv
    return Image(np.clip(_bilinear(data, px, py), 0.0, 1.0)), valid


def occlusion_mask(forward, backward, tau=3.0):
    """Forward-backward consistency check.

    A pixel is visible when ``|v_f(x) + v_b(x + v_f(x))| <= tau``; forward
    targets outside the image are occluded.
    """
    fw = forward.uv if isinstance(forward, FlowField) else np.asarray(forward)
    bw = backward.uv if isinstance(backward, FlowField) else np.asarray(backward)
    if fw.shape != bw.shape:
        raise ValueError("forward and backward flow dimensions differ")
    px, py, valid = _sample_coords(fw)
    residual = fw + _bilinear(np.asarray(bw, dtype=np.float64), px, py)
    ok = np.sqrt(np.sum(residual**2, axis=-1)) <= tau
    return OcclusionMask(ok & valid)


@dataclass(frozen=True, eq=False)
class CensusMap:
    """Ternary census signatures, ``(H, W, (2r+1)**2 - 1)`` values in {-1, 0, 1}."""

    signature: np.ndarray
    radius: int
    epsilon: float


def census_offsets(radius):
    return [
        (dy, dx)
        for dy in range(-radius, radius + 1)
        for dx in range(-radius, radius + 1)
        if (dy, dx) != (0, 0)
    ]


def _shifted(padded, r, dy, dx, shape):
    h, w = shape
    return padded[r + dy : r + dy + h, r + dx : r + dx + w]


def census_transform(img, radius=3, epsilon=0.02):
    """Ternary census: +1 where neighbour - centre > eps, -1 where < -eps, else 0.

    Neighbours outside the image are clamped to the border.
    """
    gray = img.gray() if isinstance(img, Image) else to_gray(img)
    padded = np.pad(gray, radius, mode="edge")
    sig = np.empty(gray.shape + (len(census_offsets(radius)),), dtype=np.int8)
    for k, (dy, dx) in enumerate(census_offsets(radius)):
        d = _shifted(padded, radius, dy, dx, gray.shape) - gray
        sig[..., k] = (d > epsilon).astype(np.int8) - (d < -epsilon).astype(np.int8)
    return CensusMap(sig, radius, epsilon)


def _soft_ternary(d, eps):
    root = np.sqrt(d * d + eps * eps)
    return d / root, eps * eps / root**3


def _fold_padding(g_pad, r):
    """Adjoint of edge padding: accumulate border copies back onto the border."""
    g = g_pad.copy()
    if r == 0:
        return g
    g[r, :] += g[:r, :].sum(axis=0)
    g[-r - 1, :] += g[-r:, :].sum(axis=0)
    g = g[r:-r, :]
    g[:, r] += g[:, :r].sum(axis=1)
    g[:, -r - 1] += g[:, -r:].sum(axis=1)
    return g[:, r:-r]


def central_gradient(gray):
    """Central differences with clamped borders, returns ``(gx, gy)``."""
    p = np.pad(gray, 1, mode="edge")
    gx = 0.5 * (p[1:-1, 2:] - p[1:-1, :-2])
    gy = 0.5 * (p[2:, 1:-1] - p[:-2, 1:-1])
    return gx, gy


@dataclass
class PhotometricLosses:
    """Photometric term values and their flow gradients (each ``(H, W, 2)``)."""

    intensity: float
    census: float
    gradient: float
    total: float
    grad_intensity: np.ndarray
    grad_census: np.ndarray
    grad_gradient: np.ndarray
    grad: np.ndarray
    valid: np.ndarray


class PhotometricTerm:
    """Precomputed reference features for repeated loss evaluation against one target."""

    def __init__(self, ref, target, cfg=None, use_kernel=True):
        self.cfg = cfg or LossConfig()
        self.ref = ref.data
        self.target = target.data
        self.ref_gray = ref.gray()
        self.target_gray = target.gray()
        self.color = ref.channels == 3
        r, eps = self.cfg.census_radius, self.cfg.census_epsilon
        self.offsets = census_offsets(r)
        padded = np.pad(self.ref_gray, r, mode="edge")
        shape = self.ref_gray.shape
        self.ref_census = [
            _soft_ternary(_shifted(padded, r, dy, dx, shape) - self.ref_gray, eps)[0]
            for dy, dx in self.offsets
        ]
        self.ref_grad = central_gradient(self.ref_gray)
        self.use_kernel = use_kernel
        self.ref_census_stack = np.ascontiguousarray(np.stack(self.ref_census, axis=-1))
        self.offset_array = np.array(self.offsets, dtype=np.int64).reshape(-1, 2)

    def evaluate(self, flow_uv, mask=None):
        cfg = self.cfg
        eps = cfg.charbonnier_eps
        uv = np.asarray(flow_uv, dtype=np.float64)
        shape = self.ref_gray.shape
        if uv.shape != shape + (2,):
            raise ValueError("flow and image dimensions differ")
        px, py, valid = _sample_coords(uv)
        m = valid.copy()
        if mask is not None:
            mvals = mask.values if isinstance(mask, OcclusionMask) else np.asarray(mask, bool)
            m &= mvals
        count = m.sum()
        if count == 0:
            raise EmptyMask("no non-occluded pixel warps inside the target")
        w = m / float(count)

        # intensity (per-pixel Charbonnier of the colour residual norm)
        warped, du, dv = _bilinear(self.target, px, py, with_grad=True)
        res = warped - self.ref
        if self.color:
            norm2 = np.sum(res**2, axis=-1)
            pen = np.sqrt(norm2 + eps * eps)
            g_img = (w / pen)[..., None] * res
            gi = np.stack([np.sum(g_img * du, -1), np.sum(g_img * dv, -1)], axis=-1)
        else:
            pen = np.sqrt(res**2 + eps * eps)
            g_img = w * res / pen
            gi = np.stack([g_img * du, g_img * dv], axis=-1)
        l_int = float(np.sum(w * pen))

        gray = warped @ LUMA_WEIGHTS if self.color else warped
        gdu = du @ LUMA_WEIGHTS if self.color else du
        gdv = dv @ LUMA_WEIGHTS if self.color else dv

        l_cen, g_cen = self._census(gray, w)
        l_grd, g_grd = self._gradient(gray, w)
        gc = np.stack([g_cen * gdu, g_cen * gdv], axis=-1)
        gg = np.stack([g_grd * gdu, g_grd * gdv], axis=-1)

        total = cfg.lambda1 * l_int + cfg.lambda2 * l_cen + cfg.lambda3 * l_grd
        grad = cfg.lambda1 * gi + cfg.lambda2 * gc + cfg.lambda3 * gg
        return PhotometricLosses(l_int, l_cen, l_grd, total, gi, gc, gg, grad, valid)

    def _census(self, gray, w):
        """Census loss and its gradient with respect to the warped gray image."""
        if self.use_kernel:
            cfg = self.cfg
            return census_loss_grad(
                gray, self.ref_census_stack, self.offset_array, w,
                cfg.census_epsilon, cfg.charbonnier_eps,
            )
        return self._census_reference(gray, w)

    def _census_reference(self, gray, w):
        cfg = self.cfg
        r, eps_c, eta = cfg.census_radius, cfg.census_epsilon, cfg.charbonnier_eps
        shape = gray.shape
        n_off = len(self.offsets)
        padded = np.pad(gray, r, mode="edge")
        dist = np.zeros(shape)
        diffs = []
        for (dy, dx), ref_s in zip(self.offsets, self.ref_census):
            s, ds = _soft_ternary(_shifted(padded, r, dy, dx, shape) - gray, eps_c)
            delta = s - ref_s
            root = np.sqrt(delta * delta + eta * eta)
            dist += root - eta
            diffs.append(delta / root * ds)
        dist /= n_off
        pen = np.sqrt(dist * dist + eta * eta)
        loss = float(np.sum(w * pen))
        coef = w * dist / pen / n_off
        g_pad = np.zeros(padded.shape)
        g_center = np.zeros(shape)
        for (dy, dx), d in zip(self.offsets, diffs):
            c = coef * d
            g_pad[r + dy : r + dy + shape[0], r + dx : r + dx + shape[1]] += c
            g_center -= c
        return loss, _fold_padding(g_pad, r) + g_center

    def _gradient(self, gray, w):
        eta = self.cfg.charbonnier_eps
        gx, gy = central_gradient(gray)
        rx = gx - self.ref_grad[0]
        ry = gy - self.ref_grad[1]
        pen = np.sqrt(rx * rx + ry * ry + eta * eta)
        loss = float(np.sum(w * pen))
        cx = 0.5 * w * rx / pen
        cy = 0.5 * w * ry / pen
        h, wd = gray.shape
        g_pad = np.zeros((h + 2, wd + 2))
        g_pad[1:-1, 2:] += cx
        g_pad[1:-1, :-2] -= cx
        g_pad[2:, 1:-1] += cy
        g_pad[:-2, 1:-1] -= cy
        return loss, _fold_padding(g_pad, 1)


def photometric_losses(ref, target, flow, mask=None, cfg=None):
    """Intensity, census and gradient losses of ``flow`` on the pair ``(ref, target)``.

    Raises ``EmptyMask`` when no pixel is both visible and warped inside.
    """
    uv = flow.uv if isinstance(flow, FlowField) else flow
    return PhotometricTerm(ref, target, cfg).evaluate(uv, mask)
