"""Synthetic two-view scenes with exact ground truth.

Scenes are rendered by ray casting textured planar rectangles seen by a
pinhole camera (focal length 500 px, 256 x 192 image, principal point at
the image centre).  Every rectangle carries the id of the rigid motion that
maps it from the first camera frame into the second, so the generator
returns exact forward/backward flow, occlusion, per-pixel motion labels
and one fundamental matrix per motion.

Available cases (see ``CASES``):

rigid
    Room-like box (depth 6-10 m) with two static boxes in front (4-6 m),
    general ego-motion.
rigid-repeated
    ``rigid`` plus a fronto-parallel panel with a periodic dot texture
    covering 30% of the image.
static
    ``rigid`` geometry with zero motion.
pure-rotation
    ``rigid`` geometry, camera rotation only.
planar
    A single tilted plane under general motion.
parallel-translation
    Camera translating along the image x axis over a surface whose inverse
    depth is quadratic in the image row (rendered in closed form).
two-motion, three-motion
    ``rigid`` background plus one or two independently moving boxes.
occluder
    Static camera, fronto-parallel background, a square moving 8 px right.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import map_coordinates
from scipy.spatial.transform import Rotation

from .types import FlowField, Image, OcclusionMask

FOCAL = 500.0
WIDTH = 256
HEIGHT = 192


def intrinsics(width=WIDTH, height=HEIGHT, focal=FOCAL):
    return np.array(
        [[focal, 0.0, (width - 1) / 2.0], [0.0, focal, (height - 1) / 2.0], [0, 0, 1.0]]
    )


def skew(t):
    return np.array([[0.0, -t[2], t[1]], [t[2], 0.0, -t[0]], [-t[1], t[0], 0.0]])


def fundamental_from_motion(k, r, t):
    """F mapping first-camera pixels to second-camera pixels for ``X2 = R X1 + t``."""
    k_inv = np.linalg.inv(k)
    f = k_inv.T @ skew(t) @ r @ k_inv
    return f / np.linalg.norm(f)


def rotation(axis, degrees):
    axis = np.asarray(axis, dtype=np.float64)
    return Rotation.from_rotvec(np.deg2rad(degrees) * axis / np.linalg.norm(axis)).as_matrix()


@dataclass
class Motion:
    """Rigid motion ``X2 = R X1 + t`` from first-camera to second-camera coordinates."""

    r: np.ndarray
    t: np.ndarray

    def apply(self, pts):
        return pts @ self.r.T + self.t

    def inverse(self):
        return Motion(self.r.T, -self.r.T @ self.t)

    def compose(self, first):
        """Return the motion applying ``first`` then ``self``."""
        return Motion(self.r @ first.r, self.r @ first.t + self.t)


IDENTITY = Motion(np.eye(3), np.zeros(3))


class Texture:
    """Multi-octave value noise in surface-local metric coordinates."""

    def __init__(self, seed, cells=(0.3, 0.12, 0.06), amps=(0.5, 0.3, 0.2)):
        rng = np.random.default_rng(seed)
        self.tables = [rng.random((64, 64)) for _ in cells]
        self.offsets = rng.random((len(cells), 2)) * 64
        self.cells = cells
        self.amps = np.asarray(amps) / np.sum(amps)

    def __call__(self, s, t):
        out = np.zeros(np.shape(s))
        for table, off, cell, amp in zip(self.tables, self.offsets, self.cells, self.amps):
            coords = [t / cell + off[1], s / cell + off[0]]
            out += amp * map_coordinates(table, coords, order=3, mode="grid-wrap")
        return 0.1 + 0.8 * out


class DotTexture:
    """Periodic pattern of soft dots; repeated texture that defeats local matching."""

    def __init__(self, period, angle=0.0):
        self.period = period
        self.angle = np.deg2rad(angle)

    def _rotate(self, s, t):
        c, n = np.cos(self.angle), np.sin(self.angle)
        return c * s + n * t, -n * s + c * t

    def __call__(self, s, t):
        w = 2 * np.pi / self.period
        s, t = self._rotate(s, t)
        return 0.5 + 0.4 * np.cos(w * s) * np.cos(w * t)


class StripeTexture(DotTexture):
    """Periodic stripes: matching is ambiguous along the stripes and modulo the period across them."""

    def __call__(self, s, t):
        s, _ = self._rotate(s, t)
        return 0.5 + 0.4 * np.cos(2 * np.pi / self.period * s)


@dataclass
class Rect:
    """Textured rectangle ``center + a * e1 + b * e2`` with ``|a| <= half[0]``, ``|b| <= half[1]``."""

    center: np.ndarray
    e1: np.ndarray
    e2: np.ndarray
    half: tuple
    texture: object
    motion_id: int = 0

    def moved(self, motion):
        return Rect(
            motion.apply(self.center), motion.r @ self.e1, motion.r @ self.e2,
            self.half, self.texture, self.motion_id,
        )


def _unit(v):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


def box_faces(center, size, yaw_deg, texture_seed, motion_id):
    """The six faces of an axis-aligned (up to yaw) cuboid."""
    r = rotation([0, 1, 0], yaw_deg)
    ex, ey, ez = r[:, 0], r[:, 1], r[:, 2]
    half = np.asarray(size) / 2.0
    c = np.asarray(center, dtype=np.float64)
    faces = []
    for k, (n, a, b, ha, hb, hn) in enumerate(
        [
            (ez, ex, ey, half[0], half[1], half[2]),
            (ex, ez, ey, half[2], half[1], half[0]),
            (ey, ex, ez, half[0], half[2], half[1]),
        ]
    ):
        for sgn in (-1, 1):
            faces.append(
                Rect(c + sgn * hn * n, a, b, (ha, hb),
                     Texture(texture_seed * 16 + 2 * k + (sgn > 0)), motion_id)
            )
    return faces


def room(texture_seed=0):
    """Open box seen from inside: back wall at 10 m, floor, ceiling, side walls."""
    return [
        Rect([0, 0, 10.0], [1, 0, 0], [0, 1, 0], (4.0, 3.0), Texture(texture_seed + 101)),
        Rect([0, 1.2, 6.0], [1, 0, 0], [0, 0, 1], (4.0, 4.5), Texture(texture_seed + 102)),
        Rect([0, -1.4, 6.0], [1, 0, 0], [0, 0, 1], (4.0, 4.5), Texture(texture_seed + 103)),
        Rect([-1.8, 0, 6.0], [0, 0, 1], [0, 1, 0], (4.5, 3.0), Texture(texture_seed + 104)),
        Rect([1.8, 0, 6.0], [0, 0, 1], [0, 1, 0], (4.5, 3.0), Texture(texture_seed + 105)),
    ]


def cast(rects, k, xs, ys):
    """Intersect pixel rays with rectangles.

    Returns ``(depth, index, s, t)`` per ray; ``index`` is -1 where nothing
    is hit.
    """
    k_inv = np.linalg.inv(k)
    d = np.stack([xs.ravel(), ys.ravel(), np.ones(xs.size)], axis=1) @ k_inv.T
    n_rays = len(d)
    depth = np.full(n_rays, np.inf)
    index = np.full(n_rays, -1)
    s_out = np.zeros(n_rays)
    t_out = np.zeros(n_rays)
    for i, rect in enumerate(rects):
        normal = np.cross(rect.e1, rect.e2)
        denom = d @ normal
        with np.errstate(divide="ignore", invalid="ignore"):
            lam = (rect.center @ normal) / denom
        hit = d * lam[:, None] - rect.center
        s = hit @ rect.e1
        t = hit @ rect.e2
        ok = (
            np.isfinite(lam) & (lam > 1e-6)
            & (np.abs(s) <= rect.half[0]) & (np.abs(t) <= rect.half[1])
            & (lam < depth)
        )
        depth[ok] = lam[ok]
        index[ok] = i
        s_out[ok] = s[ok]
        t_out[ok] = t[ok]
    shape = np.shape(xs)
    return depth.reshape(shape), index.reshape(shape), s_out.reshape(shape), t_out.reshape(shape)


@dataclass
class SyntheticScene:
    """Rendered image pair with exact ground truth."""

    name: str
    ref: Image
    target: Image
    flow: FlowField
    backward_flow: FlowField
    occlusion: OcclusionMask  # True where the forward flow is visible in the target
    labels: np.ndarray  # motion id per first-frame pixel
    motions: list
    k: np.ndarray = field(default_factory=intrinsics)
    surfaces: np.ndarray = None  # index of the rectangle seen at each first-frame pixel

    def fundamental(self, motion_id=0):
        m = self.motions[motion_id]
        return fundamental_from_motion(self.k, m.r, m.t)


def _render(rects, k, shape):
    ys, xs = np.mgrid[0 : shape[0], 0 : shape[1]].astype(np.float64)
    depth, index, s, t = cast(rects, k, xs, ys)
    if np.any(index < 0):
        raise ValueError("scene does not cover the whole image")
    img = np.zeros(shape)
    for i, rect in enumerate(rects):
        sel = index == i
        img[sel] = rect.texture(s[sel], t[sel])
    return img, depth, index, s, t


def _rect_points(rects, index, s, t):
    pts = np.zeros(index.shape + (3,))
    for i, rect in enumerate(rects):
        sel = index == i
        pts[sel] = rect.center + s[sel, None] * rect.e1 + t[sel, None] * rect.e2
    return pts


def _project(k, pts):
    p = pts @ k.T
    return p[..., :2] / p[..., 2:3]


def render_scene(name, rects, motions, shape=(HEIGHT, WIDTH), k=None):
    """Render both frames of a rectangle scene and derive the ground truth."""
    k = intrinsics(shape[1], shape[0]) if k is None else k
    moved = [r.moved(motions[r.motion_id]) for r in rects]
    img1, depth1, idx1, s1, t1 = _render(rects, k, shape)
    img2, depth2, idx2, s2, t2 = _render(moved, k, shape)
    ys, xs = np.mgrid[0 : shape[0], 0 : shape[1]].astype(np.float64)

    pts1 = _rect_points(rects, idx1, s1, t1)
    pts1_moved = np.zeros_like(pts1)
    labels = np.zeros(shape, dtype=int)
    for i, rect in enumerate(rects):
        sel = idx1 == i
        pts1_moved[sel] = motions[rect.motion_id].apply(pts1[sel])
        labels[sel] = rect.motion_id
    xp = _project(k, pts1_moved)
    flow = xp - np.stack([xs, ys], axis=-1)

    # visible iff the target ray through x' hits the same surface at the same depth
    tol = 1e-6
    inside = (
        (xp[..., 0] >= -tol) & (xp[..., 0] <= shape[1] - 1 + tol)
        & (xp[..., 1] >= -tol) & (xp[..., 1] <= shape[0] - 1 + tol)
    )
    dep2, idx2_at, _, _ = cast(moved, k, xp[..., 0], xp[..., 1])
    same = (idx2_at == idx1) & (np.abs(dep2 - pts1_moved[..., 2]) < 1e-6 * np.maximum(dep2, 1))
    visible = inside & same

    pts2 = _rect_points(moved, idx2, s2, t2)
    pts2_back = np.zeros_like(pts2)
    for i, rect in enumerate(moved):
        sel = idx2 == i
        pts2_back[sel] = motions[rect.motion_id].inverse().apply(pts2[sel])
    backward = _project(k, pts2_back) - np.stack([xs, ys], axis=-1)

    return SyntheticScene(
        name, Image(img1), Image(img2), FlowField(flow), FlowField(backward),
        OcclusionMask(visible), labels, list(motions), k, idx1,
    )


EGO = Motion(rotation([0.3, 1.0, 0.2], 0.4), np.array([0.05, 0.015, 0.15]))


def _static_boxes():
    return box_faces([-0.7, 0.6, 5.0], [0.8, 1.0, 0.8], 25, 7, 0) + box_faces(
        [0.9, 0.5, 4.5], [0.6, 1.2, 0.6], -30, 8, 0
    )


def scene_rigid(seed=0, motion=EGO):
    return render_scene("rigid", _static_boxes() + room(seed), [motion])


def scene_rigid_repeated(seed=0, texture=None):
    """Rigid scene whose first rectangle, a striped panel, covers ~30% of the image.

    The stripes (period 0.2 m at 4.6 m, about 22 px, at 60 degrees) make
    matching ambiguous along their direction, which is not the epipolar
    direction, so an epipolar prior can resolve what the data term cannot.
    """
    panel = Rect([-0.05, -0.4, 4.6], [1, 0, 0], [0, 1, 0], (0.92, 0.355),
                 texture or StripeTexture(0.2, 60.0))
    rects = [panel] + _static_boxes() + room(seed)
    scene = render_scene("rigid-repeated", rects, [EGO])
    return scene


def scene_static(seed=0):
    scene = scene_rigid(seed, IDENTITY)
    scene.name = "static"
    return scene


def scene_pure_rotation(seed=0):
    scene = scene_rigid(seed, Motion(rotation([0.2, 1.0, -0.3], 0.8), np.zeros(3)))
    scene.name = "pure-rotation"
    return scene


def scene_planar(seed=0):
    plane = Rect([0, 0, 7.0], _unit([1, 0, 0.3]), _unit([0, 1, -0.4]), (6.0, 6.0), Texture(seed + 11))
    return render_scene("planar", [plane], [EGO])


def _moving_boxes(count):
    own = [
        Motion(rotation([0, 1, 0.2], 3.0), np.array([-0.12, 0.0, -0.2])),
        Motion(rotation([0.2, 1, 0], -4.0), np.array([0.1, -0.03, 0.25])),
    ]
    boxes = [
        box_faces([-0.9, 0.3, 4.2], [1.4, 1.0, 1.4], 35, 21, 1),
        box_faces([0.9, 0.3, 4.2], [1.25, 1.0, 1.4], -40, 22, 2),
    ]
    rects, motions = [], [EGO]
    for i in range(count):
        rects += boxes[i]
        # object moves in the world, then the camera moves
        motions.append(EGO.compose(own[i]))
    return rects, motions


def scene_multi_motion(count, seed=0):
    rects, motions = _moving_boxes(count)
    name = {1: "two-motion", 2: "three-motion"}[count]
    return render_scene(name, rects + room(seed), motions)


def scene_parallel_translation(seed=0, shape=(HEIGHT, WIDTH), tx=0.06):
    """Lateral camera translation; inverse depth ``0.15 + 1.5 yn**2`` with ``yn`` the normalized row."""
    k = intrinsics(shape[1], shape[0])
    ys, xs = np.mgrid[0 : shape[0], 0 : shape[1]].astype(np.float64)
    yn = (ys - k[1, 2]) / k[1, 1]
    inv_depth = 0.15 + 1.5 * yn**2
    shift = -k[0, 0] * tx * inv_depth  # camera moves +x, scene flows -x
    tex = Texture(seed + 31)
    texel = 0.01  # metres per pixel for the surface texture
    img1 = tex(xs * texel, ys * texel)
    img2 = tex((xs - shift) * texel, ys * texel)
    flow = np.stack([shift, np.zeros_like(shift)], axis=-1)
    xp = xs + shift
    visible = (xp >= 0) & (xp <= shape[1] - 1)
    # backward flow: y' = y, x = x' - shift(y)
    backward = np.stack([-shift, np.zeros_like(shift)], axis=-1)
    motion = Motion(np.eye(3), np.array([-tx, 0.0, 0.0]))
    return SyntheticScene(
        "parallel-translation", Image(img1), Image(img2), FlowField(flow),
        FlowField(backward), OcclusionMask(visible), np.zeros(shape, dtype=int), [motion], k,
    )


def scene_occluder(seed=0, shift=8.0):
    k = intrinsics()
    depth_bg, depth_fg = 9.0, 4.0
    bg = Rect([0, 0, depth_bg], [1, 0, 0], [0, 1, 0], (6.0, 6.0), Texture(seed + 41))
    fg = Rect([0, 0, depth_fg], [1, 0, 0], [0, 1, 0], (0.45, 0.45), Texture(seed + 42), 1)
    move = Motion(np.eye(3), np.array([shift * depth_fg / FOCAL, 0.0, 0.0]))
    return render_scene("occluder", [fg, bg], [IDENTITY, move], k=k)


CASES = {
    "rigid": scene_rigid,
    "rigid-repeated": scene_rigid_repeated,
    "static": scene_static,
    "pure-rotation": scene_pure_rotation,
    "planar": scene_planar,
    "parallel-translation": scene_parallel_translation,
    "two-motion": lambda seed=0: scene_multi_motion(1, seed),
    "three-motion": lambda seed=0: scene_multi_motion(2, seed),
    "occluder": scene_occluder,
}


def make_scene(case, seed=0):
    try:
        return CASES[case](seed=seed)
    except KeyError:
        raise ValueError(f"unknown scene {case!r}; choose from {sorted(CASES)}") from None


def translated_pair(shift=(5.0, 3.0), seed=0, shape=(HEIGHT, WIDTH)):
    """Textured image and its copy translated by ``shift`` pixels, plus the exact flow."""
    tex = Texture(seed + 51)
    ys, xs = np.mgrid[0 : shape[0], 0 : shape[1]].astype(np.float64)
    texel = 0.01
    img1 = tex(xs * texel, ys * texel)
    img2 = tex((xs - shift[0]) * texel, (ys - shift[1]) * texel)
    flow = np.broadcast_to(np.asarray(shift, dtype=np.float64), shape + (2,))
    return Image(img1), Image(img2), FlowField(flow)
