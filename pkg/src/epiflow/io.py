"""File formats, evaluation metrics, flow visualization and config files."""

import dataclasses
import os
from dataclasses import dataclass, fields

import numpy as np
from PIL import Image as PILImage

from .exceptions import BadFormat, BadMagic, ConfigError, NoValidPixels, TruncatedFile
from .types import FlowField, Image, LossConfig, OcclusionMask

FLO_MAGIC = np.float32(202021.25)  # the bytes b"PIEH" read as a little-endian float
KITTI_OFFSET = 2**15
KITTI_SCALE = 64.0
CONFIG_ENV = "EPIFLOW_CONFIG"


# -- .flo ----------------------------------------------------------------------


def write_flo(path, flow):
    """Write a flow field in the Middlebury ``.flo`` format."""
    uv = flow.uv if isinstance(flow, FlowField) else np.asarray(flow)
    h, w = uv.shape[:2]
    with open(path, "wb") as f:
        f.write(b"PIEH")
        f.write(np.array([w, h], dtype="<i4").tobytes())
        f.write(np.asarray(uv, dtype="<f4").tobytes())


def read_flo(path):
    """Read a Middlebury ``.flo`` file into a ``FlowField``."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 12:
        raise TruncatedFile(f"{path}: header needs 12 bytes, got {len(raw)}")
    if np.frombuffer(raw[:4], "<f4")[0] != FLO_MAGIC:
        raise BadMagic(f"{path}: missing PIEH tag")
    w, h = (int(v) for v in np.frombuffer(raw[4:12], "<i4"))
    if w < 0 or h < 0:
        raise BadFormat(f"{path}: negative dimensions {w}x{h}")
    need = 12 + 8 * w * h
    if len(raw) < need:
        raise TruncatedFile(f"{path}: expected {need} bytes, got {len(raw)}")
    uv = np.frombuffer(raw[12:need], "<f4").reshape(h, w, 2)
    return FlowField(uv.astype(np.float64))


# -- KITTI ---------------------------------------------------------------------


def read_kitti_flow(path):
    """Decode a KITTI 16-bit flow PNG; returns ``(FlowField, validity mask)``."""
    import cv2

    raw = cv2.imread(os.fspath(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise BadFormat(f"{path}: not a readable PNG")
    if raw.dtype != np.uint16 or raw.ndim != 3 or raw.shape[2] != 3:
        raise BadFormat(f"{path}: expected a 16-bit 3-channel PNG")
    rgb = raw[..., ::-1].astype(np.float64)  # OpenCV stores BGR
    uv = (rgb[..., :2] - KITTI_OFFSET) / KITTI_SCALE
    valid = rgb[..., 2] > 0
    uv[~valid] = 0.0
    return FlowField(uv), OcclusionMask(valid)


def write_kitti_flow(path, flow, valid=None):
    """Encode a flow field as a KITTI 16-bit PNG."""
    import cv2

    uv = flow.uv if isinstance(flow, FlowField) else np.asarray(flow)
    if valid is None:
        valid = np.ones(uv.shape[:2], dtype=bool)
    valid = np.asarray(getattr(valid, "values", valid), dtype=bool)
    enc = np.clip(np.round(uv * KITTI_SCALE + KITTI_OFFSET), 0, 2**16 - 1)
    out = np.dstack([enc, valid.astype(np.float64)]).astype(np.uint16)
    if not cv2.imwrite(os.fspath(path), out[..., ::-1]):
        raise BadFormat(f"{path}: could not write PNG")


# -- images --------------------------------------------------------------------


def read_image(path):
    """Load an 8-bit image as an ``Image`` in [0, 1] (gray stays gray)."""
    try:
        with PILImage.open(path) as im:
            if im.mode not in ("L", "RGB"):
                im = im.convert("RGB")
            data = np.asarray(im, dtype=np.float64) / 255.0
    except (OSError, ValueError) as exc:
        raise BadFormat(f"{path}: {exc}") from exc
    return Image(data)


def write_image(path, image):
    """Save an ``Image`` or array in [0, 1] as an 8-bit PNG."""
    data = image.data if isinstance(image, Image) else np.asarray(image)
    if data.dtype != np.uint8:
        data = np.clip(np.round(np.asarray(data, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    PILImage.fromarray(data).save(path, format="PNG")


def read_mask(path):
    """Read a mask PNG; nonzero pixels are true."""
    try:
        with PILImage.open(path) as im:
            data = np.asarray(im)
    except OSError as exc:
        raise BadFormat(f"{path}: {exc}") from exc
    if data.ndim == 3:
        data = data[..., 0]
    return OcclusionMask(data > 0)


def read_flow(path):
    """Read ground truth from ``.flo`` or KITTI PNG; returns ``(flow, valid)``."""
    if os.fspath(path).lower().endswith(".png"):
        return read_kitti_flow(path)
    flow = read_flo(path)
    return flow, OcclusionMask(np.all(np.isfinite(flow.uv), axis=-1))


# -- evaluation ----------------------------------------------------------------


@dataclass(frozen=True)
class EvalResult:
    epe_all: float
    epe_noc: float
    fl_all: float
    valid_count: int

    def to_dict(self):
        return dataclasses.asdict(self)


def _mask_values(mask, shape):
    if mask is None:
        return np.ones(shape, dtype=bool)
    m = np.asarray(getattr(mask, "values", mask), dtype=bool)
    if m.shape != shape:
        raise ValueError(f"mask shape {m.shape} does not match flow shape {shape}")
    return m


def evaluate(est, gt, validity=None, noc_mask=None):
    """Endpoint error and KITTI outlier rate of ``est`` against ``gt``.

    A pixel is an outlier when its endpoint error exceeds both 3 px and
    5% of the ground-truth magnitude.  ``noc_mask`` restricts ``epe_noc``
    to non-occluded pixels (it equals ``epe_all`` when omitted).
    """
    est_uv = est.uv if isinstance(est, FlowField) else np.asarray(est, dtype=np.float64)
    gt_uv = gt.uv if isinstance(gt, FlowField) else np.asarray(gt, dtype=np.float64)
    if est_uv.shape != gt_uv.shape:
        raise ValueError(f"flow shapes differ: {est_uv.shape} vs {gt_uv.shape}")
    shape = gt_uv.shape[:2]
    valid = _mask_values(validity, shape)
    count = int(valid.sum())
    if count == 0:
        raise NoValidPixels("no valid ground-truth pixels")
    err = np.linalg.norm(est_uv - gt_uv, axis=-1)
    mag = np.linalg.norm(gt_uv, axis=-1)
    outlier = (err > 3.0) & (err > 0.05 * mag)
    noc = valid & _mask_values(noc_mask, shape)
    epe_noc = float(err[noc].mean()) if noc.any() else float("nan")
    return EvalResult(float(err[valid].mean()), epe_noc, float(outlier[valid].mean()), count)


# -- visualization -------------------------------------------------------------


def color_wheel():
    """The 55-entry Middlebury color wheel as ``(55, 3)`` floats in [0, 1]."""
    segments = [(15, (1, 0, 0), (1, 1, 0)), (6, (1, 1, 0), (0, 1, 0)), (4, (0, 1, 0), (0, 1, 1)),
                (11, (0, 1, 1), (0, 0, 1)), (13, (0, 0, 1), (1, 0, 1)), (6, (1, 0, 1), (1, 0, 0))]
    rows = []
    for n, start, end in segments:
        t = np.arange(n)[:, None] / n
        rows.append((1 - t) * np.array(start, float) + t * np.array(end, float))
    return np.vstack(rows)


def flow_to_color(flow, max_magnitude=None):
    """Render flow with the Middlebury wheel: hue is direction, saturation magnitude.

    ``max_magnitude`` defaults to the largest finite magnitude in ``flow``.
    Zero flow maps to white; pixels at ``max_magnitude`` are fully saturated.
    """
    uv = flow.uv if isinstance(flow, FlowField) else np.asarray(flow, dtype=np.float64)
    u, v = uv[..., 0], uv[..., 1]
    bad = ~(np.isfinite(u) & np.isfinite(v))
    u, v = np.where(bad, 0, u), np.where(bad, 0, v)
    mag = np.hypot(u, v)
    if max_magnitude is None:
        max_magnitude = float(mag.max())
    rad = np.clip(mag / max_magnitude, 0, 1) if max_magnitude > 0 else np.zeros_like(mag)
    wheel = color_wheel()
    ncols = len(wheel)
    fk = (np.arctan2(-v, -u) / np.pi + 1) / 2 * (ncols - 1)
    k0 = np.floor(fk).astype(int)
    k1 = (k0 + 1) % ncols
    f = (fk - k0)[..., None]
    col = (1 - f) * wheel[k0] + f * wheel[k1]
    col = 1 - rad[..., None] * (1 - col)
    col[bad] = 0
    return Image(col)


def affinity_image(affinity, labels=None):
    """Heat map of an affinity matrix, rows and columns grouped by label."""
    a = np.asarray(affinity, dtype=np.float64)
    if labels is not None:
        order = np.argsort(np.asarray(labels), kind="stable")
        a = a[np.ix_(order, order)]
    top = np.percentile(a[a > 0], 99) if np.any(a > 0) else 1.0
    return Image(1 - np.clip(a / top, 0, 1))


# -- config --------------------------------------------------------------------


def _coerce(raw, current, key):
    if isinstance(current, bool):
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    try:
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, float) or current is None:
            return None if raw.lower() == "none" else float(raw)
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {raw!r}") from exc
    return raw


def parse_config(text):
    """Parse flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for number, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {number}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {number}: empty key")
        out[key] = value
    return out


def load_config(path=None, overrides=None, base=None):
    """Build an ``OptimizerConfig`` from a config file and overrides.

    ``path`` defaults to the file named by ``EPIFLOW_CONFIG``.  Keys may be
    any field of ``OptimizerConfig`` or ``LossConfig``; ``overrides`` win
    over the file, which wins over the ``base`` field values.
    """
    from .optimizer import OptimizerConfig

    values = {k: str(v) for k, v in (base or {}).items()}
    path = path or os.environ.get(CONFIG_ENV)
    if path:
        try:
            with open(path) as f:
                values.update(parse_config(f.read()))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    values.update({k: str(v) for k, v in (overrides or {}).items() if v is not None})

    loss_defaults = LossConfig()
    opt_fields = {f.name: f for f in fields(OptimizerConfig) if f.name != "loss"}
    loss_fields = {f.name for f in fields(LossConfig)}
    opt_kw, loss_kw = {}, {}
    for key, raw in values.items():
        if key in opt_fields:
            f = opt_fields[key]
            default = f.default if f.default is not dataclasses.MISSING else None
            opt_kw[key] = _coerce(raw, default, key)
        elif key in loss_fields:
            loss_kw[key] = _coerce(raw, getattr(loss_defaults, key), key)
        else:
            raise ConfigError(f"unknown config key {key!r}")
    try:
        return OptimizerConfig(loss=LossConfig(**loss_kw), **opt_kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
