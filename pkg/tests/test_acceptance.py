"""End-to-end acceptance criteria, each with its tolerance and time budget.

Every test records a one-line verdict that ``conftest.py`` prints in the
terminal summary.
"""

import subprocess
import sys
import time
import warnings

import numpy as np

from conftest import rigid_correspondences, scene
from epiflow import io
from epiflow.epipolar import estimate_fundamental_8pt, sampson_gradient, sampson_loss
from epiflow.exceptions import NonConvergenceWarning
from epiflow.optimizer import OptimizerConfig, optimize
from epiflow.photometric import PhotometricTerm, occlusion_mask
from epiflow.segmentation import MotionSegmenter, clustering_accuracy
from epiflow.smoothness import SmoothnessTerm
from epiflow.subspace import (
    lift,
    nuclear_norm_gradient,
    nuclear_norm_loss,
    numerical_rank,
    sample_pixels,
    subspace_gradient,
    subspace_loss,
    subspace_loss_direct,
)
from epiflow.types import CorrespondenceSet, Image, LossConfig, OcclusionMask, flow_to_correspondences

VERDICTS = []

# epipolar weights for the regularization comparison; see the notes in README
CALIBRATED_MU2 = {"subspace": 0.03, "lowrank": 0.005}


class Verdict:
    def __init__(self, number, title, limit):
        self.number, self.title, self.limit = number, title, limit

    def __enter__(self):
        self.start = time.perf_counter()
        self.detail = ""
        return self

    def __exit__(self, exc_type, exc, tb):
        elapsed = time.perf_counter() - self.start
        ok = exc_type is None and elapsed < self.limit
        reason = self.detail
        if exc_type is not None:
            reason = f"{reason} {exc_type.__name__}: {str(exc).splitlines()[0] if str(exc) else ''}".strip()
        VERDICTS.append(
            f"criterion {self.number:2d} {'PASS' if ok else 'FAIL'}  {self.title}: "
            f"{reason} [{elapsed:.1f} s / {self.limit:.0f} s]"
        )
        if exc_type is None:
            assert elapsed < self.limit, f"took {elapsed:.1f} s, budget {self.limit} s"
        return False


def visible_sample(s, count=2000, seed=0):
    index = sample_pixels(s.occlusion, count, seed)
    return flow_to_correspondences(s.flow).subset(index), s.labels.ravel()[index]


def mean_epe(flow, s):
    return float(np.linalg.norm(flow.uv - s.flow.uv, axis=-1)[s.occlusion.values].mean())


def test_criterion_01_rank_structure():
    expected = {"rigid": 8, "pure-rotation": 6, "static": 6, "planar": 6,
                "parallel-translation": 7, "two-motion": 9}
    with Verdict(1, "rank of lifted ground truth", 5) as v:
        ranks = {case: numerical_rank(lift(visible_sample(scene(case))[0]), 1e-8) for case in expected}
        v.detail = " ".join(f"{c}={r}" for c, r in ranks.items())
        assert ranks == expected


def test_criterion_02_closed_form_equivalence():
    rng = np.random.default_rng(2)
    with Verdict(2, "closed-form subspace loss", 10) as v:
        worst = 0.0
        for lam in (0.1, 10.0, 1000.0):
            for _ in range(100):
                h = rng.standard_normal((9, 50))
                a, b = subspace_loss(h, lam), subspace_loss_direct(h, lam)
                worst = max(worst, abs(a - b) / abs(b))
        v.detail = f"max relative difference {worst:.1e}"
        assert worst < 1e-9


def _fd(fn, x, d, h):
    return (fn(x + h * d) - fn(x - h * d)) / (2 * h)


def _rel(a, b):
    return abs(a - b) / max(abs(b), 1e-12)


def _smooth_image(rng, shape):
    from scipy.ndimage import gaussian_filter

    a = gaussian_filter(rng.uniform(size=shape), 1.5)
    return Image((a - a.min()) / np.ptp(a) * 0.8 + 0.1)


def _interior_flow(rng, h, w):
    """Random flow whose samples stay inside the image and off the pixel grid."""
    uv = rng.integers(-1, 2, (h, w, 2)) + rng.uniform(0.2, 0.8, (h, w, 2))
    uv[..., 0] = np.clip(uv[..., 0], -np.arange(w) + 0.2, w - 1 - np.arange(w) - 0.2)
    uv[..., 1] = np.clip(uv[..., 1], -np.arange(h)[:, None] + 0.2, h - 1 - np.arange(h)[:, None] - 0.2)
    return uv


def test_criterion_03_gradient_suite():
    rng = np.random.default_rng(3)
    worst = {}

    def record(name, value):
        worst[name] = max(worst.get(name, 0.0), value)

    with Verdict(3, "analytic gradients vs central differences", 60) as v:
        for _ in range(100):
            corrs, _ = rigid_correspondences(rng, 12, noise=1.0)
            d = rng.standard_normal(corrs.displacement.shape)
            f = rng.standard_normal((3, 3))

            def moved(t):
                return CorrespondenceSet(corrs.points, corrs.displacement + t * d)

            for name, loss, grad in [
                ("sampson", lambda c: sampson_loss(c, f), lambda c: sampson_gradient(c, f)),
                ("nuclear", lambda c: nuclear_norm_loss(lift(c)),
                 lambda c: (h := lift(c)).flow_gradient(nuclear_norm_gradient(h))),
                ("subspace", lambda c: subspace_loss(lift(c), 10.0),
                 lambda c: (h := lift(c)).flow_gradient(subspace_gradient(h, 10.0))),
            ]:
                analytic = np.sum(grad(corrs) * d)
                record(name, _rel(analytic, _fd(lambda t: loss(moved(t)), 0.0, 1.0, 1e-6)))

            ref, target = _smooth_image(rng, (9, 10)), _smooth_image(rng, (9, 10))
            term = PhotometricTerm(ref, target)
            uv = _interior_flow(rng, 9, 10)
            mask = OcclusionMask(rng.uniform(size=(9, 10)) > 0.2)
            d = rng.standard_normal(uv.shape)
            out = term.evaluate(uv, mask)
            for name in ("intensity", "census", "gradient"):
                num = _fd(lambda w: getattr(term.evaluate(w, mask), name), uv, d, 1e-6)
                record(name, _rel(np.sum(getattr(out, "grad_" + name) * d), num))
            smooth = SmoothnessTerm(ref)
            w = rng.standard_normal(uv.shape)
            num = _fd(lambda x: smooth.evaluate(x).value, w, d, 1e-6)
            record("smoothness", _rel(np.sum(smooth.evaluate(w).grad * d), num))
        v.detail = " ".join(f"{k}={e:.1e}" for k, e in worst.items())
        for name in ("sampson", "nuclear", "subspace", "smoothness"):
            assert worst[name] < 1e-4, name
        for name in ("intensity", "census", "gradient"):
            assert worst[name] < 1e-3, name


def test_criterion_04_eight_point_oracle():
    rng = np.random.default_rng(4)
    with Verdict(4, "8-point recovery", 1) as v:
        corrs, _ = rigid_correspondences(rng, 50)
        f = np.asarray(estimate_fundamental_8pt(corrs))
        resid = np.abs(np.einsum("ij,jk,ik->i", corrs.x_prime, f, corrs.x)).max()
        samp = sampson_loss(corrs, f)
        v.detail = f"max residual {resid:.1e}, Sampson {samp:.1e}"
        assert resid < 1e-9 and samp < 1e-12


def test_criterion_05_regularization_improves_repeated_texture():
    cfgs = {
        "none": OptimizerConfig(iterations=100),
        **{
            reg: OptimizerConfig(iterations=100, regularizer=reg, loss=LossConfig(mu2=mu2))
            for reg, mu2 in CALIBRATED_MU2.items()
        },
    }
    with Verdict(5, "epipolar regularization on repeated texture", 300) as v:
        epes = {name: [] for name in cfgs}
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", NonConvergenceWarning)
            for seed in range(5):
                s = scene("rigid-repeated", seed)
                for name, cfg in cfgs.items():
                    epes[name].append(mean_epe(optimize((s.ref, s.target), cfg).forward, s))
        means = {name: float(np.mean(e)) for name, e in epes.items()}
        gain = {name: 1 - means[name] / means["none"] for name in CALIBRATED_MU2}
        v.detail = (f"EPE none={means['none']:.3f} "
                    + " ".join(f"{n}={means[n]:.3f} ({100 * gain[n]:.0f}% lower)" for n in CALIBRATED_MU2))
        for name in CALIBRATED_MU2:
            assert gain[name] >= 0.10, name


def test_criterion_06_multi_motion_robustness():
    s = scene("two-motion")
    with Verdict(6, "subspace mode on two motions", 300) as v:
        results = {}
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", NonConvergenceWarning)
            for reg in ("none", "subspace", "sampson"):
                results[reg] = optimize((s.ref, s.target), OptimizerConfig(iterations=100, regularizer=reg))
        epe = {reg: mean_epe(r.forward, s) for reg, r in results.items()}
        finest = [r for r in results["subspace"].history if r["level_shape"] == s.ref.shape]
        finite = all(np.isfinite(r[d]["epipolar"]) for r in finest for d in ("forward", "backward"))
        v.detail = (f"EPE none={epe['none']:.3f} subspace={epe['subspace']:.3f} "
                    f"sampson={epe['sampson']:.3f} (unbounded), subspace loss finite={finite}")
        assert finite
        assert epe["subspace"] <= 1.1 * epe["none"]


def test_criterion_07_segmentation():
    s = scene("three-motion")
    with Verdict(7, "three-motion segmentation", 30) as v:
        corrs, truth = visible_sample(s)
        seg = MotionSegmenter().fit(corrs)
        acc = clustering_accuracy(truth, seg.labels_)
        v.detail = f"accuracy {acc:.4f}, motions {seg.n_motions_}"
        assert acc >= 0.95 and seg.n_motions_ == 3


def test_criterion_08_occlusion_check():
    s = scene("occluder")
    with Verdict(8, "forward-backward occlusion check", 5) as v:
        est = ~occlusion_mask(s.flow, s.backward_flow, tau=3.0).values
        truth = ~s.occlusion.values
        hit = np.sum(est & truth)
        recall, precision = hit / truth.sum(), hit / max(est.sum(), 1)
        v.detail = f"recall {recall:.3f}, precision {precision:.3f}"
        assert recall >= 0.9 and precision >= 0.8


def test_criterion_09_io_round_trips(tmp_path):
    import cv2

    with Verdict(9, "file format round trips", 1) as v:
        uv = np.random.default_rng(9).standard_normal((7, 9, 2)).astype(np.float32).astype(np.float64)
        io.write_flo(tmp_path / "a.flo", uv)
        exact = io.read_flo(tmp_path / "a.flo").uv.tobytes() == uv.tobytes()
        raw = np.array([[[1, 32768, 32768 + 640], [1, 32768 - 64, 32769]],
                        [[1, 0, 65535], [0, 32768, 32768]]], dtype=np.uint16)  # B, G, R
        cv2.imwrite(str(tmp_path / "k.png"), raw)
        flow, valid = io.read_kitti_flow(tmp_path / "k.png")
        expected_u = (raw[..., 2].astype(float) - 2**15) / 64
        expected_v = (raw[..., 1].astype(float) - 2**15) / 64
        kitti = (np.array_equal(flow.uv[..., 0][valid.values], expected_u[raw[..., 0] > 0])
                 and np.array_equal(flow.uv[..., 1][valid.values], expected_v[raw[..., 0] > 0])
                 and valid.count == 3)
        res = io.evaluate(uv, uv)
        v.detail = f"flo exact={exact}, kitti decode={kitti}, eval EPE={res.epe_all} Fl={res.fl_all}"
        assert exact and kitti and res.epe_all == 0 and res.fl_all == 0


def test_criterion_10_cli_determinism(tmp_path):
    s = scene("rigid")
    io.write_image(tmp_path / "1.png", s.ref)
    io.write_image(tmp_path / "2.png", s.target)
    cfg = tmp_path / "cfg.txt"
    cfg.write_text("regularizer = subspace\n")
    with Verdict(10, "bit-identical CLI reruns", 300) as v:
        outs = []
        for run in range(2):
            out = tmp_path / f"run{run}.flo"
            cmd = [sys.executable, "-m", "epiflow.cli", "estimate", str(tmp_path / "1.png"),
                   str(tmp_path / "2.png"), "--out", str(out), "--config", str(cfg), "--seed", "7"]
            subprocess.run(cmd, check=True, capture_output=True)
            outs.append(out.read_bytes())
        v.detail = f"{len(outs[0])} bytes, identical={outs[0] == outs[1]}"
        assert outs[0] == outs[1]
