import warnings

import numpy as np
import pytest

from conftest import scene
from epiflow.exceptions import NonConvergenceWarning
from epiflow.optimizer import (
    FINETUNE_DEFAULTS,
    FlowObjective,
    OptimizerConfig,
    Pyramid,
    downsample,
    finetune_epipolar,
    optimize,
    total_loss,
    upsample_flow,
)
from epiflow.photometric import photometric_losses
from epiflow.smoothness import smoothness_loss
from epiflow.subspace import lift, nuclear_norm_loss, sample_pixels, subspace_loss
from epiflow.synth import translated_pair
from epiflow.types import FlowField, Image, LossConfig, flow_to_correspondences


def epe(est, s):
    err = np.linalg.norm(est.uv - s.flow.uv, axis=-1)
    return err[s.occlusion.values].mean()


def small_pair(rng, shape=(40, 48)):
    from scipy.ndimage import gaussian_filter

    a = gaussian_filter(rng.uniform(size=shape), 1.2)
    a = (a - a.min()) / np.ptp(a) * 0.8 + 0.1
    b = np.roll(a, (1, 2), axis=(0, 1))
    return Image(a), Image(b)


def test_config_defaults_and_validation():
    cfg = OptimizerConfig()
    assert (cfg.levels, cfg.iterations, cfg.step, cfg.momentum) == (4, 200, 0.5, 0.9)
    assert cfg.mu2 == 0.0
    assert OptimizerConfig(regularizer="subspace").mu2 == 0.001
    ft = OptimizerConfig.for_finetune(regularizer="lowrank")
    assert ft.iterations == FINETUNE_DEFAULTS["iterations"] and ft.regularizer == "lowrank"
    for bad in ({"regularizer": "x"}, {"iterations": 0}, {"momentum": 1.0}, {"step": 0}):
        with pytest.raises(ValueError):
            OptimizerConfig(**bad)


def test_downsample_averages_blocks():
    a = np.arange(16.0).reshape(4, 4)
    np.testing.assert_allclose(downsample(a), [[2.5, 4.5], [10.5, 12.5]])
    assert downsample(np.ones((5, 7))).shape == (3, 4)


def test_upsample_scales_vectors():
    uv = np.dstack([np.full((4, 5), 1.5), np.full((4, 5), -2.0)])
    out = upsample_flow(uv, (8, 10))
    np.testing.assert_allclose(out[..., 0], 3.0)
    np.testing.assert_allclose(out[..., 1], -4.0)


def test_pyramid_respects_minimum_size():
    img = Image(np.zeros((192, 256)))
    assert Pyramid.build(img, img, 4).level_count == 3
    assert min(Pyramid.build(img, img, 10).levels[-1][0].shape) >= 32


def test_total_without_regularizer_is_photo_plus_smooth(rng):
    ref, target = small_pair(rng)
    uv = rng.uniform(-1, 1, ref.shape + (2,))
    cfg = LossConfig()
    report = total_loss(ref, target, uv, cfg=cfg)
    photo = photometric_losses(ref, target, uv, cfg=cfg)
    smooth, _ = smoothness_loss(uv, ref)
    assert report.total == photo.total + cfg.mu1 * smooth
    assert report.epipolar == 0.0


@pytest.mark.parametrize("reg", ["sampson", "lowrank", "subspace"])
def test_total_gradient_is_sum_of_components(rng, reg):
    ref, target = small_pair(rng)
    uv = rng.uniform(-1, 1, ref.shape + (2,))
    cfg = LossConfig()
    r = total_loss(ref, target, uv, cfg=cfg, regularizer=reg)
    expected = r.grad_photo + cfg.mu1 * r.grad_smooth + cfg.epipolar_weight(reg) * r.grad_epipolar
    np.testing.assert_allclose(r.grad, expected, atol=1e-10)
    assert r.total == pytest.approx(r.photo + cfg.mu1 * r.smooth + cfg.epipolar_weight(reg) * r.epipolar)
    assert np.count_nonzero(np.abs(r.grad_epipolar).sum(-1)) <= cfg.sample_count


def test_epipolar_terms_at_ground_truth_match_direct_lifting():
    s = scene("rigid")
    cfg = LossConfig()
    sample = sample_pixels(s.occlusion, cfg.sample_count, 0)
    h = lift(flow_to_correspondences(s.flow).subset(sample))
    for reg, direct in [("lowrank", nuclear_norm_loss(h)), ("subspace", subspace_loss(h, cfg.lambda_sub))]:
        r = total_loss(s.ref, s.target, s.flow, s.occlusion, cfg, reg, sample=sample)
        assert r.epipolar == pytest.approx(direct, abs=1e-6)


def test_total_loss_directional_derivative(rng):
    ref, target = small_pair(rng)
    uv = rng.integers(-1, 2, ref.shape + (2,)) + rng.uniform(0.3, 0.7, ref.shape + (2,))
    sample = np.arange(0, ref.shape[0] * ref.shape[1], 7)
    obj = FlowObjective(ref, target, LossConfig(), "subspace")
    d = rng.standard_normal(uv.shape)
    analytic = np.sum(obj.evaluate(uv, sample=sample).grad * d)
    h = 1e-6
    num = (obj.evaluate(uv + h * d, sample=sample).total - obj.evaluate(uv - h * d, sample=sample).total) / (2 * h)
    assert analytic == pytest.approx(num, rel=1e-3)


def test_translation_is_recovered():
    ref, target, flow = translated_pair((5.0, 3.0))
    res = optimize((ref, target), OptimizerConfig(iterations=100))
    err = np.linalg.norm(res.forward.uv - flow.uv, axis=-1)
    assert err[res.occlusion.values].mean() < 0.5
    # the backward flow undoes the forward one
    assert np.median(res.backward.uv.reshape(-1, 2), axis=0) == pytest.approx([-5.0, -3.0], abs=0.5)


def test_identical_frames_give_near_zero_flow(rng):
    img, _ = small_pair(rng, (64, 64))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NonConvergenceWarning)
        res = optimize((img, img), OptimizerConfig(iterations=30, regularizer="subspace"))
        tuned = finetune_epipolar((img, img), np.zeros((64, 64, 2)))
    assert np.linalg.norm(res.forward.uv, axis=-1).mean() < 0.5
    assert np.abs(tuned.forward.uv).max() < 1e-9


def test_stalled_run_reports_nonconvergence(rng):
    img, _ = small_pair(rng, (64, 64))
    with pytest.warns(NonConvergenceWarning):
        res = optimize((img, img), OptimizerConfig(iterations=8, levels=1))
    assert not res.converged


def test_reported_loss_matches_reevaluation(rng):
    ref, target = small_pair(rng, (64, 64))
    res = optimize((ref, target), OptimizerConfig(iterations=40, levels=2))
    finest = [r for r in res.history if r["level_shape"] == (64, 64)]
    best = min(finest, key=lambda r: r["total"])
    again = total_loss(ref, target, res.forward, res.occlusion)
    assert again.total == pytest.approx(best["forward"]["total"], rel=1e-9)


def test_runs_are_deterministic(rng):
    ref, target = small_pair(rng, (64, 64))
    cfg = OptimizerConfig(iterations=25, levels=2, regularizer="subspace")
    a = optimize((ref, target), cfg)
    b = optimize((ref, target), cfg)
    np.testing.assert_array_equal(a.forward.uv, b.forward.uv)
    np.testing.assert_array_equal(a.backward.uv, b.backward.uv)


def test_finetune_keeps_ground_truth():
    s = scene("rigid")
    res = finetune_epipolar((s.ref, s.target), s.flow, OptimizerConfig.for_finetune(regularizer="subspace"))
    assert epe(res.forward, s) <= 0.1


def test_finetune_reduces_noise():
    s = scene("rigid")
    rng = np.random.default_rng(0)
    half = np.sqrt(3.0)  # unit standard deviation
    noisy = FlowField(s.flow.uv + rng.uniform(-half, half, s.flow.uv.shape))
    res = finetune_epipolar((s.ref, s.target), noisy, OptimizerConfig.for_finetune(regularizer="subspace"))
    assert epe(res.forward, s) < epe(noisy, s)


def test_mismatched_pair_is_rejected(rng):
    a, _ = small_pair(rng, (40, 48))
    b, _ = small_pair(rng, (40, 40))
    with pytest.raises(ValueError):
        optimize((a, b))
