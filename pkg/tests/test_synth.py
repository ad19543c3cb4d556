import numpy as np
import pytest
from sklearn.base import clone

from conftest import scene
from epiflow import EpipolarFlow
from epiflow.synth import CASES, FOCAL, HEIGHT, WIDTH, intrinsics, make_scene, translated_pair


def test_intrinsics():
    k = intrinsics()
    assert k[0, 0] == k[1, 1] == FOCAL
    # principal point at the pixel-centre midpoint of the 256x192 frame
    assert (k[0, 2], k[1, 2]) == (127.5, 95.5)


@pytest.mark.parametrize("case", sorted(CASES))
def test_scenes_are_consistent(case):
    s = scene(case)
    assert s.ref.shape == s.target.shape == s.flow.shape == (HEIGHT, WIDTH)
    assert 0.5 < s.occlusion.values.mean() <= 1.0
    assert s.labels.max() + 1 <= len(s.motions)


@pytest.mark.parametrize("case", ["rigid", "two-motion", "occluder"])
def test_forward_then_backward_returns_home(case):
    from epiflow.photometric import _bilinear

    s = scene(case)
    ys, xs = np.mgrid[0:HEIGHT, 0:WIDTH]
    fw = s.flow.uv
    back = _bilinear(s.backward_flow.uv, xs + fw[..., 0], ys + fw[..., 1])
    err = np.linalg.norm(fw + back, axis=-1)[s.occlusion.values]
    assert np.median(err) < 0.05


def test_ground_truth_flow_satisfies_epipolar_constraint():
    s = scene("rigid")
    f = s.fundamental()
    ys, xs = np.mgrid[0:HEIGHT, 0:WIDTH]
    x = np.stack([xs, ys, np.ones_like(xs)], -1).reshape(-1, 3).astype(float)
    xp = x.copy()
    xp[:, :2] += s.flow.uv.reshape(-1, 2)
    r = np.einsum("ij,jk,ik->i", xp, f, x)
    assert np.abs(r).max() < 1e-8 * np.abs(f).max() * WIDTH**2


def test_repeated_texture_panel_covers_thirty_percent():
    s = scene("rigid-repeated")
    panel = s.surfaces == 0
    assert 0.27 <= panel.mean() <= 0.33


def test_scenes_are_deterministic_and_seeded():
    a, b = make_scene("rigid", 1), make_scene("rigid", 1)
    np.testing.assert_array_equal(a.ref.data, b.ref.data)
    assert not np.array_equal(make_scene("rigid", 2).ref.data, a.ref.data)
    with pytest.raises(ValueError):
        make_scene("nope")


def test_translated_pair():
    ref, target, flow = translated_pair((5.0, 3.0))
    np.testing.assert_allclose(target.data[10:, 10:], ref.data[7:-3, 5:-5], atol=1e-12)
    assert flow.uv[0, 0].tolist() == [5.0, 3.0]


def test_estimator_follows_sklearn_conventions():
    est = EpipolarFlow(regularizer="subspace", iterations=5, levels=2, random_state=4)
    assert est.get_params()["regularizer"] == "subspace"
    twin = clone(est)
    assert twin.get_params() == est.get_params()
    with pytest.raises(ValueError):
        EpipolarFlow(regularizer="x").fit()
    ref, target, _ = translated_pair((2.0, 1.0), shape=(64, 80))
    flows = est.fit().transform([(ref, target)])
    assert flows[0].shape == (64, 80)
    assert est.config_.loss.rng_seed == 4 and len(est.history_) == 10
    refined = est.estimate(ref, target, init=flows[0])
    assert refined.shape == (64, 80)
