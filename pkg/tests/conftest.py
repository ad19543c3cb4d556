import functools

import numpy as np
import pytest

from epiflow.synth import make_scene


@functools.lru_cache(maxsize=None)
def scene(case, seed=0):
    return make_scene(case, seed)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def rigid_correspondences(rng, n=60, noise=0.0):
    """Points of a random rigid scene seen by two cameras, plus the true F."""
    from epiflow.synth import Motion, fundamental_from_motion, intrinsics, rotation
    from epiflow.types import CorrespondenceSet

    k = intrinsics()
    pts = np.column_stack([rng.uniform(-2, 2, n), rng.uniform(-1.5, 1.5, n), rng.uniform(4, 10, n)])
    motion = Motion(rotation([0.2, 1.0, -0.1], 2.0), np.array([0.3, -0.05, 0.2]))
    moved = motion.apply(pts)
    x1 = pts @ k.T
    x2 = moved @ k.T
    x1 = x1[:, :2] / x1[:, 2:]
    x2 = x2[:, :2] / x2[:, 2:] + noise * rng.standard_normal((n, 2))
    f = fundamental_from_motion(k, motion.r, motion.t)
    return CorrespondenceSet.from_points(x1, x2), f


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import VERDICTS
    except ImportError:
        return
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(VERDICTS):
            terminalreporter.write_line(line)
