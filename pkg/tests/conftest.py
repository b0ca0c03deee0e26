import math

import numpy as np
import pytest

from spinsplat.planning.planner import CameraRig
from spinsplat.rendering.reference import default_scene
from spinsplat.scene.models import GaussianCloud, look_at_pose
from spinsplat.scene.sh import default_environment


def _logit(p):
    return np.log(p / (1.0 - p))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def env():
    return default_environment()


@pytest.fixture
def scene():
    return default_scene()


@pytest.fixture
def rig():
    return CameraRig(width=16, height=16)


@pytest.fixture
def small_camera():
    """8x8 camera looking at the turntable center from the side"""
    return look_at_pose((2.5, 0.8, 1.1), (0.0, 0.0, 0.3), 8, 8, focal=9.0)


@pytest.fixture
def make_cloud():
    """Factory for small random clouds near the turntable center"""

    def build(rng, count, spread=0.25, opacity=(0.2, 0.5), scale=(0.12, 0.25)):
        positions = rng.uniform(-spread, spread, size=(count, 3)) + np.array([0.0, 0.0, 0.3])
        log_scales = np.log(rng.uniform(*scale, size=(count, 3)))
        rotations = rng.normal(size=(count, 4))
        opacity_logits = _logit(rng.uniform(*opacity, size=count))
        latents = rng.normal(0.0, 0.5, size=(count, 8))
        return GaussianCloud(positions, log_scales, rotations, opacity_logits, latents,
                             scene_diameter=2.0)

    return build


def central_difference(func, array, index, h):
    """d func / d array[index] by central differences, restoring the array afterwards"""
    original = array[index]
    array[index] = original + h
    plus = func()
    array[index] = original - h
    minus = func()
    array[index] = original
    return (plus - minus) / (2.0 * h)


@pytest.fixture
def finite_difference():
    return central_difference


@pytest.fixture
def full_turn():
    return 2.0 * math.pi
