import numpy as np
import pytest

from spinsplat.exceptions import InvalidInputError
from spinsplat.radiance.sh_colors import (ShColors, eval_sh_colors, eval_sh_colors_backward)
from spinsplat.radiance.views import view_direction_backward, view_directions
from spinsplat.scene.models import GaussianCloud


def test_view_directions_are_unit(make_cloud, rng, small_camera):
    cloud = make_cloud(rng, 5)
    dirs, distances = view_directions(cloud.positions, small_camera)
    np.testing.assert_allclose(np.linalg.norm(dirs, axis=1), 1.0)
    np.testing.assert_allclose(small_camera.center + dirs * distances[:, None], cloud.positions)


def test_view_direction_gradient_is_tangential(rng):
    dirs = rng.normal(size=(3, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    grad = view_direction_backward(dirs, np.full(3, 2.0), rng.normal(size=(3, 3)))
    np.testing.assert_allclose(np.sum(grad * dirs, axis=1), 0.0, atol=1e-12)


def test_coincident_camera_raises(small_camera):
    with pytest.raises(InvalidInputError):
        view_directions(small_camera.center[None], small_camera)


def test_constant_colors_are_view_independent(make_cloud, rng, small_camera):
    cloud = make_cloud(rng, 4)
    sh = ShColors.constant(4)
    assert sh.degree == 3
    np.testing.assert_allclose(eval_sh_colors(cloud, sh, small_camera), 0.5)


def test_layout_validation(make_cloud, rng, small_camera):
    with pytest.raises(InvalidInputError):
        ShColors(np.zeros((2, 5, 3)))
    with pytest.raises(InvalidInputError):
        ShColors(np.zeros((2, 4)))
    with pytest.raises(InvalidInputError):
        eval_sh_colors(make_cloud(rng, 3), ShColors.constant(2), small_camera)
    assert len(ShColors.constant(6).subset(np.array([0, 2]))) == 2


def test_empty_cloud(small_camera):
    sh = ShColors.constant(0, degree=1)
    assert eval_sh_colors(GaussianCloud.empty(1.0), sh, small_camera).shape == (0, 3)


def test_clamped_channels_pass_no_gradient(make_cloud, rng, small_camera):
    cloud = make_cloud(rng, 2)
    sh = ShColors.constant(2, degree=1, color=1.5)
    np.testing.assert_allclose(eval_sh_colors(cloud, sh, small_camera), 1.0)
    grads = eval_sh_colors_backward(cloud, sh, small_camera, np.ones((2, 3)))
    assert not grads.coeffs.any() and not grads.positions.any()


def test_backward_matches_finite_differences(make_cloud, rng, small_camera, finite_difference):
    cloud = make_cloud(rng, 3)
    sh = ShColors.constant(3, degree=2)
    sh.coeffs[:, 1:, :] = rng.normal(0.0, 0.05, size=(3, 8, 3))
    arrays = cloud.to_params()
    upstream = rng.normal(size=(3, 3))

    def objective():
        current = GaussianCloud.from_params(arrays, 2.0)
        return float(np.sum(eval_sh_colors(current, sh, small_camera) * upstream))

    grads = eval_sh_colors_backward(cloud, sh, small_camera, upstream)

    numeric = np.zeros_like(sh.coeffs)
    for index in np.ndindex(sh.coeffs.shape):
        numeric[index] = finite_difference(objective, sh.coeffs, index, 1e-6)
    np.testing.assert_allclose(grads.coeffs, numeric, rtol=1e-5, atol=1e-9)

    positions = arrays['positions']
    numeric = np.zeros_like(positions)
    for index in np.ndindex(positions.shape):
        numeric[index] = finite_difference(objective, positions, index, 1e-6)
    np.testing.assert_allclose(grads.positions, numeric, rtol=1e-4, atol=1e-8)
