import numpy as np
import pytest

from spinsplat.exceptions import InvalidInputError
from spinsplat.rendering.rasterizer import (ALPHA_CAP, DILATION, MIN_TRANSMITTANCE,
                                            project_cloud, project_gaussian, render_backward,
                                            render_splats)
from spinsplat.scene.models import GaussianCloud, look_at_pose


def cloud_from(positions, log_scales, opacity_logits, rotations=None):
    positions = np.asarray(positions, dtype=np.float64)
    count = len(positions)
    if rotations is None:
        rotations = np.tile([1.0, 0.0, 0.0, 0.0], (count, 1))
    return GaussianCloud(positions, np.asarray(log_scales, dtype=np.float64), rotations,
                         np.asarray(opacity_logits, dtype=np.float64), np.zeros((count, 8)),
                         scene_diameter=2.0)


def test_projection_matches_monte_carlo_samples(rng):
    cam = look_at_pose((3.0, 0.0, 0.5), (0.0, 0.0, 0.3), 32, 32, focal=40.0)
    rotation = np.array([0.9, 0.2, -0.3, 0.25])
    scales = np.array([0.05, 0.02, 0.08])
    cloud = cloud_from([[0.1, -0.05, 0.35]], [np.log(scales)], [0.0], rotation[None])
    splat = project_gaussian(cloud[0], cam)
    assert splat is not None

    rot = project_cloud(cloud, cam).rot[0]
    cov = rot @ np.diag(scales ** 2) @ rot.T
    samples = rng.multivariate_normal(cloud.positions[0], cov, size=200000)
    t = samples @ cam.rotation_matrix.T + cam.translation
    uv = cam.focal * t[:, :2] / t[:, 2:3] + np.array(cam.principal_point)

    np.testing.assert_allclose(uv.mean(axis=0), splat.mean, atol=0.05)
    empirical = np.cov(uv.T)
    linearized = splat.cov2d - DILATION * np.eye(2)
    np.testing.assert_allclose(empirical, linearized, rtol=0.03, atol=0.03 * linearized.max())


def test_two_splats_composite_front_to_back():
    cam = look_at_pose((3.0, 0.0, 0.0), (0.0, 0.0, 0.0), 8, 8, focal=10.0)
    cloud = cloud_from([[0.5, 0.05, 0.0], [-0.5, -0.05, 0.02]],
                       np.log([[0.15] * 3, [0.2] * 3]), [0.3, -0.2])
    colors = np.array([[0.9, 0.1, 0.2], [0.1, 0.8, 0.3]])
    background = np.array([0.05, 0.1, 0.2])
    image, transmittance = render_splats(cloud, colors, cam, background)

    near, far = project_gaussian(cloud[0], cam), project_gaussian(cloud[1], cam)
    assert near.depth < far.depth
    opacities = cloud.opacities
    expected = np.zeros((8, 8, 3))
    expected_t = np.zeros((8, 8))
    for v in range(8):
        for u in range(8):
            p = np.array([u + 0.5, v + 0.5])
            alphas = []
            for splat, opacity in ((near, opacities[0]), (far, opacities[1])):
                d = p - splat.mean
                alphas.append(min(ALPHA_CAP, opacity * np.exp(-0.5 * d @ np.linalg.inv(splat.cov2d) @ d)))
            a0, a1 = alphas
            expected[v, u] = a0 * colors[0] + (1 - a0) * a1 * colors[1] + (1 - a0) * (1 - a1) * background
            expected_t[v, u] = (1 - a0) * (1 - a1)
    np.testing.assert_allclose(image.pixels, expected, atol=1e-12)
    np.testing.assert_allclose(transmittance, expected_t, atol=1e-12)


def test_empty_cloud_renders_background(small_camera):
    image, transmittance = render_splats(GaussianCloud.empty(1.0), np.zeros((0, 3)), small_camera,
                                         (0.2, 0.3, 0.4))
    np.testing.assert_allclose(image.pixels, np.broadcast_to([0.2, 0.3, 0.4], (8, 8, 3)))
    assert np.all(transmittance == 1.0)


def test_culling_behind_camera_and_off_screen(small_camera):
    behind = small_camera.center + (small_camera.center - np.array([0.0, 0.0, 0.3]))
    far_off = np.array([0.0, 40.0, 0.3])
    cloud = cloud_from([behind, far_off, [0.0, 0.0, 0.3]], np.log([[0.1] * 3] * 3), [0.0] * 3)
    assert project_gaussian(cloud[0], small_camera) is None
    assert project_gaussian(cloud[1], small_camera) is None
    assert project_gaussian(cloud[2], small_camera) is not None

    grads = render_backward(cloud, np.full((3, 3), 0.5), small_camera, (0, 0, 0),
                            np.ones((8, 8, 3)))
    assert np.all(grads.positions[:2] == 0.0)
    assert np.any(grads.positions[2] != 0.0)


def test_opaque_stack_respects_alpha_cap_and_transmittance_floor(small_camera):
    target = np.array([0.0, 0.0, 0.3])
    direction = (small_camera.center - target) / np.linalg.norm(small_camera.center - target)
    positions = [target + k * 0.05 * direction for k in range(6)]
    cloud = cloud_from(positions, np.log([[0.3] * 3] * 6), [12.0] * 6)
    image, transmittance = render_splats(cloud, np.full((6, 3), 0.7), small_camera)
    assert transmittance.min() >= MIN_TRANSMITTANCE * (1 - 1e-9)
    assert transmittance.min() > 0.0
    assert image.pixels.max() <= 0.7 + 1e-12


@pytest.mark.parametrize('opacity', [(0.2, 0.5), (0.9, 0.99)])
def test_compositing_weights_and_final_transmittance_sum_to_one(make_cloud, rng, small_camera,
                                                                 opacity):
    cloud = make_cloud(rng, 15, opacity=opacity)
    image, transmittance = render_splats(cloud, np.ones((15, 3)), small_camera)
    np.testing.assert_allclose(image.pixels + transmittance[..., None], 1.0, atol=1e-12)
    assert transmittance.min() < 1.0


def test_render_is_linear_in_colors_on_black(make_cloud, rng, small_camera):
    cloud = make_cloud(rng, 10)
    first, second = rng.uniform(0.0, 1.0, size=(2, 10, 3))
    a, b = 0.3, 1.7
    mixed, _ = render_splats(cloud, a * first + b * second, small_camera)
    expected = (a * render_splats(cloud, first, small_camera)[0].pixels
                + b * render_splats(cloud, second, small_camera)[0].pixels)
    np.testing.assert_allclose(mixed.pixels, expected, atol=1e-12)


def test_render_is_deterministic_and_order_independent(make_cloud, rng, small_camera):
    cloud = make_cloud(rng, 12)
    colors = rng.uniform(0.1, 0.9, size=(12, 3))
    first, _ = render_splats(cloud, colors, small_camera)
    again, _ = render_splats(cloud, colors, small_camera)
    np.testing.assert_array_equal(first.pixels, again.pixels)

    perm = rng.permutation(12)
    shuffled = cloud.subset(perm)
    permuted, _ = render_splats(shuffled, colors[perm], small_camera)
    np.testing.assert_allclose(permuted.pixels, first.pixels, atol=1e-12)


def test_input_validation(make_cloud, rng, small_camera):
    cloud = make_cloud(rng, 3)
    with pytest.raises(InvalidInputError):
        render_splats(cloud, np.zeros((2, 3)), small_camera)
    with pytest.raises(InvalidInputError):
        render_splats(cloud, np.zeros((3, 3)), small_camera, (0.0, 0.0))
    with pytest.raises(InvalidInputError):
        render_backward(cloud, np.zeros((3, 3)), small_camera, (0, 0, 0), np.zeros((4, 4, 3)))


def test_backward_matches_finite_differences(make_cloud, rng, small_camera, finite_difference):
    cloud = make_cloud(rng, 5)
    params = cloud.to_params()
    colors = rng.uniform(0.1, 0.9, size=(5, 3))
    background = np.array([0.1, 0.2, 0.3])
    upstream = rng.normal(size=(8, 8, 3))

    def objective():
        current = GaussianCloud.from_params(params, 2.0)
        image, _ = render_splats(current, colors, small_camera, background)
        return float(np.sum(image.pixels * upstream))

    grads = render_backward(cloud, colors, small_camera, background, upstream)
    analytic = {'positions': grads.positions, 'log_scales': grads.log_scales,
                'rotations': grads.rotations, 'opacity_logits': grads.opacity_logits}
    for name, expected in analytic.items():
        array = params[name]
        numeric = np.zeros_like(array)
        for index in np.ndindex(array.shape):
            numeric[index] = finite_difference(objective, array, index, 1e-4)
        np.testing.assert_allclose(expected, numeric, rtol=1e-3, atol=1e-6, err_msg=name)

    numeric_colors = np.zeros_like(colors)
    for index in np.ndindex(colors.shape):
        numeric_colors[index] = finite_difference(objective, colors, index, 1e-4)
    np.testing.assert_allclose(grads.colors, numeric_colors, rtol=1e-3, atol=1e-6)
