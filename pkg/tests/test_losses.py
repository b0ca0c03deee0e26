import numpy as np
import pytest

from spinsplat.exceptions import InvalidInputError
from spinsplat.scene.models import ImageBuffer
from spinsplat.training.losses import (PSNR_CAP, SSIM_C1, SSIM_C2, gaussian_window, loss, psnr,
                                       ssim, ssim_with_grad)


def brute_force_ssim(x, y, size, sigma=1.5):
    w = gaussian_window(size, sigma)
    w2 = np.outer(w, w)
    r = size // 2
    h, wd, ch = x.shape

    def blur(img):
        padded = np.pad(img, ((r, r), (r, r), (0, 0)))
        out = np.zeros_like(img)
        for i in range(h):
            for j in range(wd):
                patch = padded[i:i + size, j:j + size, :]
                out[i, j] = np.tensordot(w2, patch, axes=([0, 1], [0, 1]))
        return out

    mu_x, mu_y = blur(x), blur(y)
    var_x = blur(x * x) - mu_x ** 2
    var_y = blur(y * y) - mu_y ** 2
    cov = blur(x * y) - mu_x * mu_y
    ssim_map = ((2 * mu_x * mu_y + SSIM_C1) * (2 * cov + SSIM_C2)
                / ((mu_x ** 2 + mu_y ** 2 + SSIM_C1) * (var_x + var_y + SSIM_C2)))
    return ssim_map.mean()


def test_psnr_values():
    image = np.full((4, 4, 3), 0.4)
    assert psnr(image, image) == PSNR_CAP == 99.0
    assert psnr(image, image + 0.1) == pytest.approx(20.0)
    assert psnr(ImageBuffer(image), ImageBuffer(image + 0.01)) == pytest.approx(40.0)


def test_psnr_clamps_before_comparing():
    assert psnr(np.full((2, 2, 3), 1.5), np.ones((2, 2, 3))) == PSNR_CAP


def test_psnr_mask_selects_pixels():
    a = np.zeros((4, 4, 3))
    b = a.copy()
    b[0, 0] = 1.0
    mask = np.ones((4, 4))
    mask[0, 0] = 0.0
    assert psnr(a, b, mask) == PSNR_CAP
    assert psnr(a, b) < PSNR_CAP
    with pytest.raises(InvalidInputError):
        psnr(a, b, np.zeros((4, 4)))
    with pytest.raises(InvalidInputError):
        psnr(a, b, np.ones((3, 4)))


def test_gaussian_window_is_normalized():
    window = gaussian_window()
    assert window.shape == (11,)
    assert window.sum() == pytest.approx(1.0)
    np.testing.assert_allclose(window, window[::-1])


def test_ssim_of_identical_images_is_one(rng):
    image = rng.uniform(size=(12, 12, 3))
    assert ssim(image, image) == pytest.approx(1.0, abs=1e-12)
    assert ssim(image, rng.uniform(size=(12, 12, 3))) < 0.5


def test_ssim_matches_brute_force_window(rng):
    x = rng.uniform(size=(7, 9, 3))
    y = np.clip(x + rng.normal(0.0, 0.1, size=x.shape), 0.0, 1.0)
    assert ssim(x, y, window_size=5) == pytest.approx(brute_force_ssim(x, y, 5), abs=1e-12)


def test_ssim_gradient_matches_finite_differences(rng, finite_difference):
    x = rng.uniform(size=(6, 7, 3))
    y = rng.uniform(size=(6, 7, 3))
    _, grad = ssim_with_grad(x, y, window_size=5)
    numeric = np.zeros_like(x)
    for index in np.ndindex(x.shape):
        numeric[index] = finite_difference(lambda: ssim(x, y, window_size=5), x, index, 1e-6)
    np.testing.assert_allclose(grad, numeric, rtol=1e-4, atol=1e-8)


def test_loss_gradient_matches_finite_differences(rng, finite_difference):
    x = rng.uniform(size=(6, 6, 3))
    y = rng.uniform(size=(6, 6, 3))
    _, grad = loss(x, y, lambda_ssim=0.2, window_size=5)
    numeric = np.zeros_like(x)
    for index in np.ndindex(x.shape):
        numeric[index] = finite_difference(lambda: loss(x, y, 0.2, 5)[0], x, index, 1e-6)
    np.testing.assert_allclose(grad, numeric, rtol=1e-4, atol=1e-8)


def test_pure_l1_when_ssim_weight_is_zero(rng):
    x = rng.uniform(size=(5, 5, 3))
    y = rng.uniform(size=(5, 5, 3))
    value, grad = loss(x, y, lambda_ssim=0.0)
    assert value == pytest.approx(np.abs(x - y).mean())
    np.testing.assert_allclose(grad, np.sign(x - y) / x.size)
    assert loss(x, x)[0] == pytest.approx(0.0, abs=1e-12)


def test_loss_validation(rng):
    x = rng.uniform(size=(4, 4, 3))
    with pytest.raises(InvalidInputError):
        loss(x, x, lambda_ssim=1.5)
    with pytest.raises(InvalidInputError):
        loss(x, rng.uniform(size=(4, 5, 3)))
