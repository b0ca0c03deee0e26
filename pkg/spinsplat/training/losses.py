"""
Photometric losses: (1 - lambda) * L1 + lambda * (1 - SSIM), with analytic image gradients.

SSIM uses a normalized Gaussian window (size 11, sigma 1.5) applied separably per channel
with zero padding, and constants C1 = 0.01^2, C2 = 0.03^2 for a unit data range.
"""
import logging
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.ndimage import correlate1d

from spinsplat.exceptions import InvalidInputError
from spinsplat.scene.models import ImageBuffer

logger = logging.getLogger(__name__)

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
DEFAULT_LAMBDA = 0.2
PSNR_CAP = 99.0
MASK_THRESHOLD = 0.5


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    """Normalized 2D Gaussian window"""
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    w = np.exp(-x * x / (2.0 * sigma * sigma))
    return w / w.sum()


def _blur(image: np.ndarray, window: np.ndarray) -> np.ndarray:
    out = correlate1d(image, window, axis=0, mode='constant', cval=0.0)
    return correlate1d(out, window, axis=1, mode='constant', cval=0.0)


def _pixels(image) -> np.ndarray:
    return image.pixels if isinstance(image, ImageBuffer) else np.asarray(image, dtype=np.float64)


def _check_pair(pred, gt) -> Tuple[np.ndarray, np.ndarray]:
    x, y = _pixels(pred), _pixels(gt)
    if x.shape != y.shape:
        raise InvalidInputError(f'Image sizes differ: {x.shape} vs {y.shape}')
    return x, y


@dataclass(eq=False)
class _SsimTerms:
    mu_x: np.ndarray
    mu_y: np.ndarray
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray
    ssim_map: np.ndarray


def _ssim_terms(x: np.ndarray, y: np.ndarray, window: np.ndarray) -> _SsimTerms:
    """Local means, variances and covariance of two images"""
    mu_x, mu_y = _blur(x, window), _blur(y, window)
    var_x = _blur(x * x, window) - mu_x * mu_x
    var_y = _blur(y * y, window) - mu_y * mu_y
    cov_xy = _blur(x * y, window) - mu_x * mu_y

    a = 2.0 * mu_x * mu_y + SSIM_C1
    b = 2.0 * cov_xy + SSIM_C2
    c = mu_x * mu_x + mu_y * mu_y + SSIM_C1
    d = var_x + var_y + SSIM_C2
    return _SsimTerms(mu_x, mu_y, a, b, c, d, (a * b) / (c * d))


def ssim(pred, gt, window_size: int = SSIM_WINDOW) -> float:
    """Mean SSIM over every pixel and channel"""
    x, y = _check_pair(pred, gt)
    return float(_ssim_terms(x, y, gaussian_window(window_size)).ssim_map.mean())


def ssim_with_grad(pred, gt, window_size: int = SSIM_WINDOW) -> Tuple[float, np.ndarray]:
    """Mean SSIM and its gradient w.r.t. pred"""
    x, y = _check_pair(pred, gt)
    window = gaussian_window(window_size)
    t = _ssim_terms(x, y, window)
    s = t.ssim_map
    cd = t.c * t.d

    d_mu = 2.0 * t.mu_y * t.b / cd - 2.0 * t.mu_x * s / t.c
    d_cov = 2.0 * t.a / cd
    d_var = -s / t.d

    # mu_x, E[x^2] and E[xy] are the independent blurred moments
    d_first = d_mu - 2.0 * t.mu_x * d_var - t.mu_y * d_cov
    grad = _blur(d_first, window) + 2.0 * x * _blur(d_var, window) + y * _blur(d_cov, window)
    return float(s.mean()), grad / s.size


def loss(pred, gt, lambda_ssim: float = DEFAULT_LAMBDA,
         window_size: int = SSIM_WINDOW) -> Tuple[float, np.ndarray]:
    """(1 - lambda) * L1 + lambda * (1 - SSIM) and its gradient image"""
    if not 0.0 <= lambda_ssim <= 1.0:
        raise InvalidInputError('SSIM weight must lie in [0, 1]')
    x, y = _check_pair(pred, gt)
    diff = x - y
    value = (1.0 - lambda_ssim) * float(np.abs(diff).mean())
    grad = (1.0 - lambda_ssim) * np.sign(diff) / diff.size

    if lambda_ssim > 0.0:
        s, d_s = ssim_with_grad(x, y, window_size)
        value += lambda_ssim * (1.0 - s)
        grad -= lambda_ssim * d_s
    return max(value, 0.0), grad


def psnr(a, b, mask: Optional[np.ndarray] = None) -> float:
    """PSNR of [0, 1]-clamped images over masked pixels, capped at 99 dB"""
    x, y = _check_pair(a, b)
    sq = (np.clip(x, 0.0, 1.0) - np.clip(y, 0.0, 1.0)) ** 2
    if mask is not None:
        mask = np.asarray(mask)
        if mask.shape != x.shape[:2]:
            raise InvalidInputError(f'Mask shape {mask.shape} does not match image {x.shape[:2]}')
        selected = mask > MASK_THRESHOLD
        if not np.any(selected):
            raise InvalidInputError('Mask selects no pixels')
        sq = sq[selected]
    mse = float(sq.mean())
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / mse))
