import logging
from dataclasses import dataclass

import numpy as np

from spinsplat.exceptions import InvalidInputError
from spinsplat.radiance.views import view_direction_backward, view_directions
from spinsplat.scene.models import CameraPose, GaussianCloud
from spinsplat.scene.sh import degree_from_count, num_coeffs, sh_basis, sh_basis_grad

logger = logging.getLogger(__name__)

DEFAULT_SH_DEGREE = 3
DC_INIT_COLOR = 0.5


@dataclass(eq=False)
class ShColors:
    """Per-Gaussian view-dependent color as SH coefficients, shape (N, (deg+1)^2, 3)"""
    coeffs: np.ndarray

    def __post_init__(self):
        coeffs = np.asarray(self.coeffs, dtype=np.float64)
        if coeffs.ndim != 3 or coeffs.shape[2] != 3:
            raise InvalidInputError(f'SH colors must be (N, K, 3), got {coeffs.shape}')
        degree_from_count(coeffs.shape[1])
        if not np.all(np.isfinite(coeffs)):
            raise InvalidInputError('SH colors contain non-finite values')
        self.coeffs = coeffs

    def __len__(self) -> int:
        return self.coeffs.shape[0]

    @property
    def degree(self) -> int:
        return degree_from_count(self.coeffs.shape[1])

    @classmethod
    def constant(cls, count: int, degree: int = DEFAULT_SH_DEGREE,
                 color: float = DC_INIT_COLOR) -> 'ShColors':
        """View-independent gray, the baseline's starting point"""
        coeffs = np.zeros((count, num_coeffs(degree), 3))
        coeffs[:, 0, :] = color / sh_basis(np.array([0.0, 0.0, 1.0]), 0)[0, 0]
        return cls(coeffs)

    def subset(self, keep: np.ndarray) -> 'ShColors':
        return ShColors(self.coeffs[keep])


def _raw_colors(dirs: np.ndarray, sh: ShColors) -> np.ndarray:
    basis = sh_basis(dirs, sh.degree)
    return np.einsum('nk,nkc->nc', basis, sh.coeffs)


def eval_sh_colors(cloud: GaussianCloud, sh: ShColors, cam: CameraPose) -> np.ndarray:
    """SH color along each Gaussian's view direction, clamped to [0, 1]"""
    if len(sh) != len(cloud):
        raise InvalidInputError(f'{len(sh)} SH color rows for {len(cloud)} Gaussians')
    if len(cloud) == 0:
        return np.zeros((0, 3))
    dirs, _ = view_directions(cloud.positions, cam)
    return np.clip(_raw_colors(dirs, sh), 0.0, 1.0)


@dataclass(eq=False)
class ShColorGrads:
    coeffs: np.ndarray
    positions: np.ndarray


def eval_sh_colors_backward(cloud: GaussianCloud, sh: ShColors, cam: CameraPose,
                            d_colors: np.ndarray) -> ShColorGrads:
    """Gradients of eval_sh_colors with respect to positions and coefficients"""
    if len(cloud) == 0:
        return ShColorGrads(np.zeros_like(sh.coeffs), np.zeros((0, 3)))
    dirs, distances = view_directions(cloud.positions, cam)
    raw = _raw_colors(dirs, sh)
    # clamped channels pass no gradient
    d_raw = np.where((raw > 0.0) & (raw < 1.0), d_colors, 0.0)

    basis = sh_basis(dirs, sh.degree)
    d_coeffs = basis[:, :, None] * d_raw[:, None, :]
    basis_grad = sh_basis_grad(dirs, sh.degree)
    d_dirs = np.einsum('nkd,nkc,nc->nd', basis_grad, sh.coeffs, d_raw)
    return ShColorGrads(d_coeffs, view_direction_backward(dirs, distances, d_dirs))
