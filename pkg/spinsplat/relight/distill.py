"""
Freeze the light rotation and export the conditional model as plain per-Gaussian SH colors.

Every Gaussian's decoded color is sampled over a Fibonacci sphere of view directions at
the fixed rotation and fitted by least squares. The basis matrix is shared by all
Gaussians, so the normal matrix is factored once.
"""
import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from spinsplat.exceptions import InvalidInputError, SingularBasisError
from spinsplat.radiance.mlp import encode_batch, mlp_forward
from spinsplat.radiance.sh_colors import DEFAULT_SH_DEGREE, ShColors, eval_sh_colors
from spinsplat.rendering.rasterizer import render_splats
from spinsplat.scene.models import CameraPose, GaussianCloud, ImageBuffer
from spinsplat.scene.sh import fibonacci_sphere, num_coeffs, sh_basis
from spinsplat.training.trainer import TrainedModel, TrainMode

logger = logging.getLogger(__name__)

DISTILL_SAMPLES = 128
MAX_DISTILL_DEGREE = 4
GAUSSIANS_PER_BATCH = 256


@dataclass(eq=False)
class DistilledSh:
    """Static-light export of a conditional model at theta_star"""
    theta_star: float
    colors: ShColors
    residual: np.ndarray

    @property
    def degree(self) -> int:
        return self.colors.degree


def fit_sh(samples: np.ndarray, dirs: np.ndarray, degree: int):
    """Least-squares SH coefficients (N, K, 3) and RMS residual (N,) for samples (N, S, 3)"""
    basis = sh_basis(dirs, degree)
    if dirs.shape[0] < basis.shape[1]:
        raise SingularBasisError(f'{dirs.shape[0]} directions cannot determine '
                                 f'{basis.shape[1]} SH coefficients')
    normal = basis.T @ basis
    if np.linalg.matrix_rank(normal) < basis.shape[1]:
        raise SingularBasisError('SH normal matrix is rank deficient for these directions')

    rhs = np.einsum('sk,nsc->nkc', basis, samples)
    coeffs = np.linalg.solve(normal, rhs)
    fitted = np.einsum('sk,nkc->nsc', basis, coeffs)
    residual = np.sqrt(np.mean((fitted - samples) ** 2, axis=(1, 2)))
    return coeffs, residual


def distill_sh(model: TrainedModel, theta_star: float, degree: int = DEFAULT_SH_DEGREE,
               samples: int = DISTILL_SAMPLES) -> DistilledSh:
    """Fit per-Gaussian SH colors to the decoder at a fixed light rotation"""
    if model.mode is not TrainMode.CONDITIONAL:
        raise InvalidInputError('Only conditional models can be distilled')
    if not 0 <= degree <= MAX_DISTILL_DEGREE:
        raise InvalidInputError(f'Distillation degree must lie in [0, {MAX_DISTILL_DEGREE}]')
    if not math.isfinite(theta_star):
        raise InvalidInputError('Distillation angle must be finite')
    if samples < num_coeffs(degree):
        raise SingularBasisError(f'{samples} directions cannot determine '
                                 f'{num_coeffs(degree)} SH coefficients')

    dirs = fibonacci_sphere(samples)
    cloud = model.cloud
    decoded = np.empty((len(cloud), samples, 3))
    for start in range(0, len(cloud), GAUSSIANS_PER_BATCH):
        latents = cloud.latents[start:start + GAUSSIANS_PER_BATCH]
        count = latents.shape[0]
        encoded = encode_batch(np.repeat(latents, samples, axis=0), np.tile(dirs, (count, 1)),
                               theta_star)
        decoded[start:start + count] = mlp_forward(model.mlp, encoded).reshape(count, samples, 3)

    coeffs, residual = fit_sh(decoded, dirs, degree)
    if len(cloud):
        logger.info(f'Distilled {len(cloud)} Gaussians to degree {degree} at theta '
                    f'{theta_star:.4f}: mean RMS residual {residual.mean():.2e}')
    return DistilledSh(float(theta_star), ShColors(coeffs), residual)


def render_distilled(cloud: GaussianCloud, sh: ShColors, cam: CameraPose,
                     background: Sequence[float] = (0.0, 0.0, 0.0)) -> ImageBuffer:
    """Render with SH colors only, no decoder evaluation"""
    return render_splats(cloud, eval_sh_colors(cloud, sh, cam), cam, background)[0]
