"""
Differentiable Gaussian splat rasterizer.

Forward: project every Gaussian to an image-space ellipse (EWA linearization), sort by
camera depth, composite front to back. Backward: exact reverse mode of the same
computation, sort order held fixed. Work is vectorized over (pixels x splats) and done in
pixel chunks; per-chunk partial gradients are summed in chunk order.
"""
import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from spinsplat.exceptions import InvalidInputError
from spinsplat.scene.models import CameraPose, Gaussian, GaussianCloud, ImageBuffer

logger = logging.getLogger(__name__)

NEAR_PLANE = 0.01
DILATION = 0.3
ALPHA_CAP = 0.99
MIN_TRANSMITTANCE = 1e-4
CULL_SIGMAS = 3.0
CHUNK_BUDGET = 1 << 21


@dataclass(frozen=True, eq=False)
class Splat2D:
    mean: np.ndarray
    cov2d: np.ndarray
    depth: float
    gaussian_index: int


@dataclass(eq=False)
class RenderGrads:
    """Per-Gaussian gradients; rows of culled Gaussians stay zero"""
    positions: np.ndarray
    log_scales: np.ndarray
    rotations: np.ndarray
    opacity_logits: np.ndarray
    colors: np.ndarray

    @classmethod
    def zeros(cls, count: int) -> 'RenderGrads':
        return cls(np.zeros((count, 3)), np.zeros((count, 3)), np.zeros((count, 4)),
                   np.zeros(count), np.zeros((count, 3)))


def quat_matrices(q_hat: np.ndarray) -> np.ndarray:
    """Rotation matrices (N, 3, 3) from unit quaternions (N, 4) in (w, x, y, z) order"""
    w, x, y, z = q_hat.T
    return np.stack([
        np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], -1),
        np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], -1),
        np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], -1),
    ], axis=1)


def quat_matrix_partials(q_hat: np.ndarray) -> np.ndarray:
    """dR/d(w, x, y, z) for each quaternion, shape (N, 4, 3, 3)"""
    w, x, y, z = q_hat.T
    zero = np.zeros_like(w)

    def mat(rows):
        return np.stack([np.stack(r, -1) for r in rows], axis=1)

    return 2.0 * np.stack([
        mat([[zero, -z, y], [z, zero, -x], [-y, x, zero]]),
        mat([[zero, y, z], [y, -2 * x, -w], [z, w, -2 * x]]),
        mat([[-2 * y, x, w], [x, zero, z], [-w, z, -2 * y]]),
        mat([[-2 * z, -w, x], [w, -2 * z, y], [x, y, zero]]),
    ], axis=1)


@dataclass(eq=False)
class Projection:
    """Projected splats for every Gaussian plus the intermediates the backward pass reuses"""
    visible: np.ndarray
    means: np.ndarray
    cov2d: np.ndarray
    conics: np.ndarray
    depths: np.ndarray
    opacities: np.ndarray
    t_cam: np.ndarray
    jacobians: np.ndarray
    cov_cam: np.ndarray
    rot: np.ndarray
    scales: np.ndarray
    q_hat: np.ndarray
    q_norm: np.ndarray

    def order(self) -> np.ndarray:
        """Visible Gaussian indices, ascending depth, ties by index"""
        indices = np.flatnonzero(self.visible)
        return indices[np.lexsort((indices, self.depths[indices]))]


def project_cloud(cloud: GaussianCloud, cam: CameraPose) -> Projection:
    """Project every Gaussian, marking the ones culled for this camera"""
    count = len(cloud)
    f = cam.focal
    cx, cy = cam.principal_point
    world_rot = cam.rotation_matrix

    q_norm = np.linalg.norm(cloud.rotations, axis=1)
    q_hat = cloud.rotations / np.where(q_norm > 0, q_norm, 1.0)[:, None]
    rot = quat_matrices(q_hat)
    scales = np.exp(cloud.log_scales)
    m = rot * scales[:, None, :]
    cov_world = m @ np.transpose(m, (0, 2, 1))
    cov_cam = world_rot @ cov_world @ world_rot.T

    t_cam = cloud.positions @ world_rot.T + cam.translation
    tz = t_cam[:, 2]
    in_front = tz > NEAR_PLANE
    safe_z = np.where(in_front, tz, 1.0)

    jac = np.zeros((count, 2, 3))
    jac[:, 0, 0] = f / safe_z
    jac[:, 0, 2] = -f * t_cam[:, 0] / safe_z ** 2
    jac[:, 1, 1] = f / safe_z
    jac[:, 1, 2] = -f * t_cam[:, 1] / safe_z ** 2

    cov2d = jac @ cov_cam @ np.transpose(jac, (0, 2, 1)) + DILATION * np.eye(2)
    a, b, c = cov2d[:, 0, 0], cov2d[:, 0, 1], cov2d[:, 1, 1]
    det = a * c - b * b
    positive = (a > 0) & (det > 0) & np.isfinite(det)
    safe_det = np.where(positive, det, 1.0)
    conics = np.stack([np.stack([c, -b], -1), np.stack([-b, a], -1)], axis=1) / safe_det[:, None, None]

    means = np.stack([f * t_cam[:, 0] / safe_z + cx, f * t_cam[:, 1] / safe_z + cy], axis=-1)
    sigma = np.sqrt(np.maximum(0.5 * (a + c) + np.sqrt(0.25 * (a - c) ** 2 + b * b), 0.0))
    margin = CULL_SIGMAS * sigma
    on_image = ((means[:, 0] >= -margin) & (means[:, 0] <= cam.width + margin)
                & (means[:, 1] >= -margin) & (means[:, 1] <= cam.height + margin))

    visible = in_front & positive & on_image
    return Projection(visible, means, cov2d, conics, tz, cloud.opacities, t_cam, jac, cov_cam,
                      rot, scales, q_hat, q_norm)


def project_gaussian(gaussian: Gaussian, cam: CameraPose) -> Optional[Splat2D]:
    """Image-space splat, or None when the Gaussian is culled"""
    cloud = GaussianCloud(gaussian.position[None], gaussian.log_scale[None],
                          gaussian.rotation[None], np.array([gaussian.opacity_logit]),
                          gaussian.latent[None], scene_diameter=1.0)
    proj = project_cloud(cloud, cam)
    if not proj.visible[0]:
        return None
    return Splat2D(proj.means[0].copy(), proj.cov2d[0].copy(), float(proj.depths[0]), 0)


def _pixel_centers(cam: CameraPose) -> np.ndarray:
    v, u = np.meshgrid(np.arange(cam.height) + 0.5, np.arange(cam.width) + 0.5, indexing='ij')
    return np.stack([u.ravel(), v.ravel()], axis=-1)


def _chunks(pixel_count: int, splat_count: int):
    """Pixel slices that bound the pixel-by-splat working set"""
    size = max(1, CHUNK_BUDGET // max(splat_count, 1))
    for start in range(0, pixel_count, size):
        yield slice(start, min(start + size, pixel_count))


@dataclass(eq=False)
class _ChunkState:
    offsets: np.ndarray
    gauss: np.ndarray
    raw: np.ndarray
    alpha: np.ndarray
    included: np.ndarray
    trans: np.ndarray
    weights: np.ndarray
    final_trans: np.ndarray


def _composite(pixels: np.ndarray, means: np.ndarray, conics: np.ndarray,
               opacities: np.ndarray) -> _ChunkState:
    """Alpha, transmittance and blend weights of sorted splats over a pixel chunk"""
    offsets = pixels[:, None, :] - means[None, :, :]
    dx, dy = offsets[..., 0], offsets[..., 1]
    power = (conics[None, :, 0, 0] * dx * dx + 2.0 * conics[None, :, 0, 1] * dx * dy
             + conics[None, :, 1, 1] * dy * dy)
    gauss = np.exp(-0.5 * power)
    raw = opacities[None, :] * gauss
    alpha = np.minimum(ALPHA_CAP, raw)

    # a splat that would drop transmittance under the floor ends the pixel
    included = np.cumprod(1.0 - alpha, axis=1) >= MIN_TRANSMITTANCE
    alpha = np.where(included, alpha, 0.0)
    after = np.cumprod(1.0 - alpha, axis=1)
    trans = np.concatenate([np.ones((pixels.shape[0], 1)), after[:, :-1]], axis=1)
    final = after[:, -1] if after.shape[1] else np.ones(pixels.shape[0])
    return _ChunkState(offsets, gauss, raw, alpha, included, trans, alpha * trans, final)


def _check_inputs(cloud: GaussianCloud, colors: np.ndarray,
                  background: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
    """Validated colors and background as float arrays"""
    colors = np.asarray(colors, dtype=np.float64)
    if colors.shape != (len(cloud), 3):
        raise InvalidInputError(f'Expected {len(cloud)} colors, got shape {colors.shape}')
    background = np.asarray(background, dtype=np.float64)
    if background.shape != (3,):
        raise InvalidInputError('Background must be one RGB triple')
    return colors, background


def render_splats(cloud: GaussianCloud, colors: np.ndarray, cam: CameraPose,
                  background: Sequence[float] = (0.0, 0.0, 0.0)) -> Tuple[ImageBuffer, np.ndarray]:
    """Composite the cloud; returns the image and the final per-pixel transmittance"""
    colors, background = _check_inputs(cloud, colors, background)
    pixels = _pixel_centers(cam)
    image = np.empty((pixels.shape[0], 3))
    transmittance = np.empty(pixels.shape[0])

    proj = project_cloud(cloud, cam)
    order = proj.order()
    means, conics, opac = proj.means[order], proj.conics[order], proj.opacities[order]
    sorted_colors = colors[order]

    for rows in _chunks(pixels.shape[0], order.size):
        state = _composite(pixels[rows], means, conics, opac)
        image[rows] = state.weights @ sorted_colors + state.final_trans[:, None] * background
        transmittance[rows] = state.final_trans

    shape = (cam.height, cam.width)
    return ImageBuffer(image.reshape(*shape, 3)), transmittance.reshape(shape)


def render_backward(cloud: GaussianCloud, colors: np.ndarray, cam: CameraPose,
                    background: Sequence[float], grad_output: np.ndarray) -> RenderGrads:
    """Reverse-mode gradients of render_splats for a per-pixel RGB upstream gradient"""
    colors, background = _check_inputs(cloud, colors, background)
    grad_output = np.asarray(grad_output, dtype=np.float64).reshape(-1, 3)
    pixels = _pixel_centers(cam)
    if grad_output.shape[0] != pixels.shape[0]:
        raise InvalidInputError('Upstream gradient does not match the image size')
    if not np.all(np.isfinite(grad_output)):
        raise InvalidInputError('Upstream gradient contains non-finite values')

    grads = RenderGrads.zeros(len(cloud))
    proj = project_cloud(cloud, cam)
    order = proj.order()
    if order.size == 0:
        return grads

    means, conics, opac = proj.means[order], proj.conics[order], proj.opacities[order]
    sorted_colors = colors[order]
    d_colors = np.zeros((order.size, 3))
    d_opac = np.zeros(order.size)
    d_means = np.zeros((order.size, 2))
    d_conic = np.zeros((order.size, 2, 2))

    for rows in _chunks(pixels.shape[0], order.size):
        g_out = grad_output[rows]
        state = _composite(pixels[rows], means, conics, opac)

        d_weights = g_out @ sorted_colors.T
        d_colors += state.weights.T @ g_out

        contrib = d_weights * state.weights
        behind = np.cumsum(contrib[:, ::-1], axis=1)[:, ::-1] - contrib
        d_final = g_out @ background
        d_alpha = d_weights * state.trans - (behind + (d_final * state.final_trans)[:, None]) \
            / (1.0 - state.alpha)
        d_alpha = np.where(state.included & (state.raw < ALPHA_CAP), d_alpha, 0.0)

        d_opac += np.sum(d_alpha * state.gauss, axis=0)
        d_power = -0.5 * d_alpha * opac[None, :] * state.gauss
        dx, dy = state.offsets[..., 0], state.offsets[..., 1]
        d_conic[:, 0, 0] += np.sum(d_power * dx * dx, axis=0)
        d_conic[:, 0, 1] += np.sum(d_power * dx * dy, axis=0)
        d_conic[:, 1, 1] += np.sum(d_power * dy * dy, axis=0)
        a_d = np.einsum('vij,pvj->pvi', conics, state.offsets)
        d_means -= 2.0 * np.einsum('pv,pvi->vi', d_power, a_d)
    d_conic[:, 1, 0] = d_conic[:, 0, 1]

    grads.colors[order] = d_colors
    _backprop_projection(proj, order, cam, d_means, d_conic, d_opac, grads)
    return grads


def _backprop_projection(proj: Projection, order: np.ndarray, cam: CameraPose,
                         d_means: np.ndarray, d_conic: np.ndarray, d_opac: np.ndarray,
                         grads: RenderGrads):
    """Chain 2D mean and covariance gradients back to the 3D parameters"""
    f = cam.focal
    world_rot = cam.rotation_matrix
    conic = proj.conics[order]
    jac = proj.jacobians[order]
    cov_cam = proj.cov_cam[order]
    t = proj.t_cam[order]
    tx, ty, tz = t[:, 0], t[:, 1], t[:, 2]

    d_cov2d = -conic @ d_conic @ conic
    d_cov_cam = np.transpose(jac, (0, 2, 1)) @ d_cov2d @ jac
    d_jac = 2.0 * d_cov2d @ jac @ cov_cam

    d_t = np.zeros_like(t)
    d_t += np.einsum('vij,vi->vj', jac, d_means)
    inv_z2 = f / tz ** 2
    d_t[:, 0] -= d_jac[:, 0, 2] * inv_z2
    d_t[:, 1] -= d_jac[:, 1, 2] * inv_z2
    d_t[:, 2] += (-(d_jac[:, 0, 0] + d_jac[:, 1, 1]) * inv_z2
                  + 2.0 * f * (d_jac[:, 0, 2] * tx + d_jac[:, 1, 2] * ty) / tz ** 3)
    grads.positions[order] = d_t @ world_rot

    d_cov_world = world_rot.T @ d_cov_cam @ world_rot
    rot, scales = proj.rot[order], proj.scales[order]
    m = rot * scales[:, None, :]
    d_m = 2.0 * d_cov_world @ m
    d_scales = np.sum(rot * d_m, axis=1)
    d_rot = d_m * scales[:, None, :]
    grads.log_scales[order] = d_scales * scales

    partials = quat_matrix_partials(proj.q_hat[order])
    d_q_hat = np.einsum('vcij,vij->vc', partials, d_rot)
    q_hat = proj.q_hat[order]
    radial = np.sum(q_hat * d_q_hat, axis=1, keepdims=True)
    grads.rotations[order] = (d_q_hat - q_hat * radial) / proj.q_norm[order][:, None]

    o = proj.opacities[order]
    grads.opacity_logits[order] = d_opac * o * (1.0 - o)
