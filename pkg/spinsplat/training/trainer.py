import enum
import logging
import math
from dataclasses import dataclass, field, fields
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from sklearn.neighbors import NearestNeighbors
from tqdm import tqdm

from spinsplat.exceptions import InvalidInputError, NumericDivergenceError
from spinsplat.radiance.mlp import (
    MlpParams, eval_cloud_colors, eval_cloud_colors_backward, init_latents,
)
from spinsplat.radiance.sh_colors import (
    DEFAULT_SH_DEGREE, ShColors, eval_sh_colors, eval_sh_colors_backward,
)
from spinsplat.rendering.rasterizer import render_backward, render_splats
from spinsplat.rendering.reference import Dataset, SyntheticScene
from spinsplat.scene.models import (
    LATENT_DIM, PARAM_NAMES, CameraPose, GaussianCloud, ImageBuffer, ThetaRange,
)
from spinsplat.training.losses import DEFAULT_LAMBDA, MASK_THRESHOLD, SSIM_WINDOW, loss, psnr
from spinsplat.training.optimizer import Adam

logger = logging.getLogger(__name__)

INIT_OPACITY = 0.1
JITTER_FRACTION = 0.01
BOUND_FACTOR = 1.02
NEIGHBOR_COUNT = 3
MIN_SCALE_FRACTION = 1e-6
MLP_PREFIX = 'mlp.'
SH_KEY = 'sh'


class TrainMode(enum.Enum):
    CONDITIONAL = 'conditional'
    SH_BASELINE = 'sh_baseline'


@dataclass
class TrainConfig:
    """Optimization settings; lr_position is a fraction of the scene diameter"""
    iterations: int = 5000
    num_gaussians: int = 1000
    lr_position: float = 1.6e-4
    lr_position_final_factor: float = 0.01
    lr_log_scale: float = 5e-3
    lr_rotation: float = 1e-3
    lr_opacity: float = 5e-2
    lr_latent: float = 2.5e-3
    lr_mlp: float = 1e-3
    lr_sh: float = 2.5e-3
    lambda_ssim: float = DEFAULT_LAMBDA
    ssim_window: int = SSIM_WINDOW
    prune_interval: int = 500
    prune_opacity: float = 0.005
    sh_degree: int = DEFAULT_SH_DEGREE
    random_init: bool = False
    seed: int = 0
    log_interval: int = 250
    progress: bool = False

    def validate(self):
        """Raise InvalidInputError on out-of-range settings"""
        if self.iterations < 1:
            raise InvalidInputError('iterations must be at least 1')
        if self.num_gaussians < 1:
            raise InvalidInputError('num_gaussians must be at least 1')
        if not 0.0 <= self.lambda_ssim <= 1.0:
            raise InvalidInputError('lambda_ssim must lie in [0, 1]')
        if self.prune_interval < 1:
            raise InvalidInputError('prune_interval must be at least 1')

    @classmethod
    def from_dict(cls, values: Dict) -> 'TrainConfig':
        """TrainConfig from a mapping, rejecting unknown keys"""
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise InvalidInputError(f'Unknown train settings: {sorted(unknown)}')
        return cls(**values)


@dataclass(eq=False)
class TrainedModel:
    mode: TrainMode
    cloud: GaussianCloud
    mlp: Optional[MlpParams] = None
    sh: Optional[ShColors] = None
    log: List[float] = field(default_factory=list)
    theta_range: ThetaRange = field(default_factory=lambda: ThetaRange(0.0, 0.0))
    background: Tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.mode is TrainMode.CONDITIONAL and self.mlp is None:
            raise InvalidInputError('Conditional model needs MLP weights')
        if self.mode is TrainMode.SH_BASELINE and self.sh is None:
            raise InvalidInputError('Baseline model needs SH colors')

    def colors(self, cam: CameraPose, theta: float) -> np.ndarray:
        """Per-Gaussian RGB seen from cam under light rotation theta"""
        if self.mode is TrainMode.CONDITIONAL:
            return eval_cloud_colors(self.cloud, self.mlp, cam, theta)
        return eval_sh_colors(self.cloud, self.sh, cam)

    def render(self, cam: CameraPose, theta: float = 0.0) -> ImageBuffer:
        """Conditional models use theta; the baseline ignores it"""
        return render_splats(self.cloud, self.colors(cam, theta), cam, self.background)[0]


def _logit(p: float) -> float:
    return math.log(p / (1.0 - p))


def _sample_surfaces(scene: SyntheticScene, count: int, rng: np.random.Generator) -> np.ndarray:
    """Area-weighted uniform samples over every sphere and the ground disk"""
    areas = [4.0 * math.pi * s.radius ** 2 for s in scene.spheres]
    if scene.ground is not None:
        areas.append(math.pi * scene.ground.radius ** 2)
    areas = np.asarray(areas)
    choice = rng.choice(areas.size, size=count, p=areas / areas.sum())

    points = np.empty((count, 3))
    for index, sphere in enumerate(scene.spheres):
        mask = choice == index
        n = rng.normal(size=(int(mask.sum()), 3))
        n /= np.linalg.norm(n, axis=1, keepdims=True)
        points[mask] = np.asarray(sphere.center) + sphere.radius * n
    if scene.ground is not None:
        mask = choice == len(scene.spheres)
        g = scene.ground
        r = g.radius * np.sqrt(rng.uniform(size=int(mask.sum())))
        phi = rng.uniform(0.0, 2.0 * math.pi, size=int(mask.sum()))
        points[mask] = np.stack([g.center_xy[0] + r * np.cos(phi),
                                 g.center_xy[1] + r * np.sin(phi),
                                 np.full(r.shape, g.height)], axis=1)
    return points


def _sample_ball(center: np.ndarray, radius: float, count: int,
                 rng: np.random.Generator) -> np.ndarray:
    """Uniform samples inside a ball"""
    n = rng.normal(size=(count, 3))
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    return center + radius * np.cbrt(rng.uniform(size=(count, 1))) * n


def neighbor_scales(positions: np.ndarray, diameter: float) -> np.ndarray:
    """Mean distance to the nearest few other positions, clamped to (0, diameter]"""
    count = positions.shape[0]
    if count == 1:
        return np.array([JITTER_FRACTION * diameter])
    k = min(NEIGHBOR_COUNT, count - 1)
    distances, _ = NearestNeighbors(n_neighbors=k + 1).fit(positions).kneighbors(positions)
    return np.clip(distances[:, 1:].mean(axis=1), MIN_SCALE_FRACTION * diameter, diameter)


def init_cloud(scene: Optional[SyntheticScene], count: int, rng: np.random.Generator,
               random_init: bool = False, diameter: Optional[float] = None) -> GaussianCloud:
    """Gaussians on the scene surfaces (or inside its bounding sphere) with isotropic scales"""
    if count < 1:
        raise InvalidInputError('Need at least one Gaussian')
    if scene is not None:
        center, radius = scene.bounding_sphere()
    elif diameter is not None:
        center, radius = np.zeros(3), diameter / 2.0
    else:
        raise InvalidInputError('Initialization needs a scene or a scene diameter')
    diameter = 2.0 * radius

    if random_init or scene is None:
        positions = _sample_ball(center, radius, count, rng)
    else:
        positions = _sample_surfaces(scene, count, rng)
        positions += rng.normal(0.0, JITTER_FRACTION * diameter, size=positions.shape)
        # pull stray jitter back inside the enlarged bounding sphere
        offsets = positions - center
        dist = np.linalg.norm(offsets, axis=1, keepdims=True)
        limit = BOUND_FACTOR * radius
        positions = np.where(dist > limit, center + offsets * (limit / dist), positions)

    scales = neighbor_scales(positions, diameter)
    rotations = np.tile([1.0, 0.0, 0.0, 0.0], (count, 1))
    return GaussianCloud(
        positions=positions,
        log_scales=np.repeat(np.log(scales)[:, None], 3, axis=1),
        rotations=rotations,
        opacity_logits=np.full(count, _logit(INIT_OPACITY)),
        latents=init_latents(rng, count),
        scene_diameter=diameter,
    )


class Trainer:
    """Fit a cloud plus its color model to a dataset"""

    def __init__(self, config: TrainConfig = None):
        self.config = config or TrainConfig()
        self.config.validate()

    def train(self, dataset: Dataset, mode: TrainMode = TrainMode.CONDITIONAL,
              initial_cloud: Optional[GaussianCloud] = None) -> TrainedModel:
        """Optimize a cloud and its color model on the dataset"""
        cfg = self.config
        if len(dataset) == 0:
            raise InvalidInputError('Cannot train on an empty dataset')
        rng = np.random.default_rng(cfg.seed)

        cloud = initial_cloud
        if cloud is None:
            cloud = init_cloud(dataset.scene, cfg.num_gaussians, rng, random_init=cfg.random_init,
                               diameter=dataset.scene_diameter)
        diameter = cloud.scene_diameter
        params = cloud.to_params()
        if mode is TrainMode.CONDITIONAL:
            for name, value in MlpParams.init(rng).to_dict().items():
                params[MLP_PREFIX + name] = value
        else:
            params.pop('latents')
            params[SH_KEY] = ShColors.constant(len(cloud), cfg.sh_degree).coeffs

        optimizer = Adam(self._learning_rates(params, diameter))
        max_log_scale = math.log(diameter)
        background = dataset.background
        theta_range = dataset.theta_range
        log: List[float] = []
        # a static view repeated k times is drawn k times per epoch
        pool = np.repeat(np.arange(len(dataset)), [e.schedule_entry.multiplicity for e in dataset.entries])
        order = pool
        logger.info(f'Training {mode.value} model: {len(cloud)} Gaussians, '
                    f'{len(dataset)} images, {cfg.iterations} iterations')

        for it in tqdm(range(cfg.iterations), desc=f'train[{mode.value}]', disable=not cfg.progress):
            if it % len(pool) == 0:
                order = rng.permutation(pool)
            entry = dataset.entries[order[it % len(pool)]]
            model = self._model(mode, params, diameter, theta_range, background)
            cam = entry.camera

            colors = model.colors(cam, entry.theta)
            image, _ = render_splats(model.cloud, colors, cam, background)
            value, grad_image = loss(image, entry.image, cfg.lambda_ssim, cfg.ssim_window)
            if not math.isfinite(value):
                raise NumericDivergenceError(f'Loss became {value} at iteration {it}', iteration=it)
            log.append(value)
            if cfg.log_interval and it % cfg.log_interval == 0:
                logger.info(f'iter {it}: loss {value:.6f}, {len(model.cloud)} Gaussians')
            if it == cfg.iterations - 1:
                break

            grads = self._gradients(mode, model, colors, cam, entry.theta, background, grad_image)
            if not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise NumericDivergenceError(f'Non-finite gradient at iteration {it}', iteration=it)
            optimizer.learning_rates['positions'] = self._position_lr(it, diameter)
            optimizer.step(params, grads)
            np.minimum(params['log_scales'], max_log_scale, out=params['log_scales'])

            if (it + 1) % cfg.prune_interval == 0:
                params = self._prune(params, optimizer)

        return self._model(mode, params, diameter, theta_range, background, log)

    def _learning_rates(self, params: Dict[str, np.ndarray], diameter: float) -> Dict[str, float]:
        """Learning rate for every parameter name"""
        cfg = self.config
        rates = {
            'positions': cfg.lr_position * diameter,
            'log_scales': cfg.lr_log_scale,
            'rotations': cfg.lr_rotation,
            'opacity_logits': cfg.lr_opacity,
            'latents': cfg.lr_latent,
            SH_KEY: cfg.lr_sh,
        }
        for name in params:
            if name.startswith(MLP_PREFIX):
                rates[name] = cfg.lr_mlp
        return rates

    def _position_lr(self, it: int, diameter: float) -> float:
        """Exponential decay from the base rate to final_factor times it"""
        cfg = self.config
        progress = it / max(cfg.iterations - 1, 1)
        return cfg.lr_position * diameter * cfg.lr_position_final_factor ** progress

    @staticmethod
    def _model(mode: TrainMode, params: Dict[str, np.ndarray], diameter: float,
               theta_range: ThetaRange, background: Tuple[float, float, float],
               log: Optional[List[float]] = None) -> TrainedModel:
        """Model view of the flat parameter dict"""
        geometry = {name: params[name] for name in PARAM_NAMES if name in params}
        if mode is TrainMode.CONDITIONAL:
            cloud = GaussianCloud.from_params(geometry, diameter)
            mlp = MlpParams.from_dict({k[len(MLP_PREFIX):]: v for k, v in params.items()
                                       if k.startswith(MLP_PREFIX)})
            return TrainedModel(mode, cloud, mlp=mlp, log=list(log or []),
                                theta_range=theta_range, background=background)

        count = len(params['positions'])
        geometry['latents'] = np.zeros((count, LATENT_DIM))
        cloud = GaussianCloud.from_params(geometry, diameter)
        return TrainedModel(mode, cloud, sh=ShColors(params[SH_KEY]), log=list(log or []),
                            theta_range=theta_range, background=background)

    @staticmethod
    def _gradients(mode: TrainMode, model: TrainedModel, colors: np.ndarray, cam: CameraPose,
                   theta: float, background, grad_image: np.ndarray) -> Dict[str, np.ndarray]:
        """Gradients of the loss for every parameter, keyed like params"""
        render_grads = render_backward(model.cloud, colors, cam, background, grad_image)
        grads = {
            'positions': render_grads.positions,
            'log_scales': render_grads.log_scales,
            'rotations': render_grads.rotations,
            'opacity_logits': render_grads.opacity_logits,
        }
        if mode is TrainMode.CONDITIONAL:
            color_grads = eval_cloud_colors_backward(model.cloud, model.mlp, cam, theta,
                                                     render_grads.colors)
            grads['positions'] = grads['positions'] + color_grads.positions
            grads['latents'] = color_grads.latents
            for name, value in color_grads.params.to_dict().items():
                grads[MLP_PREFIX + name] = value
        else:
            sh_grads = eval_sh_colors_backward(model.cloud, model.sh, cam, render_grads.colors)
            grads['positions'] = grads['positions'] + sh_grads.positions
            grads[SH_KEY] = sh_grads.coeffs
        return grads

    def _prune(self, params: Dict[str, np.ndarray], optimizer: Adam) -> Dict[str, np.ndarray]:
        """Drop Gaussians below the opacity threshold, keeping at least one"""
        opacities = 1.0 / (1.0 + np.exp(-params['opacity_logits']))
        keep = opacities >= self.config.prune_opacity
        if keep.all():
            return params
        if not keep.any():
            # the cloud must stay non-empty
            keep[int(np.argmax(opacities))] = True

        per_gaussian = [name for name in params if not name.startswith(MLP_PREFIX)]
        optimizer.keep_rows(per_gaussian, keep)
        logger.info(f'Pruned {int((~keep).sum())} Gaussians below opacity '
                    f'{self.config.prune_opacity}, {int(keep.sum())} remain')
        return {name: (value[keep] if name in per_gaussian else value)
                for name, value in params.items()}


def train(dataset: Dataset, config: TrainConfig = None,
          mode: TrainMode = TrainMode.CONDITIONAL) -> TrainedModel:
    return Trainer(config).train(dataset, mode)


def evaluate(model: TrainedModel, test: Dataset) -> Tuple[float, pd.DataFrame]:
    """Masked PSNR per test image and their mean

    Frames whose mask holds no object pixels are scored over the whole image and
    flagged with masked=False.
    """
    if len(test) == 0:
        raise InvalidInputError('Test set is empty')
    rows = []
    for index, entry in enumerate(test.entries):
        image = model.render(entry.camera, entry.theta)
        masked = bool(np.any(entry.mask > MASK_THRESHOLD))
        if not masked:
            logger.warning(f'Test image {index} shows no object pixels, scoring the full frame')
        rows.append({
            'image': index,
            'camera_index': entry.schedule_entry.camera_index,
            'theta': entry.theta,
            'psnr': psnr(image, entry.image, entry.mask if masked else None),
            'masked': masked,
        })
    report = pd.DataFrame(rows)
    mean = float(report['psnr'].mean())
    logger.info(f'Evaluated {len(rows)} images: mean PSNR {mean:.3f} dB')
    return mean, report
