import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from spinsplat.exceptions import InvalidInputError
from spinsplat.radiance.mlp import eval_cloud_colors
from spinsplat.rendering.rasterizer import render_splats
from spinsplat.scene.models import CameraPose, ImageBuffer, parse_angle
from spinsplat.training.trainer import TrainedModel, TrainMode

logger = logging.getLogger(__name__)

EXTRAPOLATION_WARNING = 'extrapolation'


@dataclass(frozen=True)
class CombinationTerm:
    theta: float
    weight: Tuple[float, float, float]


@dataclass(frozen=True)
class CombinationSpec:
    """Light made of several rotations of the captured light, each with an RGB weight"""
    terms: Tuple[CombinationTerm, ...]

    def __post_init__(self):
        if not self.terms:
            raise InvalidInputError('Combination needs at least one term')
        for term in self.terms:
            values = (term.theta,) + tuple(term.weight)
            if len(term.weight) != 3 or not all(math.isfinite(v) for v in values):
                raise InvalidInputError(f'Invalid combination term {term}')

    @classmethod
    def from_pairs(cls, pairs: Sequence[Tuple[float, Sequence[float]]]) -> 'CombinationSpec':
        """Spec from (theta, rgb weight) pairs"""
        return cls(tuple(CombinationTerm(float(theta), tuple(float(w) for w in weight))
                         for theta, weight in pairs))

    @classmethod
    def parse(cls, text: str) -> 'CombinationSpec':
        """'theta:r,g,b;theta:r,g,b' with angles in radians or multiples of pi ('0.2pi')"""
        pairs = []
        for chunk in filter(None, (part.strip() for part in text.split(';'))):
            try:
                theta, weights = chunk.split(':')
                pairs.append((parse_angle(theta), [float(w) for w in weights.split(',')]))
            except ValueError as e:
                raise InvalidInputError(f"Cannot parse combination term '{chunk}'") from e
        return cls.from_pairs(pairs)


@dataclass(eq=False)
class RelitImage:
    image: ImageBuffer
    metadata: Dict[str, List[str]] = field(default_factory=lambda: {'warnings': []})

    @property
    def warnings(self) -> List[str]:
        return self.metadata['warnings']


def extrapolation_warnings(model: TrainedModel, thetas: Sequence[float]) -> List[str]:
    """Warn about light rotations outside the trained range"""
    outside = [theta for theta in thetas if not model.theta_range.contains(theta)]
    if not outside:
        return []
    logger.warning(f'Light rotations {outside} lie outside the trained range '
                   f'[{model.theta_range.low:.4f}, {model.theta_range.high:.4f}]')
    return [EXTRAPOLATION_WARNING]


def combine_rotations(model: TrainedModel, spec: CombinationSpec, cam: CameraPose,
                      background: Optional[Sequence[float]] = None) -> RelitImage:
    """Composite once with colors summed over weighted light rotations"""
    if model.mode is not TrainMode.CONDITIONAL:
        raise InvalidInputError('Rotation combination needs a conditional model')

    colors = np.zeros((len(model.cloud), 3))
    for term in spec.terms:
        colors += np.asarray(term.weight) * eval_cloud_colors(model.cloud, model.mlp, cam, term.theta)
    colors = np.maximum(colors, 0.0)

    bg = model.background if background is None else background
    image, _ = render_splats(model.cloud, colors, cam, bg)
    result = RelitImage(image)
    result.warnings.extend(extrapolation_warnings(model, [t.theta for t in spec.terms]))
    return result
