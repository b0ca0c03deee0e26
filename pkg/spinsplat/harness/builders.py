"""Turn YAML config sections into the domain objects every command needs."""
import logging
from dataclasses import fields
from typing import Dict, Optional, Tuple

from spinsplat.config import section
from spinsplat.exceptions import ConfigError
from spinsplat.planning.planner import CameraRig, PlannerConfig
from spinsplat.rendering.reference import SyntheticScene, default_scene
from spinsplat.scene.sh import EnvLight, default_environment
from spinsplat.training.trainer import TrainConfig

logger = logging.getLogger(__name__)


def _field_names(cls) -> set:
    return {f.name for f in fields(cls)}


def planner_from_config(config: Dict, **overrides) -> Tuple[PlannerConfig, CameraRig]:
    """Split the planner section into turntable settings and rig geometry"""
    values = dict(section(config, 'planner'))
    values.update({k: v for k, v in overrides.items() if v is not None})
    planner_keys, rig_keys = _field_names(PlannerConfig), _field_names(CameraRig)
    unknown = set(values) - planner_keys - rig_keys
    if unknown:
        raise ConfigError(f'Unknown planner settings: {sorted(unknown)}')

    rig_values = {k: v for k, v in values.items() if k in rig_keys}
    for key in ('elevations_deg', 'pivot'):
        if key in rig_values:
            rig_values[key] = tuple(rig_values[key])
    planner = PlannerConfig(**{k: v for k, v in values.items() if k in planner_keys})
    return planner, CameraRig(**rig_values)


def scene_from_config(config: Dict) -> SyntheticScene:
    """Synthetic scene from the scene section, defaulting to the built-in one"""
    values = section(config, 'scene')
    if not values:
        return default_scene()
    try:
        return SyntheticScene(**values)
    except ValueError as e:
        raise ConfigError(f'Invalid scene section: {e}') from e


def env_from_config(config: Dict) -> EnvLight:
    """Environment light from the light section"""
    values = section(config, 'env')
    try:
        return default_environment(**values)
    except TypeError as e:
        raise ConfigError(f'Invalid env section: {e}') from e


def train_from_config(config: Dict, **overrides) -> TrainConfig:
    """TrainConfig from the train section with non-None overrides applied"""
    values = dict(section(config, 'train'))
    values.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return TrainConfig.from_dict(values)
    except ValueError as e:
        raise ConfigError(str(e)) from e


def resolution_from_config(config: Dict,
                           override: Optional[Tuple[int, int]] = None) -> Optional[Tuple[int, int]]:
    """Render resolution override; None keeps the schedule's own camera size"""
    if override is not None:
        return override
    value = section(config, 'render').get('resolution')
    if value is None:
        return None
    if len(value) != 2:
        raise ConfigError('render.resolution must be [width, height]')
    return int(value[0]), int(value[1])
