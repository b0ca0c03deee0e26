import logging
import pickle
from typing import Dict, Optional, Tuple

import numpy as np

from spinsplat.exceptions import SchemaError
from spinsplat.harness.imageio import PathLike, atomic_write
from spinsplat.radiance.mlp import MlpParams
from spinsplat.radiance.sh_colors import ShColors
from spinsplat.relight.distill import DistilledSh
from spinsplat.scene.models import PARAM_NAMES, GaussianCloud, ThetaRange
from spinsplat.training.trainer import TrainedModel, TrainMode

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
PICKLE_PROTOCOL = 4
STATIC_THETA_FLAG = 'static-theta'


def checkpoint_state(model: TrainedModel, distilled: Optional[DistilledSh] = None) -> Dict:
    """Plain dict of arrays and scalars describing a trained model"""
    cloud = {name: np.ascontiguousarray(getattr(model.cloud, name)) for name in PARAM_NAMES}
    cloud['scene_diameter'] = float(model.cloud.scene_diameter)
    state = {
        'schema_version': CHECKPOINT_VERSION,
        'mode': model.mode.value,
        'cloud': cloud,
        'mlp': model.mlp.to_dict() if model.mlp is not None else None,
        'sh': np.ascontiguousarray(model.sh.coeffs) if model.sh is not None else None,
        'theta_range': (model.theta_range.low, model.theta_range.high,
                        model.theta_range.full_turn),
        'log': [float(v) for v in model.log],
        'background': tuple(float(v) for v in model.background),
        'distilled': None,
    }
    if distilled is not None:
        state['distilled'] = {
            'flag': STATIC_THETA_FLAG,
            'theta_star': distilled.theta_star,
            'degree': distilled.degree,
            'coefficients': np.ascontiguousarray(distilled.colors.coeffs),
            'residual': np.ascontiguousarray(distilled.residual),
        }
    return state


def save_checkpoint(path: PathLike, model: TrainedModel, distilled: Optional[DistilledSh] = None):
    """Pickle a model and its optional distilled colors to path"""
    atomic_write(path, pickle.dumps(checkpoint_state(model, distilled), protocol=PICKLE_PROTOCOL))
    logger.info(f'Saved {model.mode.value} checkpoint to {path}')


def model_from_state(state: Dict) -> Tuple[TrainedModel, Optional[DistilledSh]]:
    """Rebuild a model from a checkpoint state dict"""
    if not isinstance(state, dict) or state.get('schema_version') != CHECKPOINT_VERSION:
        raise SchemaError('Unsupported checkpoint schema')
    try:
        cloud_state = dict(state['cloud'])
        diameter = cloud_state.pop('scene_diameter')
        cloud = GaussianCloud.from_params(cloud_state, diameter)
        mode = TrainMode(state['mode'])
        model = TrainedModel(
            mode=mode,
            cloud=cloud,
            mlp=MlpParams.from_dict(state['mlp']) if state['mlp'] is not None else None,
            sh=ShColors(state['sh']) if state['sh'] is not None else None,
            log=list(state['log']),
            theta_range=ThetaRange(*state['theta_range']),
            background=tuple(state['background']),
        )
        distilled = None
        if state['distilled'] is not None:
            block = state['distilled']
            distilled = DistilledSh(block['theta_star'], ShColors(block['coefficients']),
                                    np.asarray(block['residual']))
    except (KeyError, TypeError, ValueError) as e:
        raise SchemaError(f'Malformed checkpoint: {e}') from e
    return model, distilled


def load_checkpoint(path: PathLike) -> Tuple[TrainedModel, Optional[DistilledSh]]:
    """Read a checkpoint written by save_checkpoint"""
    try:
        with open(path, 'rb') as f:
            state = pickle.load(f)
    except (OSError, pickle.UnpicklingError, EOFError) as e:
        raise SchemaError(f'Cannot read checkpoint {path}: {e}') from e
    return model_from_state(state)
