from typing import Tuple

import numpy as np

from spinsplat.exceptions import InvalidInputError
from spinsplat.scene.models import CameraPose

COINCIDENT_DISTANCE = 1e-12


def view_directions(positions: np.ndarray, cam: CameraPose) -> Tuple[np.ndarray, np.ndarray]:
    """Unit directions from the camera center to each position, and the distances"""
    offsets = np.asarray(positions, dtype=np.float64) - cam.center
    distances = np.linalg.norm(offsets, axis=1)
    if np.any(distances < COINCIDENT_DISTANCE):
        raise InvalidInputError('A Gaussian coincides with the camera center')
    return offsets / distances[:, None], distances


def view_direction_backward(dirs: np.ndarray, distances: np.ndarray,
                            d_dirs: np.ndarray) -> np.ndarray:
    """Position gradient through the normalization (I - v v^T) / r"""
    radial = np.sum(dirs * d_dirs, axis=1, keepdims=True)
    return (d_dirs - dirs * radial) / distances[:, None]
