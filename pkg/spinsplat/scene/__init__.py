from spinsplat.scene.models import (
    CameraPose, Gaussian, GaussianCloud, ImageBuffer, ScheduleEntry, LATENT_DIM,
    look_at_pose, object_frame_light, rotate_pose_about_axis,
)
from spinsplat.scene.sh import EnvLight, default_environment, eval_env, rotate_env

__all__ = [
    'CameraPose', 'Gaussian', 'GaussianCloud', 'ImageBuffer', 'ScheduleEntry', 'LATENT_DIM',
    'look_at_pose', 'object_frame_light', 'rotate_pose_about_axis',
    'EnvLight', 'default_environment', 'eval_env', 'rotate_env',
]
