import logging
import math
import re
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np
from scipy.spatial.transform import Rotation

from spinsplat.exceptions import InvalidInputError
from spinsplat.scene.sh import EnvLight, rotate_env

logger = logging.getLogger(__name__)

LATENT_DIM = 8
QUATERNION_TOLERANCE = 1e-9
TURNTABLE_CENTER = np.zeros(3)


def _readonly(array, dtype=np.float64) -> np.ndarray:
    out = np.array(array, dtype=dtype)
    out.setflags(write=False)
    return out


def rotation_z(angle: float) -> np.ndarray:
    """Rotation matrix about +z"""
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def quat_to_matrix(q: Sequence[float]) -> np.ndarray:
    """Scalar-first unit quaternion (w, x, y, z) to a 3x3 rotation matrix"""
    w, x, y, z = q
    return Rotation.from_quat([x, y, z, w]).as_matrix()


def _canonical_quat(rotation: Rotation) -> np.ndarray:
    x, y, z, w = rotation.as_quat()
    q = np.array([w, x, y, z])
    return -q if w < 0 else q


def matrix_to_quat(matrix: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z) for a rotation matrix"""
    return _canonical_quat(Rotation.from_matrix(matrix))


@dataclass(frozen=True, eq=False)
class CameraPose:
    """Pinhole camera; world_to_camera maps world points into an x-right, y-down, z-forward frame"""
    width: int
    height: int
    focal: float
    principal_point: Tuple[float, float]
    rotation: np.ndarray  # (w, x, y, z)
    translation: np.ndarray

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise InvalidInputError(f'Image size must be positive, got {self.width}x{self.height}')
        if not (self.focal > 0 and math.isfinite(self.focal)):
            raise InvalidInputError(f'Focal length must be positive, got {self.focal}')

        rotation = _readonly(self.rotation)
        translation = _readonly(self.translation)
        if rotation.shape != (4,) or translation.shape != (3,):
            raise InvalidInputError('Pose needs a 4-quaternion and a 3-translation')
        if not (np.all(np.isfinite(rotation)) and np.all(np.isfinite(translation))):
            raise InvalidInputError('Pose contains non-finite values')
        if abs(np.linalg.norm(rotation) - 1.0) > QUATERNION_TOLERANCE:
            raise InvalidInputError('Pose quaternion is not unit length')

        object.__setattr__(self, 'rotation', rotation)
        object.__setattr__(self, 'translation', translation)
        object.__setattr__(self, 'principal_point',
                           (float(self.principal_point[0]), float(self.principal_point[1])))

    @property
    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.rotation)

    @property
    def center(self) -> np.ndarray:
        return -self.rotation_matrix.T @ self.translation

    @property
    def world_to_camera(self) -> np.ndarray:
        """4x4 world-to-camera transform"""
        matrix = np.eye(4)
        matrix[:3, :3] = self.rotation_matrix
        matrix[:3, 3] = self.translation
        return matrix

    def with_extrinsics(self, rotation: np.ndarray, translation: np.ndarray) -> 'CameraPose':
        return CameraPose(self.width, self.height, self.focal, self.principal_point,
                          rotation, translation)

    def with_resolution(self, width: int, height: int) -> 'CameraPose':
        """Same extrinsics and field of view at another image size"""
        sx, sy = width / self.width, height / self.height
        return CameraPose(width, height, self.focal * sx,
                          (self.principal_point[0] * sx, self.principal_point[1] * sy),
                          self.rotation, self.translation)


def look_at_pose(eye: Sequence[float], target: Sequence[float], width: int, height: int,
                 focal: float, up: Sequence[float] = (0.0, 0.0, 1.0)) -> CameraPose:
    """Camera at eye looking at target with world +z up in the image"""
    eye = np.asarray(eye, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - eye
    forward /= np.linalg.norm(forward)
    right = np.cross(forward, up)
    norm = np.linalg.norm(right)
    if norm < 1e-12:
        raise InvalidInputError('Look-at direction is parallel to the up axis')
    right /= norm
    down = np.cross(forward, right)

    rotation = np.stack([right, down, forward])
    quat = matrix_to_quat(rotation)
    translation = -quat_to_matrix(quat) @ eye
    return CameraPose(width, height, focal, (width / 2.0, height / 2.0), quat, translation)


def rotate_pose_about_axis(pose: CameraPose, angle: float,
                           pivot: Sequence[float] = TURNTABLE_CENTER) -> CameraPose:
    """Carry the camera rigidly by +angle about world z through pivot"""
    if not math.isfinite(angle):
        raise InvalidInputError('Rotation angle must be finite')
    if angle == 0.0:
        return pose

    pivot = np.asarray(pivot, dtype=np.float64)
    new_center = rotation_z(angle) @ (pose.center - pivot) + pivot

    w, x, y, z = pose.rotation
    composed = Rotation.from_quat([x, y, z, w]) * Rotation.from_rotvec([0.0, 0.0, -angle])
    quat = _canonical_quat(composed)
    translation = -quat_to_matrix(quat) @ new_center
    return pose.with_extrinsics(quat, translation)


@dataclass(frozen=True, eq=False)
class ImageBuffer:
    """Linear-RGB image stored row-major as (height, width, 3)"""
    pixels: np.ndarray

    def __post_init__(self):
        pixels = np.array(self.pixels, dtype=np.float64)
        if pixels.ndim != 3 or pixels.shape[2] != 3:
            raise InvalidInputError(f'Image must be (H, W, 3), got {pixels.shape}')
        if not np.all(np.isfinite(pixels)):
            raise InvalidInputError('Image contains non-finite values')
        if np.any(pixels < 0.0):
            raise InvalidInputError('Image contains negative radiance')
        pixels.setflags(write=False)
        object.__setattr__(self, 'pixels', pixels)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @classmethod
    def filled(cls, width: int, height: int, rgb: Sequence[float]) -> 'ImageBuffer':
        return cls(np.broadcast_to(np.asarray(rgb, dtype=np.float64), (height, width, 3)))


@dataclass(frozen=True, eq=False)
class Gaussian:
    position: np.ndarray
    log_scale: np.ndarray
    rotation: np.ndarray
    opacity_logit: float
    latent: np.ndarray

    def __post_init__(self):
        for name, size in (('position', 3), ('log_scale', 3), ('rotation', 4),
                           ('latent', LATENT_DIM)):
            value = _readonly(getattr(self, name))
            if value.shape != (size,):
                raise InvalidInputError(f'Gaussian {name} must have {size} entries')
            object.__setattr__(self, name, value)

    @property
    def opacity(self) -> float:
        return 1.0 / (1.0 + math.exp(-self.opacity_logit))


PARAM_NAMES = ('positions', 'log_scales', 'rotations', 'opacity_logits', 'latents')


@dataclass(frozen=True, eq=False)
class GaussianCloud:
    """Struct-of-arrays storage for an ordered list of Gaussians"""
    positions: np.ndarray
    log_scales: np.ndarray
    rotations: np.ndarray
    opacity_logits: np.ndarray
    latents: np.ndarray
    scene_diameter: float

    def __post_init__(self):
        count = len(self.positions)
        expected = {'positions': (count, 3), 'log_scales': (count, 3), 'rotations': (count, 4),
                    'opacity_logits': (count,), 'latents': (count, LATENT_DIM)}
        for name, shape in expected.items():
            value = np.asarray(getattr(self, name), dtype=np.float64).reshape(shape)
            object.__setattr__(self, name, value)
        if not self.scene_diameter > 0:
            raise InvalidInputError('Scene diameter must be positive')

    def __len__(self) -> int:
        return len(self.positions)

    def __getitem__(self, index: int) -> Gaussian:
        q = self.rotations[index]
        return Gaussian(self.positions[index], self.log_scales[index], q / np.linalg.norm(q),
                        float(self.opacity_logits[index]), self.latents[index])

    @property
    def opacities(self) -> np.ndarray:
        return 1.0 / (1.0 + np.exp(-self.opacity_logits))

    @classmethod
    def from_gaussians(cls, gaussians: List[Gaussian], scene_diameter: float) -> 'GaussianCloud':
        """Stack single Gaussians into a cloud"""
        if not gaussians:
            return cls.empty(scene_diameter)
        return cls(
            positions=np.stack([g.position for g in gaussians]),
            log_scales=np.stack([g.log_scale for g in gaussians]),
            rotations=np.stack([g.rotation for g in gaussians]),
            opacity_logits=np.array([g.opacity_logit for g in gaussians]),
            latents=np.stack([g.latent for g in gaussians]),
            scene_diameter=scene_diameter,
        )

    @classmethod
    def from_params(cls, params: Dict[str, np.ndarray], scene_diameter: float) -> 'GaussianCloud':
        return cls(**{name: params[name] for name in PARAM_NAMES}, scene_diameter=scene_diameter)

    @classmethod
    def empty(cls, scene_diameter: float) -> 'GaussianCloud':
        return cls(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, 4)), np.zeros(0),
                   np.zeros((0, LATENT_DIM)), scene_diameter)

    def to_params(self) -> Dict[str, np.ndarray]:
        return {name: getattr(self, name).copy() for name in PARAM_NAMES}

    def subset(self, keep: np.ndarray) -> 'GaussianCloud':
        return GaussianCloud(**{name: getattr(self, name)[keep] for name in PARAM_NAMES},
                             scene_diameter=self.scene_diameter)


@dataclass(frozen=True, eq=False)
class ScheduleEntry:
    """
    One captured frame. The turntable turns the object by +phi about world z; in the
    object frame the camera sits at world_pose carried by -phi and the light is the
    environment rotated by -phi. light_rotation stores theta = phi.
    """
    camera_index: int
    world_pose: CameraPose
    turntable_angle: float
    light_rotation: float
    object_frame_pose: CameraPose
    multiplicity: int = 1
    segment_direction: int = 1

    @classmethod
    def create(cls, camera_index: int, world_pose: CameraPose, phi: float,
               pivot: Sequence[float] = TURNTABLE_CENTER, multiplicity: int = 1,
               segment_direction: int = 1) -> 'ScheduleEntry':
        """Entry whose object-frame camera and light follow from the turntable angle"""
        return cls(
            camera_index=camera_index,
            world_pose=world_pose,
            turntable_angle=phi,
            light_rotation=phi,
            object_frame_pose=rotate_pose_about_axis(world_pose, -phi, pivot),
            multiplicity=multiplicity,
            segment_direction=segment_direction,
        )


def object_frame_light(env: EnvLight, theta: float) -> EnvLight:
    """Environment as seen from the object after a turntable rotation of theta"""
    return rotate_env(env, -theta)


FULL_TURN_GAP = math.pi / 4.0
TWO_PI = 2.0 * math.pi

ANGLE_PATTERN = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)?\s*(\*?\s*pi)?\s*$")


def parse_angle(text: str) -> float:
    """Radians from '0.2pi', 'pi', '2*pi', '0.628' or 'inf'"""
    if text.strip().lower() in ('inf', 'infinity'):
        return math.inf
    match = ANGLE_PATTERN.match(text.lower())
    if match is None or (match.group(1) is None and match.group(2) is None):
        raise InvalidInputError(f"Invalid angle '{text}'")
    value = float(match.group(1)) if match.group(1) is not None else 1.0
    return value * math.pi if match.group(2) else value


@dataclass(frozen=True)
class ThetaRange:
    """Arc of light rotations seen during training, from low counter-clockwise to high"""
    low: float
    high: float
    full_turn: bool = False

    @classmethod
    def from_angles(cls, angles: Sequence[float]) -> 'ThetaRange':
        """Smallest arc covering every angle; it starts after the largest circular gap"""
        angles = np.asarray(angles, dtype=np.float64)
        if angles.size == 0:
            raise InvalidInputError('Theta range needs at least one angle')
        wrapped = np.unique(np.mod(angles, TWO_PI))
        if wrapped.size == 1:
            low = float(angles.flat[0])
            return cls(low, low, False)

        gaps = np.diff(np.concatenate([wrapped, wrapped[:1] + TWO_PI]))
        largest = float(gaps.max())
        # ties go to the wrap-around gap so unwrapped schedules start at their smallest angle
        index = int(np.flatnonzero(gaps >= largest - 1e-12)[-1])
        low = float(wrapped[(index + 1) % wrapped.size])
        if low > math.pi:
            low -= TWO_PI
        return cls(low, low + TWO_PI - largest, largest <= FULL_TURN_GAP)

    @property
    def span(self) -> float:
        return self.high - self.low

    def contains(self, theta: float, tolerance: float = 1e-9) -> bool:
        """True when theta lies in the range modulo a full turn"""
        if self.full_turn:
            return True
        offset = (theta - self.low + tolerance) % TWO_PI
        return offset <= self.span + 2.0 * tolerance

    def evenly_spaced(self, count: int) -> np.ndarray:
        """count angles covering the range; a full turn is sampled half-open"""
        if count < 1:
            raise InvalidInputError('Need at least one angle')
        if self.full_turn:
            return 2.0 * math.pi * np.arange(count) / count
        if count == 1:
            return np.array([self.low])
        return np.linspace(self.low, self.high, count)
