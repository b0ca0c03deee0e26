import enum
import logging
import math
from dataclasses import dataclass, replace
from typing import List, Optional, Tuple

import numpy as np

from spinsplat.exceptions import BudgetError, InvalidInputError
from spinsplat.scene.models import CameraPose, ScheduleEntry, look_at_pose

logger = logging.getLogger(__name__)

FULL_TURN = 2.0 * math.pi
BUDGET_TOLERANCE = 1e-9


class StrategyKind(enum.Enum):
    STATIC = 'static'
    ROTATING = 'rotating'
    SWING = 'swing'


@dataclass(frozen=True)
class Strategy:
    """Capture strategy; static and rotating are swing at s = 0 and s = 2*pi"""
    kind: StrategyKind
    swing_angle: float = 0.0

    def __post_init__(self):
        if self.kind is StrategyKind.SWING:
            if not (0.0 <= self.swing_angle <= FULL_TURN + 1e-12):
                raise InvalidInputError(f'Swing angle must lie in [0, 2pi], got {self.swing_angle}')

    @classmethod
    def static(cls) -> 'Strategy':
        return cls(StrategyKind.STATIC)

    @classmethod
    def rotating(cls) -> 'Strategy':
        return cls(StrategyKind.ROTATING, FULL_TURN)

    @classmethod
    def swing(cls, s: float) -> 'Strategy':
        return cls(StrategyKind.SWING, s)

    @property
    def angle(self) -> float:
        """Turntable motion per segment used by the time and sample formulas"""
        if self.kind is StrategyKind.STATIC:
            return 0.0
        if self.kind is StrategyKind.ROTATING:
            return FULL_TURN
        return self.swing_angle

    @property
    def label(self) -> str:
        """Short name used in manifests and logs"""
        if self.kind is StrategyKind.SWING:
            return f'swing({self.swing_angle / math.pi:.4g}pi)'
        return self.kind.value


@dataclass
class PlannerConfig:
    """
    Capture-rig parameters.

    num_cameras (M), angular_speed (v, rad/s), pause (m, seconds between segments),
    and exactly one of samples_per_radian (n) or frames_per_segment (N).
    """
    num_cameras: Optional[int] = None
    angular_speed: float = 0.2 * math.pi / 3.15
    pause: float = 3.0
    samples_per_radian: Optional[float] = None
    frames_per_segment: Optional[int] = None
    time_budget: Optional[float] = None
    centered: bool = False

    def validate(self):
        """Raise InvalidInputError on an inconsistent configuration"""
        if (self.samples_per_radian is None) == (self.frames_per_segment is None):
            raise InvalidInputError('Provide exactly one of samples_per_radian or frames_per_segment')
        if self.samples_per_radian is not None and not self.samples_per_radian > 0:
            raise InvalidInputError('samples_per_radian must be positive')
        if self.frames_per_segment is not None and self.frames_per_segment < 1:
            raise InvalidInputError('frames_per_segment must be at least 1')
        if not self.angular_speed > 0:
            raise InvalidInputError('Turntable angular speed must be positive')
        if self.pause < 0:
            raise InvalidInputError('Relocation pause cannot be negative')
        if self.num_cameras is not None and self.num_cameras < 1:
            raise InvalidInputError('At least one camera position is required')
        if self.num_cameras is None and self.time_budget is None:
            raise InvalidInputError('Provide num_cameras or a time_budget to solve for it')

    def samples_per_radian_for(self, strategy: Strategy) -> float:
        """n for the strategy; infinite for static captures"""
        if self.samples_per_radian is not None:
            return self.samples_per_radian
        if strategy.angle == 0.0:
            return math.inf
        return self.frames_per_segment / strategy.angle

    def resolved(self, strategy: Strategy) -> 'PlannerConfig':
        """Copy with num_cameras filled in from the time budget when absent"""
        if self.num_cameras is not None:
            return self
        if self.time_budget is None:
            raise InvalidInputError('Provide num_cameras or a time_budget to solve for it')
        cameras = solve_budget(self.time_budget, strategy.angle, self.angular_speed, self.pause)
        return replace(self, num_cameras=cameras)


@dataclass
class CameraRig:
    """Tripod positions on a ring around the turntable, cycling through elevation levels"""
    radius: float = 3.5
    elevations_deg: Tuple[float, ...] = (10.0, 25.0, 40.0)
    width: int = 64
    height: int = 64
    fov_deg: float = 40.0
    azimuth_offset: float = 0.0
    target_height: float = 0.3
    pivot: Tuple[float, float, float] = (0.0, 0.0, 0.0)

    @property
    def focal(self) -> float:
        return 0.5 * self.width / math.tan(math.radians(self.fov_deg) / 2.0)

    def pose(self, azimuth: float, elevation_deg: float) -> CameraPose:
        """Camera at an azimuth (radians) and elevation (degrees) looking at the target"""
        el = math.radians(elevation_deg)
        pivot = np.asarray(self.pivot, dtype=np.float64)
        target = pivot + np.array([0.0, 0.0, self.target_height])
        eye = target + self.radius * np.array([math.cos(el) * math.cos(azimuth),
                                               math.cos(el) * math.sin(azimuth),
                                               math.sin(el)])
        return look_at_pose(eye, target, self.width, self.height, self.focal)

    def poses(self, count: int) -> List[CameraPose]:
        """count cameras evenly spaced around the turntable, cycling the elevations"""
        if count < 1:
            raise InvalidInputError('Camera rig needs at least one position')
        return [
            self.pose(self.azimuth_offset + FULL_TURN * i / count,
                      self.elevations_deg[i % len(self.elevations_deg)])
            for i in range(count)
        ]


def capture_time(config: PlannerConfig, strategy: Strategy) -> float:
    """T = M * s / v + (M - 1) * m"""
    if not config.angular_speed > 0:
        raise InvalidInputError('Turntable angular speed must be positive')
    cameras = config.resolved(strategy).num_cameras
    return cameras * strategy.angle / config.angular_speed + (cameras - 1) * config.pause


def _frames_per_camera(config: PlannerConfig, strategy: Strategy, cameras: int) -> List[int]:
    """Per-camera frame counts; with n given they sum to round(M * s * n) exactly"""
    if strategy.kind is StrategyKind.STATIC or config.frames_per_segment is not None:
        return [config.frames_per_segment or 1] * cameras

    per_segment = strategy.angle * config.samples_per_radian
    cumulative = [int(round(i * per_segment)) for i in range(cameras + 1)]
    return [cumulative[i + 1] - cumulative[i] for i in range(cameras)]


def sample_count(config: PlannerConfig, strategy: Strategy) -> int:
    """P = round(M * s * n), or M * N when N is given or the strategy is static"""
    cameras = config.num_cameras
    if cameras is None:
        cameras = config.resolved(strategy).num_cameras
    if cameras <= 0:
        return 0
    return int(sum(_frames_per_camera(config, strategy, cameras)))


def solve_budget(time_budget: float, s: float, v: float, m: float) -> int:
    """Largest camera count whose capture time fits the budget"""
    if time_budget is None or not math.isfinite(time_budget):
        raise InvalidInputError('Time budget must be finite')
    if not v > 0:
        raise InvalidInputError('Turntable angular speed must be positive')

    segment = s / v
    if time_budget < segment * (1.0 - BUDGET_TOLERANCE):
        raise BudgetError(f'budget too small: {time_budget:.3f}s < one segment {segment:.3f}s')
    if segment + m <= 0.0:
        raise InvalidInputError('Zero segment and zero pause give an unbounded camera count')

    def fits(cameras: int) -> bool:
        total = cameras * segment + (cameras - 1) * m
        return total <= time_budget * (1.0 + BUDGET_TOLERANCE) + BUDGET_TOLERANCE

    cameras = max(1, int(math.floor((time_budget + m) / (segment + m) + BUDGET_TOLERANCE)))
    while cameras > 1 and not fits(cameras):
        cameras -= 1
    while fits(cameras + 1):
        cameras += 1
    return cameras


def _segment_angles(strategy: Strategy, frames: int, centered: bool) -> np.ndarray:
    """Turntable angles of one segment"""
    if strategy.kind is StrategyKind.STATIC or frames == 0:
        return np.zeros(min(frames, 1))
    if strategy.kind is StrategyKind.ROTATING:
        return FULL_TURN * np.arange(frames) / frames
    if frames == 1:
        angles = np.zeros(1)
    else:
        angles = np.linspace(0.0, strategy.swing_angle, frames)
    return angles - strategy.swing_angle / 2.0 if centered else angles


def generate_schedule(config: PlannerConfig, strategy: Strategy,
                      rig: Optional[CameraRig] = None) -> List[ScheduleEntry]:
    """Frames for every camera position under the given strategy"""
    rig = rig or CameraRig()
    config.validate()
    config = config.resolved(strategy)
    frames = _frames_per_camera(config, strategy, config.num_cameras)
    poses = rig.poses(config.num_cameras)

    schedule = []
    for camera_index, (pose, count) in enumerate(zip(poses, frames)):
        direction = 1 if camera_index % 2 == 0 else -1
        if strategy.kind is StrategyKind.STATIC:
            schedule.append(ScheduleEntry.create(camera_index, pose, 0.0, rig.pivot,
                                                 multiplicity=count))
            continue
        for phi in _segment_angles(strategy, count, config.centered):
            schedule.append(ScheduleEntry.create(camera_index, pose, float(phi), rig.pivot,
                                                 segment_direction=direction))

    logger.info(f'Generated {strategy.label} schedule: M={config.num_cameras}, '
                f'{len(schedule)} entries, P={sum(e.multiplicity for e in schedule)}')
    return schedule
