"""
JSON manifests for schedules and datasets.

A schedule file is a manifest whose frames carry no image paths. Floats are written in
their shortest round-trip form, so write -> read -> write is byte-identical.
"""
import logging
from pathlib import Path
from typing import List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ValidationError

from spinsplat.exceptions import SchemaError
from spinsplat.harness.imageio import PathLike, atomic_write, read_image, read_mask
from spinsplat.rendering.reference import Dataset, DatasetEntry, SyntheticScene
from spinsplat.scene.models import CameraPose, ScheduleEntry
from spinsplat.scene.sh import EnvLight

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1


class PoseRecord(BaseModel):
    width: int
    height: int
    focal: float
    principal_point: Tuple[float, float]
    rotation: Tuple[float, float, float, float]
    translation: Tuple[float, float, float]

    @classmethod
    def from_pose(cls, pose: CameraPose) -> 'PoseRecord':
        """Record for a camera pose"""
        return cls(width=pose.width, height=pose.height, focal=pose.focal,
                   principal_point=pose.principal_point,
                   rotation=tuple(float(v) for v in pose.rotation),
                   translation=tuple(float(v) for v in pose.translation))

    def to_pose(self) -> CameraPose:
        """Camera pose described by this record"""
        return CameraPose(self.width, self.height, self.focal, self.principal_point,
                          np.array(self.rotation), np.array(self.translation))


class FrameRecord(BaseModel):
    camera_index: int
    world_pose: PoseRecord
    object_frame_pose: PoseRecord
    turntable_angle: float
    light_rotation: float
    multiplicity: int = 1
    segment_direction: int = 1
    image: Optional[str] = None
    pfm: Optional[str] = None
    mask: Optional[str] = None

    @classmethod
    def from_entry(cls, entry: ScheduleEntry, **paths) -> 'FrameRecord':
        """Record for a schedule entry plus the paths of its rendered files"""
        return cls(camera_index=entry.camera_index,
                   world_pose=PoseRecord.from_pose(entry.world_pose),
                   object_frame_pose=PoseRecord.from_pose(entry.object_frame_pose),
                   turntable_angle=float(entry.turntable_angle),
                   light_rotation=float(entry.light_rotation),
                   multiplicity=entry.multiplicity,
                   segment_direction=entry.segment_direction,
                   **paths)

    def to_entry(self) -> ScheduleEntry:
        """Schedule entry described by this record"""
        return ScheduleEntry(self.camera_index, self.world_pose.to_pose(), self.turntable_angle,
                             self.light_rotation, self.object_frame_pose.to_pose(),
                             self.multiplicity, self.segment_direction)


class Manifest(BaseModel):
    schema_version: Literal[1] = SCHEMA_VERSION
    strategy: str
    resolution: Tuple[int, int]
    scene_hash: Optional[str] = None
    scene: Optional[SyntheticScene] = None
    scene_diameter: Optional[float] = None
    background: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    env_sh: Optional[List[Tuple[float, float, float]]] = None
    entries: List[FrameRecord]

    @property
    def sample_count(self) -> int:
        """P, counting repeated static views"""
        return sum(e.multiplicity for e in self.entries)

    def schedule(self) -> List[ScheduleEntry]:
        return [record.to_entry() for record in self.entries]

    def env(self) -> EnvLight:
        """Environment light stored with the frames"""
        if self.env_sh is None:
            raise SchemaError('Manifest has no environment light')
        return EnvLight(np.array(self.env_sh))

    def check_paths(self, root: PathLike):
        """Raise SchemaError when a referenced file is missing under root"""
        root = Path(root)
        for index, record in enumerate(self.entries):
            for path in (record.image, record.pfm, record.mask):
                if path is not None and not (root / path).exists():
                    raise SchemaError(f'Frame {index} references missing file {path}')


def schedule_manifest(schedule: List[ScheduleEntry], strategy: str) -> Manifest:
    """Manifest listing a schedule before any frame is rendered"""
    first = schedule[0].world_pose
    return Manifest(strategy=strategy, resolution=(first.width, first.height),
                    entries=[FrameRecord.from_entry(entry) for entry in schedule])


def dump_manifest(manifest: Manifest) -> str:
    return manifest.model_dump_json(indent=2) + "\n"


def write_manifest(path: PathLike, manifest: Manifest):
    atomic_write(path, dump_manifest(manifest))


def parse_manifest(text: str) -> Manifest:
    """Validate manifest JSON, raising SchemaError on bad input"""
    try:
        return Manifest.model_validate_json(text)
    except ValidationError as e:
        raise SchemaError(f'Invalid manifest: {e}') from e


def read_manifest(path: PathLike) -> Manifest:
    """Read and validate a manifest file"""
    try:
        text = Path(path).read_text(encoding='utf-8')
    except OSError as e:
        raise SchemaError(f'Cannot read manifest {path}: {e}') from e
    return parse_manifest(text)


def load_dataset(path: PathLike) -> Dataset:
    """Dataset from a manifest; float PFM images are preferred over PNG when present"""
    path = Path(path)
    manifest = read_manifest(path)
    root = path.parent
    manifest.check_paths(root)

    entries = []
    for index, record in enumerate(manifest.entries):
        source = record.pfm or record.image
        if source is None:
            raise SchemaError(f'Frame {index} has no image; is this a schedule file?')
        image = read_image(root / source)
        mask = read_mask(root / record.mask) if record.mask else np.ones((image.height, image.width))
        entries.append(DatasetEntry(record.to_entry(), image, mask))

    diameter = manifest.scene_diameter
    if diameter is None:
        diameter = manifest.scene.diameter if manifest.scene is not None else 1.0
    logger.info(f'Loaded {len(entries)} frames from {path}')
    return Dataset(entries, manifest.env(), manifest.scene_hash or '', manifest.background,
                   diameter, manifest.scene)
