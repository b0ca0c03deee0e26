"""
Analytic ground-truth renderer for synthetic turntable scenes.

Scenes are spheres plus an optional ground disk lit by an SH environment. Shading is
direct illumination only: Lambertian irradiance from the clamped-cosine SH convolution
plus one environment sample along the mirror direction, weighted by a raised-cosine
lobe ((1 + n.r) / 2) ** gloss_exponent.
"""
import concurrent.futures
import hashlib
import logging
import math
from dataclasses import dataclass
from typing import Annotated, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import AfterValidator, BaseModel, ConfigDict, Field, FiniteFloat

from spinsplat.config import worker_threads
from spinsplat.exceptions import InvalidInputError
from spinsplat.scene.models import (
    TURNTABLE_CENTER, CameraPose, ImageBuffer, ScheduleEntry, ThetaRange, object_frame_light,
    rotation_z,
)
from spinsplat.scene.sh import EnvLight, eval_env, irradiance

logger = logging.getLogger(__name__)

HIT_EPSILON = 1e-9


def _unit_rgb(values: Tuple[float, float, float]) -> Tuple[float, float, float]:
    """Clamp an RGB triple to [0, 1]"""
    if not all(0.0 <= v <= 1.0 for v in values):
        raise ValueError('albedo components must lie in [0, 1]')
    return values


Vec3 = Tuple[FiniteFloat, FiniteFloat, FiniteFloat]
Albedo = Annotated[Vec3, AfterValidator(_unit_rgb)]


class SphereSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    center: Vec3
    radius: FiniteFloat = Field(gt=0)
    albedo: Albedo
    gloss_strength: float = Field(default=0.0, ge=0.0, le=1.0)
    gloss_exponent: FiniteFloat = Field(default=1.0, ge=1.0)


class GroundDisk(BaseModel):
    """Horizontal disk facing +z"""
    model_config = ConfigDict(frozen=True)

    height: FiniteFloat = 0.0
    radius: FiniteFloat = Field(default=1.0, gt=0)
    center_xy: Tuple[FiniteFloat, FiniteFloat] = (0.0, 0.0)
    albedo: Albedo = (0.6, 0.6, 0.6)


class SyntheticScene(BaseModel):
    model_config = ConfigDict(frozen=True)

    spheres: List[SphereSpec]
    ground: Optional[GroundDisk] = None
    background: Vec3 = (0.0, 0.0, 0.0)

    def scene_hash(self) -> str:
        return hashlib.sha256(self.model_dump_json().encode('utf-8')).hexdigest()

    def bounding_sphere(self) -> Tuple[np.ndarray, float]:
        """Center of the bounding box and the radius enclosing every primitive"""
        lows, highs = [], []
        for sphere in self.spheres:
            c = np.asarray(sphere.center)
            lows.append(c - sphere.radius)
            highs.append(c + sphere.radius)
        if self.ground is not None:
            g = self.ground
            c = np.array([g.center_xy[0], g.center_xy[1], g.height])
            extent = np.array([g.radius, g.radius, 0.0])
            lows.append(c - extent)
            highs.append(c + extent)
        if not lows:
            raise InvalidInputError('Scene has no geometry')

        center = 0.5 * (np.min(lows, axis=0) + np.max(highs, axis=0))
        radius = 0.0
        for sphere in self.spheres:
            radius = max(radius, float(np.linalg.norm(np.asarray(sphere.center) - center))
                         + sphere.radius)
        if self.ground is not None:
            g = self.ground
            planar = math.hypot(g.center_xy[0] - center[0], g.center_xy[1] - center[1]) + g.radius
            radius = max(radius, math.hypot(planar, g.height - center[2]))
        return center, radius

    @property
    def diameter(self) -> float:
        return 2.0 * self.bounding_sphere()[1]

    def rotate(self, angle: float, pivot: Sequence[float] = TURNTABLE_CENTER) -> 'SyntheticScene':
        """Scene turned by +angle about world z through pivot"""
        rz = rotation_z(angle)
        pivot = np.asarray(pivot, dtype=np.float64)
        spheres = [
            sphere.model_copy(update={
                'center': tuple(float(v) for v in rz @ (np.asarray(sphere.center) - pivot) + pivot)})
            for sphere in self.spheres
        ]
        ground = self.ground
        if ground is not None:
            c = np.array([ground.center_xy[0], ground.center_xy[1], ground.height])
            moved = rz @ (c - pivot) + pivot
            ground = ground.model_copy(update={'center_xy': (float(moved[0]), float(moved[1]))})
        return self.model_copy(update={'spheres': spheres, 'ground': ground})


def default_scene() -> SyntheticScene:
    """Four spheres of varying gloss on a grey ground disk"""
    return SyntheticScene(
        spheres=[
            SphereSpec(center=(0.0, 0.0, 0.45), radius=0.45, albedo=(0.8, 0.3, 0.25),
                       gloss_strength=0.3, gloss_exponent=20.0),
            SphereSpec(center=(0.5, 0.3, 0.22), radius=0.22, albedo=(0.2, 0.6, 0.8),
                       gloss_strength=0.6, gloss_exponent=60.0),
            SphereSpec(center=(-0.35, 0.45, 0.18), radius=0.18, albedo=(0.9, 0.85, 0.3)),
            SphereSpec(center=(-0.2, -0.5, 0.25), radius=0.25, albedo=(0.3, 0.8, 0.35),
                       gloss_strength=0.2, gloss_exponent=10.0),
        ],
        ground=GroundDisk(height=0.0, radius=1.0, albedo=(0.6, 0.6, 0.6)),
        background=(0.0, 0.0, 0.0),
    )


def camera_rays(cam: CameraPose) -> Tuple[np.ndarray, np.ndarray]:
    """World-space origin and unit directions through every pixel center, row-major"""
    v, u = np.meshgrid(np.arange(cam.height) + 0.5, np.arange(cam.width) + 0.5, indexing='ij')
    cx, cy = cam.principal_point
    local = np.stack([(u - cx) / cam.focal, (v - cy) / cam.focal, np.ones_like(u)], axis=-1)
    dirs = local.reshape(-1, 3) @ cam.rotation_matrix
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return cam.center, dirs


def _intersect_spheres(origin: np.ndarray, dirs: np.ndarray,
                       spheres: List[SphereSpec]) -> Tuple[np.ndarray, np.ndarray]:
    """Nearest hit distance and sphere index per ray, inf and -1 on a miss"""
    count = dirs.shape[0]
    best_t = np.full(count, np.inf)
    best_id = np.full(count, -1)
    for index, sphere in enumerate(spheres):
        oc = origin - np.asarray(sphere.center)
        b = dirs @ oc
        disc = b * b - (oc @ oc - sphere.radius ** 2)
        root = np.sqrt(np.maximum(disc, 0.0))
        near, far = -b - root, -b + root
        t = np.where(near > HIT_EPSILON, near, far)
        hit = (disc >= 0.0) & (t > HIT_EPSILON) & (t < best_t)
        best_t = np.where(hit, t, best_t)
        best_id = np.where(hit, index, best_id)
    return best_t, best_id


def _intersect_disk(origin: np.ndarray, dirs: np.ndarray, ground: GroundDisk) -> np.ndarray:
    """Hit distance on the ground disk per ray, inf on a miss"""
    dz = dirs[:, 2]
    with np.errstate(divide='ignore', invalid='ignore'):
        t = np.where(np.abs(dz) > 1e-12, (ground.height - origin[2]) / dz, np.inf)
    px = origin[0] + t * dirs[:, 0] - ground.center_xy[0]
    py = origin[1] + t * dirs[:, 1] - ground.center_xy[1]
    inside = (t > HIT_EPSILON) & (px * px + py * py <= ground.radius ** 2)
    return np.where(inside, t, np.inf)


def render_reference(scene: SyntheticScene, cam: CameraPose, env: EnvLight,
                     theta: float) -> Tuple[ImageBuffer, np.ndarray]:
    """Ray-cast the scene from an object-frame camera after a turntable rotation of theta"""
    light = object_frame_light(env, theta)
    origin, dirs = camera_rays(cam)
    count = dirs.shape[0]

    t_sphere, sphere_id = _intersect_spheres(origin, dirs, scene.spheres)
    t_disk = _intersect_disk(origin, dirs, scene.ground) if scene.ground is not None \
        else np.full(count, np.inf)

    on_disk = t_disk < t_sphere
    t_hit = np.where(on_disk, t_disk, t_sphere)
    hit = np.isfinite(t_hit)

    radiance = np.tile(np.asarray(scene.background, dtype=np.float64), (count, 1))
    if np.any(hit):
        points = origin + t_hit[hit, None] * dirs[hit]
        view = dirs[hit]
        normals = np.zeros_like(points)
        albedo = np.zeros_like(points)
        gloss = np.zeros(points.shape[0])
        exponent = np.ones(points.shape[0])

        disk_hits = on_disk[hit]
        if scene.ground is not None and np.any(disk_hits):
            # disk is two-sided, shade the face toward the viewer
            normals[disk_hits, 2] = np.where(view[disk_hits, 2] < 0.0, 1.0, -1.0)
            albedo[disk_hits] = scene.ground.albedo

        ids = sphere_id[hit]
        for index, sphere in enumerate(scene.spheres):
            mask = (~disk_hits) & (ids == index)
            if not np.any(mask):
                continue
            n = points[mask] - np.asarray(sphere.center)
            normals[mask] = n / np.linalg.norm(n, axis=1, keepdims=True)
            albedo[mask] = sphere.albedo
            gloss[mask] = sphere.gloss_strength
            exponent[mask] = sphere.gloss_exponent

        shaded = albedo / math.pi * irradiance(light, normals)
        glossy = gloss > 0.0
        if np.any(glossy):
            d, n = view[glossy], normals[glossy]
            mirror = d - 2.0 * np.sum(d * n, axis=1, keepdims=True) * n
            mirror /= np.linalg.norm(mirror, axis=1, keepdims=True)
            cosine = np.clip(np.sum(mirror * n, axis=1), -1.0, 1.0)
            lobe = gloss[glossy] * (0.5 * (1.0 + cosine)) ** exponent[glossy]
            shaded[glossy] += lobe[:, None] * eval_env(light, mirror)
        radiance[hit] = shaded

    image = ImageBuffer(radiance.reshape(cam.height, cam.width, 3))
    alpha = hit.reshape(cam.height, cam.width).astype(np.float64)
    return image, alpha


def render_world_frame(scene: SyntheticScene, entry: ScheduleEntry, env: EnvLight,
                       pivot: Sequence[float] = TURNTABLE_CENTER) -> Tuple[ImageBuffer, np.ndarray]:
    """Same frame seen from the tripod: the scene is turned, the light stays fixed"""
    return render_reference(scene.rotate(entry.turntable_angle, pivot), entry.world_pose, env, 0.0)


@dataclass(frozen=True, eq=False)
class DatasetEntry:
    schedule_entry: ScheduleEntry
    image: ImageBuffer
    mask: np.ndarray

    @property
    def theta(self) -> float:
        return self.schedule_entry.light_rotation

    @property
    def camera(self) -> CameraPose:
        return self.schedule_entry.object_frame_pose


@dataclass(eq=False)
class Dataset:
    """Captured frames with the light and scene they were rendered from"""
    entries: List[DatasetEntry]
    env: EnvLight
    scene_hash: str
    background: Vec3 = (0.0, 0.0, 0.0)
    scene_diameter: float = 1.0
    scene: Optional[SyntheticScene] = None

    def __post_init__(self):
        if not self.entries:
            raise InvalidInputError('Dataset needs at least one entry')
        sizes = {(e.image.width, e.image.height) for e in self.entries}
        if len(sizes) != 1:
            raise InvalidInputError(f'Dataset images differ in size: {sorted(sizes)}')

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def resolution(self) -> Tuple[int, int]:
        first = self.entries[0].image
        return first.width, first.height

    @property
    def theta_range(self) -> ThetaRange:
        return ThetaRange.from_angles([e.theta for e in self.entries])


def generate_dataset(scene: SyntheticScene, schedule: List[ScheduleEntry], env: EnvLight,
                     resolution: Optional[Tuple[int, int]] = None) -> Dataset:
    """Render every schedule entry in the object frame under its light rotation"""
    if not schedule:
        raise InvalidInputError('Cannot generate a dataset from an empty schedule')

    def render_entry(entry: ScheduleEntry) -> DatasetEntry:
        cam = entry.object_frame_pose
        if resolution is not None:
            cam = cam.with_resolution(*resolution)
            entry = ScheduleEntry(entry.camera_index, entry.world_pose.with_resolution(*resolution),
                                  entry.turntable_angle, entry.light_rotation, cam,
                                  entry.multiplicity, entry.segment_direction)
        image, mask = render_reference(scene, cam, env, entry.light_rotation)
        return DatasetEntry(entry, image, mask)

    logger.info(f'Rendering {len(schedule)} reference images')
    with concurrent.futures.ThreadPoolExecutor(max_workers=worker_threads()) as executor:
        entries = list(executor.map(render_entry, schedule))

    return Dataset(entries, env, scene.scene_hash(), scene.background, scene.diameter, scene)
