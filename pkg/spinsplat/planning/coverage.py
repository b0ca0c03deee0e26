import logging
import math
from dataclasses import dataclass
from typing import List

import numpy as np
import pandas as pd

from spinsplat.exceptions import InvalidInputError
from spinsplat.scene.models import ScheduleEntry

logger = logging.getLogger(__name__)

DEFAULT_BINS = 36


@dataclass
class CoverageStats:
    """Occupancy of the (object-frame view azimuth x light rotation) sampling domain"""
    histogram: np.ndarray  # (azimuth bins, theta bins)
    azimuth_edges: np.ndarray
    theta_edges: np.ndarray
    min_occupancy: int
    max_occupancy: int
    mean_occupancy: float
    occupied_bins: int
    theta_span: float

    @property
    def total(self) -> int:
        return int(self.histogram.sum())

    def to_frame(self) -> pd.DataFrame:
        """Long-form table of occupied bins for CSV export"""
        az_idx, th_idx = np.nonzero(self.histogram)
        return pd.DataFrame({
            'azimuth_bin': az_idx,
            'theta_bin': th_idx,
            'azimuth_lo': self.azimuth_edges[az_idx],
            'theta_lo': self.theta_edges[th_idx],
            'count': self.histogram[az_idx, th_idx].astype(int),
        })


def _wrap(angles: np.ndarray) -> np.ndarray:
    return np.mod(angles, 2.0 * math.pi)


def view_azimuth(entry: ScheduleEntry) -> float:
    """Azimuth of the object-frame camera center about the turntable axis"""
    center = entry.object_frame_pose.center
    return math.atan2(center[1], center[0])


def coverage_stats(schedule: List[ScheduleEntry], bins: int = DEFAULT_BINS) -> CoverageStats:
    """Deterministic 2D histogram of a schedule over view azimuth and theta"""
    if not schedule:
        raise InvalidInputError('Coverage needs a non-empty schedule')

    azimuths = _wrap(np.array([view_azimuth(e) for e in schedule]))
    thetas = np.array([e.light_rotation for e in schedule])
    edges = np.linspace(0.0, 2.0 * math.pi, bins + 1)

    # right edge folds back to 0 so a wrapped 2*pi lands in the first bin
    az_bins = np.minimum(np.searchsorted(edges, azimuths, side='right') - 1, bins - 1) % bins
    th_bins = np.minimum(np.searchsorted(edges, _wrap(thetas), side='right') - 1, bins - 1) % bins
    histogram = np.zeros((bins, bins), dtype=np.int64)
    np.add.at(histogram, (az_bins, th_bins), 1)

    occupied = histogram[histogram > 0]
    stats = CoverageStats(
        histogram=histogram,
        azimuth_edges=edges[:-1],
        theta_edges=edges[:-1],
        min_occupancy=int(occupied.min()),
        max_occupancy=int(occupied.max()),
        mean_occupancy=float(occupied.mean()),
        occupied_bins=int(occupied.size),
        theta_span=float(thetas.max() - thetas.min()),
    )
    logger.debug(f'Coverage: {stats.occupied_bins} occupied bins, theta span {stats.theta_span:.4f}')
    return stats
