import math

import numpy as np
import pytest

from spinsplat.exceptions import BudgetError, InvalidInputError
from spinsplat.planning.planner import (CameraRig, PlannerConfig, Strategy, StrategyKind,
                                        capture_time, generate_schedule, sample_count,
                                        solve_budget)

SPEED = 0.2 * math.pi / 3.15
PAUSE = 3.0
SAMPLES_PER_RADIAN = 35.0 / math.pi


def swing_config(**overrides):
    values = dict(angular_speed=SPEED, pause=PAUSE, samples_per_radian=SAMPLES_PER_RADIAN,
                  time_budget=120.0)
    values.update(overrides)
    return PlannerConfig(**values)


def test_two_minute_budget_fits_twenty_swing_positions():
    assert solve_budget(120.0, 0.2 * math.pi, 0.19947, 3.0) == 20
    config = PlannerConfig(angular_speed=0.19947, pause=3.0, frames_per_segment=7,
                           time_budget=120.0)
    schedule = generate_schedule(config, Strategy.swing(0.2 * math.pi), CameraRig())
    assert len({e.camera_index for e in schedule}) == 20
    assert len(schedule) == 140


@pytest.mark.parametrize('s_over_pi,cameras,samples', [
    (0.05, 32, 56), (0.1, 26, 91), (0.2, 20, 140), (0.25, 17, 149),
    (0.5, 11, 192), (1.0, 6, 210),
])
def test_budget_table(s_over_pi, cameras, samples):
    strategy = Strategy.swing(s_over_pi * math.pi)
    config = swing_config().resolved(strategy)
    assert config.num_cameras == cameras
    assert sample_count(config, strategy) == samples
    assert capture_time(config, strategy) <= 120.0 + 1e-6


def test_full_rotation_under_budget():
    strategy = Strategy.rotating()
    config = swing_config().resolved(strategy)
    assert config.num_cameras == 3
    assert sample_count(config, strategy) == 210


def test_sample_count_never_decreases_with_swing_angle():
    counts = [sample_count(swing_config(), Strategy.swing(k * math.pi))
              for k in (0.05, 0.1, 0.2, 0.25, 0.5, 1.0)]
    counts.append(sample_count(swing_config(), Strategy.rotating()))
    assert counts == sorted(counts)


def test_capture_time_formula():
    config = PlannerConfig(num_cameras=4, angular_speed=0.5, pause=2.0, frames_per_segment=3)
    assert capture_time(config, Strategy.swing(1.0)) == pytest.approx(4 * 2.0 + 3 * 2.0)
    assert capture_time(config, Strategy.static()) == pytest.approx(6.0)


def test_budget_too_small_for_one_segment():
    with pytest.raises(BudgetError):
        solve_budget(1.0, math.pi, 0.2, 3.0)
    with pytest.raises(InvalidInputError):
        solve_budget(10.0, 0.0, 0.2, 0.0)
    with pytest.raises(InvalidInputError):
        solve_budget(10.0, 1.0, 0.0, 1.0)


def test_static_schedule_has_zero_rotation():
    config = PlannerConfig(num_cameras=8, frames_per_segment=1)
    schedule = generate_schedule(config, Strategy.static(), CameraRig())
    assert len(schedule) == 8
    assert all(e.light_rotation == 0.0 and e.turntable_angle == 0.0 for e in schedule)
    assert sample_count(config, Strategy.static()) == 8


def test_static_repeats_are_counted_by_multiplicity():
    config = PlannerConfig(num_cameras=5, frames_per_segment=3)
    schedule = generate_schedule(config, Strategy.static(), CameraRig())
    assert len(schedule) == 5
    assert sum(e.multiplicity for e in schedule) == 15 == sample_count(config, Strategy.static())


def test_rotating_schedule_covers_full_turn():
    config = PlannerConfig(num_cameras=8, frames_per_segment=60)
    schedule = generate_schedule(config, Strategy.rotating(), CameraRig())
    assert len(schedule) == 480
    thetas = sorted({round(e.light_rotation, 12) for e in schedule})
    np.testing.assert_allclose(thetas, 2 * math.pi * np.arange(60) / 60)


def test_swing_angles_span_the_segment():
    config = PlannerConfig(num_cameras=3, frames_per_segment=7)
    schedule = generate_schedule(config, Strategy.swing(0.2 * math.pi), CameraRig())
    first = [e.light_rotation for e in schedule if e.camera_index == 0]
    np.testing.assert_allclose(first, np.linspace(0.0, 0.2 * math.pi, 7))
    assert [e.segment_direction for e in schedule[::7]] == [1, -1, 1]


def test_centered_swing_is_symmetric():
    config = PlannerConfig(num_cameras=2, frames_per_segment=5, centered=True)
    schedule = generate_schedule(config, Strategy.swing(0.4), CameraRig())
    first = [e.light_rotation for e in schedule if e.camera_index == 0]
    np.testing.assert_allclose(first, np.linspace(-0.2, 0.2, 5), atol=1e-15)


def test_object_frame_camera_counter_rotates():
    rig = CameraRig()
    config = PlannerConfig(num_cameras=1, frames_per_segment=2)
    schedule = generate_schedule(config, Strategy.swing(0.5), rig)
    start, end = (e.object_frame_pose.center for e in schedule)
    azimuth = math.atan2(end[1], end[0]) - math.atan2(start[1], start[0])
    assert azimuth == pytest.approx(-0.5)


def test_rig_positions_are_evenly_spaced_in_azimuth():
    poses = CameraRig(elevations_deg=(20.0,)).poses(4)
    azimuths = [math.atan2(p.center[1], p.center[0]) for p in poses]
    np.testing.assert_allclose(np.mod(np.diff(azimuths), 2 * math.pi), [math.pi / 2] * 3)


def test_config_validation():
    with pytest.raises(InvalidInputError):
        PlannerConfig(num_cameras=2, samples_per_radian=1.0, frames_per_segment=2).validate()
    with pytest.raises(InvalidInputError):
        PlannerConfig(num_cameras=2).validate()
    with pytest.raises(InvalidInputError):
        PlannerConfig(frames_per_segment=2).validate()
    with pytest.raises(InvalidInputError):
        Strategy.swing(7.0)


def test_strategy_angles():
    assert Strategy.static().angle == 0.0
    assert Strategy.rotating().angle == pytest.approx(2 * math.pi)
    assert Strategy.swing(0.3).kind is StrategyKind.SWING
    assert Strategy.swing(0.2 * math.pi).label == 'swing(0.2pi)'
