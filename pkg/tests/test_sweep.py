import math

import numpy as np
import pandas as pd
import pytest

from spinsplat.exceptions import ConfigError, InvalidInputError
from spinsplat.harness.sweep import (ROW_COLUMNS, STATUS_FAILED, STATUS_OK, SweepConfig,
                                     SweepOrchestrator, SweepReport, holdout_rig,
                                     holdout_schedules, strategy_for, sweep_plan)
from spinsplat.planning.planner import CameraRig, StrategyKind


def tiny_config(**sweep):
    values = {'angles': [0.0, 0.2 * math.pi], 'time_budget': 30.0, 'static_rate': 8.0,
              'test_cameras': 2, 'test_thetas': 2}
    values.update(sweep)
    return {
        'planner': {'width': 12, 'height': 12},
        'train': {'iterations': 2, 'num_gaussians': 12, 'log_interval': 0, 'ssim_window': 5},
        'sweep': values,
    }


def report_rows(values):
    rows = []
    for s, seed, static, rotating in values:
        rows.append({'s': s, 's_over_pi': s / math.pi, 'M': 3, 'P': 21, 'seed': seed,
                     'psnr_static': static, 'psnr_rotating': rotating, 'wall_time': 1.0,
                     'status': STATUS_OK if not math.isnan(static) else STATUS_FAILED})
    return pd.DataFrame(rows, columns=ROW_COLUMNS)


def test_default_plan_matches_budget_table():
    plan = sweep_plan(SweepConfig())
    assert plan['M'].tolist() == [50, 32, 26, 20, 17, 11, 6, 3]
    assert plan['P'].tolist() == [50, 56, 91, 140, 149, 192, 210, 210]
    np.testing.assert_allclose(plan['s_over_pi'], [0, 0.05, 0.1, 0.2, 0.25, 0.5, 1, 2])


def test_strategy_for_angle():
    assert strategy_for(0.0).kind is StrategyKind.STATIC
    assert strategy_for(2 * math.pi).kind is StrategyKind.ROTATING
    assert strategy_for(0.5).kind is StrategyKind.SWING


def test_sweep_config_validation():
    with pytest.raises(InvalidInputError):
        SweepConfig(angles=[0.0]).validate()
    with pytest.raises(InvalidInputError):
        SweepConfig(angles=[0.0, 7.0]).validate()
    with pytest.raises(InvalidInputError):
        SweepConfig(seeds=[]).validate()
    with pytest.raises(InvalidInputError):
        SweepConfig(metric='ssim').validate()
    with pytest.raises(ConfigError):
        SweepConfig.from_dict({'budget': 10})


def test_holdout_cameras_sit_between_training_positions():
    rig = CameraRig(elevations_deg=(10.0, 30.0))
    moved = holdout_rig(rig, 4)
    assert moved.azimuth_offset == pytest.approx(math.pi / 4)
    assert moved.elevations_deg == (20.0,)
    assert holdout_rig(CameraRig(elevations_deg=(15.0,)), 2).elevations_deg == (15.0,)

    static, rotating = holdout_schedules(rig, 3, 4)
    assert len(static) == 3 and len(rotating) == 12
    assert all(e.light_rotation == 0.0 for e in static)
    np.testing.assert_allclose(sorted({e.light_rotation for e in rotating}),
                               2 * math.pi * (np.arange(4) + 0.5) / 4)


def test_report_summary_best_angle_and_flatness():
    rows = report_rows([(0.0, 0, 20.0, 15.0), (0.0, 1, 22.0, 17.0),
                        (0.5, 0, 25.0, 24.0), (0.5, 1, 25.0, 26.0),
                        (1.0, 0, math.nan, math.nan)])
    report = SweepReport(rows, metric='psnr_static')
    summary = report.summary()
    assert summary['s'].tolist() == [0.0, 0.5]
    assert summary['runs'].tolist() == [2, 2]
    np.testing.assert_allclose(summary['psnr_static_mean'], [21.0, 25.0])
    np.testing.assert_allclose(summary['psnr_static_std'], [1.0, 0.0])
    assert report.best_angle() == 0.5
    assert not report.is_flat(1.0)
    assert report.is_flat(5.0)
    assert SweepReport(rows, metric='psnr_rotating').best_angle() == 0.5


def test_empty_report():
    report = SweepReport(report_rows([(0.0, 0, math.nan, math.nan)]))
    assert report.summary().empty
    assert report.best_angle() is None
    assert report.is_flat(0.1)


def test_report_files(tmp_path):
    report = SweepReport(report_rows([(0.0, 0, 20.0, 15.0), (0.5, 0, 21.0, 19.0)]))
    report.write(tmp_path, plot=True)
    assert (tmp_path / 'sweep.html').exists()
    written = pd.read_csv(tmp_path / 'sweep.csv')
    assert list(written.columns) == ROW_COLUMNS
    assert len(pd.read_csv(tmp_path / 'sweep_summary.csv')) == 2


def test_tiny_sweep_runs_every_job(tmp_path):
    orchestrator = SweepOrchestrator(tiny_config(seeds=[0, 1]))
    report = orchestrator.run_sweep(tmp_path)
    rows = report.rows
    assert len(rows) == 4
    assert (rows['status'] == STATUS_OK).all()
    assert rows['s'].tolist() == sorted(rows['s'].tolist())
    assert rows.loc[rows['s'] == 0.0, 'M'].tolist() == [4, 4]
    assert rows.loc[rows['s'] > 0, 'P'].tolist() == [35, 35]
    assert (tmp_path / 'sweep.csv').exists()
    assert (tmp_path / 's0.200pi_seed1' / 'eval_rotating.csv').exists()


def test_unplannable_angle_becomes_failed_row():
    # a full turn takes longer than the 30 s budget
    report = SweepOrchestrator(tiny_config(angles=[0.0, 2 * math.pi])).run_sweep()
    failed = report.rows[report.rows['status'] == STATUS_FAILED]
    assert failed['s'].tolist() == [2 * math.pi]
    assert failed['psnr_static'].isna().all()
    assert report.best_angle() == 0.0


def test_blur_sweep_and_camera_ablation(tmp_path):
    orchestrator = SweepOrchestrator(tiny_config())
    blur = orchestrator.run_blur_sweep([0.0, math.inf], tmp_path)
    assert blur['beta'].tolist() == [0.0, math.inf]
    assert set(blur.columns) == {'beta', 'best_s', 'best_s_over_pi', 'flat'}
    assert (tmp_path / 'blur_sweep.csv').exists()
    assert (tmp_path / 'beta_0' / 'sweep.csv').exists()

    ablation = orchestrator.run_ablate_m([2, 4], total_samples=8, out_dir=tmp_path)
    assert ablation['M'].tolist() == [2, 4]
    assert ablation['P'].tolist() == [8, 8]
    assert (tmp_path / 'ablate_m.csv').exists()
    with pytest.raises(InvalidInputError):
        orchestrator.run_ablate_m([0])


@pytest.mark.slow
def test_default_sweep_prefers_some_rotation(tmp_path):
    config = {'planner': {'width': 32, 'height': 32},
              'train': {'iterations': 800, 'num_gaussians': 300, 'log_interval': 0},
              'sweep': {'metric': 'psnr_rotating'}}
    report = SweepOrchestrator(config).run_sweep(tmp_path)
    assert (report.rows['status'] == STATUS_OK).all()
    assert report.best_angle() > 0.0
