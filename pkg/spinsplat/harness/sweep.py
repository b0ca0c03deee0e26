"""
Swing-angle sweeps under a fixed capture-time budget.

Each row plans a schedule for one swing angle, renders it, trains a conditional model and
scores it on two held-out sets shared by every row: offset cameras under the captured
light (static) and the same cameras under a grid of light rotations (rotating).
"""
import concurrent.futures
import logging
import math
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import plotly.express as px

from spinsplat.config import section, worker_threads
from spinsplat.exceptions import ConfigError, InvalidInputError
from spinsplat.harness.builders import (env_from_config, planner_from_config,
                                        scene_from_config, train_from_config)
from spinsplat.harness.imageio import PathLike, atomic_write
from spinsplat.planning.planner import (FULL_TURN, CameraRig, PlannerConfig, Strategy,
                                        generate_schedule, sample_count)
from spinsplat.rendering.reference import Dataset, generate_dataset
from spinsplat.scene.models import ScheduleEntry
from spinsplat.scene.sh import EnvLight
from spinsplat.training.trainer import TrainMode, Trainer, evaluate

logger = logging.getLogger(__name__)

SWEEP_ANGLES = tuple(k * math.pi for k in (0.0, 0.05, 0.1, 0.2, 0.25, 0.5, 1.0, 2.0))
STATUS_OK = 'OK'
STATUS_FAILED = 'FAILED'
METRICS = ('psnr_static', 'psnr_rotating')
ROW_COLUMNS = ['s', 's_over_pi', 'M', 'P', 'seed', 'psnr_static', 'psnr_rotating',
               'wall_time', 'status']


@dataclass
class SweepConfig:
    """
    Sweep settings.

    samples_per_radian (n) sets P = round(M * s * n) for swing rows; the static row
    instead records static_rate frames per minute of budget, one per camera position.
    """
    angles: List[float] = field(default_factory=lambda: list(SWEEP_ANGLES))
    time_budget: float = 120.0
    angular_speed: float = 0.2 * math.pi / 3.15
    pause: float = 3.0
    samples_per_radian: float = 35.0 / math.pi
    static_rate: float = 25.0
    seeds: List[int] = field(default_factory=lambda: [0])
    test_cameras: int = 6
    test_thetas: int = 4
    centered: bool = False
    metric: str = 'psnr_static'
    flat_tolerance: float = 0.5
    plot: bool = False

    def validate(self):
        """Raise InvalidInputError on an unusable sweep setup"""
        if len(self.angles) < 2:
            raise InvalidInputError('A sweep needs at least two swing angles')
        if any(not 0.0 <= s <= FULL_TURN + 1e-12 for s in self.angles):
            raise InvalidInputError('Swing angles must lie in [0, 2pi]')
        if not self.seeds:
            raise InvalidInputError('A sweep needs at least one seed')
        if self.metric not in METRICS:
            raise InvalidInputError(f'metric must be one of {METRICS}')
        if self.test_cameras < 1 or self.test_thetas < 1:
            raise InvalidInputError('Test sets need at least one camera and one light rotation')

    @classmethod
    def from_dict(cls, values: Dict) -> 'SweepConfig':
        """SweepConfig from the sweep section, rejecting unknown keys"""
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f'Unknown sweep settings: {sorted(unknown)}')
        return cls(**values)


def strategy_for(s: float) -> Strategy:
    """Static for s=0, rotating for a full turn, swing otherwise"""
    if s == 0.0:
        return Strategy.static()
    if s >= FULL_TURN - 1e-12:
        return Strategy.rotating()
    return Strategy.swing(s)


def plan_row(s: float, sweep: SweepConfig) -> Tuple[Strategy, PlannerConfig]:
    """Planner settings for one sweep angle under the shared time budget"""
    strategy = strategy_for(s)
    if strategy.angle == 0.0:
        frames = int(round(sweep.static_rate * sweep.time_budget / 60.0))
        planner = PlannerConfig(num_cameras=max(1, frames), angular_speed=sweep.angular_speed,
                                pause=sweep.pause, frames_per_segment=1)
        return strategy, planner
    planner = PlannerConfig(angular_speed=sweep.angular_speed, pause=sweep.pause,
                            samples_per_radian=sweep.samples_per_radian,
                            time_budget=sweep.time_budget, centered=sweep.centered)
    return strategy, planner.resolved(strategy)


def sweep_plan(sweep: SweepConfig) -> pd.DataFrame:
    """M and P per angle without rendering or training"""
    rows = []
    for s in sweep.angles:
        strategy, planner = plan_row(s, sweep)
        rows.append({'s': s, 's_over_pi': s / math.pi, 'strategy': strategy.label,
                     'M': planner.num_cameras, 'P': sample_count(planner, strategy)})
    return pd.DataFrame(rows)


def holdout_rig(rig: CameraRig, count: int) -> CameraRig:
    """Held-out cameras halfway between the training azimuths"""
    elevations = rig.elevations_deg
    mid = tuple((a + b) / 2.0 for a, b in zip(elevations, elevations[1:])) or elevations
    return replace(rig, azimuth_offset=rig.azimuth_offset + math.pi / count, elevations_deg=mid)


def holdout_schedules(rig: CameraRig, cameras: int, thetas: int) -> Tuple[List[ScheduleEntry], List[ScheduleEntry]]:
    """Static and rotating held-out schedules seen from between the training cameras"""
    poses = holdout_rig(rig, cameras).poses(cameras)
    static = [ScheduleEntry.create(i, pose, 0.0, rig.pivot) for i, pose in enumerate(poses)]
    rotating = [
        ScheduleEntry.create(i, pose, FULL_TURN * (j + 0.5) / thetas, rig.pivot)
        for i, pose in enumerate(poses)
        for j in range(thetas)
    ]
    return static, rotating


def _write_csv(path: PathLike, frame: pd.DataFrame):
    atomic_write(path, frame.to_csv(index=False, lineterminator="\n"))


@dataclass
class SweepReport:
    rows: pd.DataFrame
    metric: str = 'psnr_static'

    def ok_rows(self) -> pd.DataFrame:
        return self.rows[self.rows['status'] == STATUS_OK]

    def summary(self) -> pd.DataFrame:
        """Mean and spread of both metrics per angle across seeds"""
        ok = self.ok_rows()
        if ok.empty:
            return pd.DataFrame(columns=['s', 's_over_pi', 'M', 'P', 'runs'])
        grouped = ok.groupby('s', sort=True)
        summary = grouped.agg(s_over_pi=('s_over_pi', 'first'), M=('M', 'first'),
                              P=('P', 'first'), runs=('seed', 'count'))
        for metric in METRICS:
            summary[f'{metric}_mean'] = grouped[metric].mean()
            summary[f'{metric}_std'] = grouped[metric].std(ddof=0)
        return summary.reset_index()

    def best_angle(self) -> Optional[float]:
        """Angle with the best mean score, None when every job failed"""
        summary = self.summary()
        if summary.empty:
            return None
        return float(summary.loc[summary[f'{self.metric}_mean'].idxmax(), 's'])

    def is_flat(self, tolerance: float) -> bool:
        """True when no angle beats another by more than the tolerance"""
        means = self.summary().get(f'{self.metric}_mean')
        if means is None or len(means) < 2:
            return True
        return float(means.max() - means.min()) < tolerance

    def figure(self):
        """Line plot of both test metrics against the swing angle"""
        summary = self.summary()
        long = summary.melt(id_vars=['s_over_pi'], value_vars=[f'{m}_mean' for m in METRICS],
                            var_name='test_set', value_name='psnr')
        return px.line(long, x='s_over_pi', y='psnr', color='test_set', markers=True,
                       title='PSNR vs swing angle',
                       labels={'s_over_pi': 'swing angle / pi', 'psnr': 'PSNR (dB)'})

    def write(self, out_dir: PathLike, plot: bool = False):
        """Write the per-job rows, the summary and optionally the plot"""
        out_dir = Path(out_dir)
        _write_csv(out_dir / 'sweep.csv', self.rows[ROW_COLUMNS])
        _write_csv(out_dir / 'sweep_summary.csv', self.summary())
        if plot and not self.ok_rows().empty:
            atomic_write(out_dir / 'sweep.html', self.figure().to_html(include_plotlyjs='cdn'))
        logger.info(f'Sweep report written to {out_dir}')


class SweepOrchestrator:
    """Plan, render, train and score every (angle, seed) job of a sweep"""

    def __init__(self, config: Dict):
        self.config = config
        self.sweep = SweepConfig.from_dict(section(config, 'sweep'))
        self.sweep.validate()
        _, self.rig = planner_from_config(config)
        self.scene = scene_from_config(config)
        self.env = env_from_config(config)
        self.train_config = train_from_config(config)

    def run_sweep(self, out_dir: Optional[PathLike] = None, env: Optional[EnvLight] = None) -> SweepReport:
        """Train and score every (angle, seed) job, keeping failed jobs as rows"""
        env = env or self.env
        sweep = self.sweep
        start = time.perf_counter()

        logger.info('Step 1: Planning schedules...')
        for s in sweep.angles:
            try:
                strategy, planner = plan_row(s, sweep)
            except InvalidInputError as e:
                logger.warning(f'  s={s / math.pi:.3g}pi cannot be planned: {e}')
                continue
            logger.info(f'  s={s / math.pi:.3g}pi {strategy.label}: M={planner.num_cameras}, '
                        f'P={sample_count(planner, strategy)}')

        logger.info('Step 2: Rendering held-out test sets...')
        static_test, rotating_test = self._test_sets(env)

        logger.info('Step 3: Training sweep jobs...')
        jobs = [(s, seed) for s in sweep.angles for seed in sweep.seeds]
        rows = []
        with concurrent.futures.ThreadPoolExecutor(max_workers=worker_threads()) as executor:
            futures = {
                executor.submit(self._run_job, s, seed, env, static_test, rotating_test, out_dir): (s, seed)
                for s, seed in jobs
            }
            for future in concurrent.futures.as_completed(futures):
                s, seed = futures[future]
                try:
                    rows.append(future.result())
                except Exception as e:
                    logger.error(f'Sweep job s={s / math.pi:.3g}pi seed={seed} failed: {e}', exc_info=True)
                    rows.append(self._failed_row(s, seed))

        logger.info('Step 4: Writing report...')
        frame = pd.DataFrame(rows, columns=ROW_COLUMNS).sort_values(['s', 'seed'], kind='stable')
        report = SweepReport(frame.reset_index(drop=True), sweep.metric)
        if out_dir is not None:
            report.write(out_dir, sweep.plot)

        best = report.best_angle()
        if best is not None:
            logger.info(f'Best swing angle by {sweep.metric}: {best / math.pi:.3g}pi')
        logger.info(f'Sweep completed in {time.perf_counter() - start:.2f} seconds')
        return report

    def run_blur_sweep(self, betas: Sequence[float], out_dir: Optional[PathLike] = None) -> pd.DataFrame:
        """Repeat the sweep under progressively blurred light"""
        if not betas:
            raise InvalidInputError('Blur sweep needs at least one blur level')
        rows = []
        for beta in betas:
            logger.info(f'Blur level beta={beta}')
            level_dir = Path(out_dir) / f'beta_{beta:g}' if out_dir is not None else None
            report = self.run_sweep(level_dir, env=self.env.blurred(beta))
            best = report.best_angle()
            rows.append({
                'beta': beta,
                'best_s': best,
                'best_s_over_pi': best / math.pi if best is not None else None,
                'flat': report.is_flat(self.sweep.flat_tolerance),
            })
        frame = pd.DataFrame(rows)
        if out_dir is not None:
            _write_csv(Path(out_dir) / 'blur_sweep.csv', frame)
        return frame

    def run_ablate_m(self, counts: Sequence[int], total_samples: int = 140, s: float = 0.2 * math.pi,
                     out_dir: Optional[PathLike] = None) -> pd.DataFrame:
        """Vary the number of camera positions with the sample count held near constant"""
        if not counts or any(m < 1 for m in counts):
            raise InvalidInputError('Camera counts must be positive')
        static_test, rotating_test = self._test_sets(self.env)
        strategy = strategy_for(s)
        rows = []
        for cameras in counts:
            frames = max(1, int(round(total_samples / cameras)))
            planner = PlannerConfig(num_cameras=cameras, angular_speed=self.sweep.angular_speed,
                                    pause=self.sweep.pause, frames_per_segment=frames,
                                    centered=self.sweep.centered)
            for seed in self.sweep.seeds:
                row = self._train_and_score(strategy, planner, seed, self.env, static_test, rotating_test)
                row.update({'s': s, 's_over_pi': s / math.pi, 'seed': seed})
                rows.append(row)
        frame = pd.DataFrame(rows)[ROW_COLUMNS]
        if out_dir is not None:
            _write_csv(Path(out_dir) / 'ablate_m.csv', frame)
        return frame

    def _test_sets(self, env: EnvLight) -> Tuple[Dataset, Dataset]:
        static, rotating = holdout_schedules(self.rig, self.sweep.test_cameras, self.sweep.test_thetas)
        return generate_dataset(self.scene, static, env), generate_dataset(self.scene, rotating, env)

    def _run_job(self, s: float, seed: int, env: EnvLight, static_test: Dataset,
                 rotating_test: Dataset, out_dir: Optional[PathLike]) -> Dict:
        strategy, planner = plan_row(s, self.sweep)
        row = self._train_and_score(strategy, planner, seed, env, static_test, rotating_test, out_dir)
        row.update({'s': s, 's_over_pi': s / math.pi, 'seed': seed})
        logger.info(f"Job s={s / math.pi:.3g}pi seed={seed}: static {row['psnr_static']:.2f} dB, "
                    f"rotating {row['psnr_rotating']:.2f} dB")
        return row

    def _train_and_score(self, strategy: Strategy, planner: PlannerConfig, seed: int, env: EnvLight,
                         static_test: Dataset, rotating_test: Dataset,
                         out_dir: Optional[PathLike] = None) -> Dict:
        """Capture, train and score one job"""
        start = time.perf_counter()
        schedule = generate_schedule(planner, strategy, self.rig)
        dataset = generate_dataset(self.scene, schedule, env)
        model = Trainer(replace(self.train_config, seed=seed, progress=False)).train(
            dataset, TrainMode.CONDITIONAL)
        static_psnr, static_report = evaluate(model, static_test)
        rotating_psnr, rotating_report = evaluate(model, rotating_test)

        if out_dir is not None:
            job_dir = Path(out_dir) / f's{strategy.angle / math.pi:.3f}pi_seed{seed}'
            _write_csv(job_dir / 'eval_static.csv', static_report)
            _write_csv(job_dir / 'eval_rotating.csv', rotating_report)

        return {
            'M': planner.resolved(strategy).num_cameras,
            'P': int(sum(e.multiplicity for e in schedule)),
            'psnr_static': static_psnr,
            'psnr_rotating': rotating_psnr,
            'wall_time': time.perf_counter() - start,
            'status': STATUS_OK,
        }

    def _failed_row(self, s: float, seed: int) -> Dict:
        """Row for a job that raised"""
        try:
            strategy, planner = plan_row(s, self.sweep)
            cameras, samples = planner.num_cameras, sample_count(planner, strategy)
        except InvalidInputError:
            cameras, samples = 0, 0
        return {'s': s, 's_over_pi': s / math.pi, 'M': cameras, 'P': samples, 'seed': seed,
                'psnr_static': np.nan, 'psnr_rotating': np.nan, 'wall_time': np.nan,
                'status': STATUS_FAILED}
