"""
Command-line entry point.

Exit codes: 0 success, 1 usage or invalid input, 2 schema mismatch, 3 numeric divergence.
"""
import argparse
import copy
import logging
import math
import sys
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from spinsplat import __version__
from spinsplat.config import load_config
from spinsplat.exceptions import (ConfigError, InvalidInputError, NumericDivergenceError,
                                  SchemaError)
from spinsplat.harness.builders import (env_from_config, planner_from_config,
                                        resolution_from_config, scene_from_config,
                                        train_from_config)
from spinsplat.harness.checkpoint import load_checkpoint, save_checkpoint
from spinsplat.harness.imageio import atomic_write, write_image, write_mask
from spinsplat.harness.manifest import (FrameRecord, Manifest, load_dataset, read_manifest,
                                        schedule_manifest, write_manifest)
from spinsplat.harness.sweep import SweepOrchestrator
from spinsplat.planning.coverage import coverage_stats
from spinsplat.planning.planner import Strategy, capture_time, generate_schedule, sample_count
from spinsplat.relight.combine import CombinationSpec, combine_rotations, extrapolation_warnings
from spinsplat.relight.distill import distill_sh, render_distilled
from spinsplat.rendering.reference import generate_dataset
from spinsplat.scene.models import CameraPose, parse_angle as parse_angle_text
from spinsplat.training.trainer import TrainMode, Trainer, evaluate

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_SCHEMA = 2
EXIT_NUMERIC = 3


class CliParser(argparse.ArgumentParser):
    """Usage errors exit with 1 so that 2 stays reserved for schema failures"""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def parse_angle(text: str) -> float:
    """argparse type for angles such as '0.2pi', '2*pi', '0.628' or 'inf'"""
    try:
        return parse_angle_text(text)
    except InvalidInputError as e:
        raise argparse.ArgumentTypeError(str(e)) from e


def parse_resolution(text: str) -> Tuple[int, int]:
    """Parse WIDTHxHEIGHT"""
    try:
        width, height = (int(v) for v in text.lower().split('x'))
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"resolution must look like 64x64, got '{text}'") from e
    if width < 1 or height < 1:
        raise argparse.ArgumentTypeError('resolution must be positive')
    return width, height


def _write_csv(path: Path, frame: pd.DataFrame):
    atomic_write(path, frame.to_csv(index=False, lineterminator="\n"))


def _strategy(args) -> Strategy:
    """Strategy named by --strategy and --s"""
    if args.strategy == 'static':
        return Strategy.static()
    if args.strategy == 'rotating':
        return Strategy.rotating()
    if args.s is None:
        raise InvalidInputError('--s is required for the swing strategy')
    return Strategy.swing(args.s)


def cmd_plan(args, config: Dict) -> int:
    """Plan a capture schedule and write it with its coverage table"""
    strategy = _strategy(args)
    frames = args.N
    if frames is None and args.n is None and strategy.angle == 0.0:
        frames = 1
    planner, rig = planner_from_config(
        config, num_cameras=args.M, angular_speed=args.v, pause=args.m,
        samples_per_radian=args.n, frames_per_segment=frames, time_budget=args.budget,
        centered=args.centered or None)
    if args.resolution is not None:
        rig.width, rig.height = args.resolution

    schedule = generate_schedule(planner, strategy, rig)
    resolved = planner.resolved(strategy)
    total_time = capture_time(resolved, strategy)
    samples = sample_count(resolved, strategy)

    out = Path(args.out)
    write_manifest(out / 'schedule.json', schedule_manifest(schedule, strategy.label))
    stats = coverage_stats(schedule)
    _write_csv(out / 'coverage.csv', stats.to_frame())
    print(f'T={total_time:.3f}s P={samples} M={resolved.num_cameras} '
          f'occupied_bins={stats.occupied_bins}')
    return EXIT_OK


def cmd_gen(args, config: Dict) -> int:
    """Render the reference frames of a schedule into a dataset directory"""
    manifest = read_manifest(args.schedule)
    scene, env = scene_from_config(config), env_from_config(config)
    dataset = generate_dataset(scene, manifest.schedule(), env,
                               resolution_from_config(config, args.resolution))

    out = Path(args.out)
    records = []
    for index, entry in enumerate(dataset.entries):
        name = f'frame_{index:04d}'
        paths = {'image': f'images/{name}.png', 'mask': f'masks/{name}.png'}
        write_image(out / paths['image'], entry.image)
        write_mask(out / paths['mask'], entry.mask)
        if not args.no_pfm:
            paths['pfm'] = f'pfm/{name}.pfm'
            write_image(out / paths['pfm'], entry.image)
        records.append(FrameRecord.from_entry(entry.schedule_entry, **paths))

    width, height = dataset.resolution
    write_manifest(out / 'manifest.json', Manifest(
        strategy=manifest.strategy,
        resolution=(width, height),
        scene_hash=dataset.scene_hash,
        scene=scene,
        scene_diameter=dataset.scene_diameter,
        background=tuple(scene.background),
        env_sh=[tuple(float(v) for v in row) for row in env.sh_coeffs],
        entries=records,
    ))
    print(f'Wrote {len(records)} frames to {out}')
    return EXIT_OK


def cmd_train(args, config: Dict) -> int:
    """Train a model on a dataset and save a checkpoint with its loss log"""
    dataset = load_dataset(args.data)
    train_config = train_from_config(config, iterations=args.iterations,
                                     num_gaussians=args.gaussians, seed=args.seed,
                                     progress=args.progress or None)
    mode = TrainMode(args.mode)
    model = Trainer(train_config).train(dataset, mode)

    out = Path(args.out)
    save_checkpoint(out / 'checkpoint.pkl', model)
    _write_csv(out / 'train_log.csv',
               pd.DataFrame({'iteration': np.arange(len(model.log)), 'loss': model.log}))
    print(f'Trained {mode.value} model: {len(model.cloud)} Gaussians, final loss {model.log[-1]:.6f}')
    return EXIT_OK


def _camera(args, config: Dict) -> CameraPose:
    """Object-frame camera from a dataset frame or from a rig position"""
    if args.data is not None:
        manifest = read_manifest(args.data)
        if not 0 <= args.frame < len(manifest.entries):
            raise InvalidInputError(f'Frame {args.frame} outside 0..{len(manifest.entries) - 1}')
        cam = manifest.entries[args.frame].object_frame_pose.to_pose()
    else:
        _, rig = planner_from_config(config)
        cam = rig.pose(math.radians(args.azimuth), args.elevation)
    if args.resolution is not None:
        cam = cam.with_resolution(*args.resolution)
    return cam


def cmd_render(args, config: Dict) -> int:
    """Render a checkpoint at one light rotation, a sweep of them, or from distilled colors"""
    model, distilled = load_checkpoint(args.checkpoint)
    cam = _camera(args, config)
    out = Path(args.out)

    if args.distilled:
        if distilled is None:
            raise InvalidInputError('Checkpoint has no distilled SH colors')
        write_image(out / 'distilled.png', render_distilled(model.cloud, distilled.colors, cam,
                                                            model.background))
        return EXIT_OK

    if args.theta_sweep:
        thetas = model.theta_range.evenly_spaced(args.theta_sweep)
    else:
        thetas = np.array([args.theta])
    if not np.all(np.isfinite(thetas)):
        raise InvalidInputError('Light rotation must be finite')
    for warning in extrapolation_warnings(model, thetas):
        print(f'warning: {warning}', file=sys.stderr)

    for index, theta in enumerate(thetas):
        image = model.render(cam, float(theta))
        write_image(out / f'render_{index:03d}.png', image)
        if args.pfm:
            write_image(out / f'render_{index:03d}.pfm', image)
    print(f'Rendered {len(thetas)} images to {out}')
    return EXIT_OK


def cmd_eval(args, config: Dict) -> int:
    """Score a checkpoint against a test dataset"""
    model, _ = load_checkpoint(args.checkpoint)
    mean, report = evaluate(model, load_dataset(args.data))
    _write_csv(Path(args.out) / 'eval.csv', report)
    print(f'mean PSNR {mean:.4f} dB over {len(report)} images')
    return EXIT_OK


def cmd_distill(args, config: Dict) -> int:
    """Bake SH colors for one light rotation into the checkpoint"""
    model, _ = load_checkpoint(args.checkpoint)
    distilled = distill_sh(model, args.theta, args.degree, args.samples)
    save_checkpoint(args.out, model, distilled)
    print(f'Distilled degree-{distilled.degree} SH at theta={args.theta:.6f}, '
          f'mean residual {float(np.mean(distilled.residual)):.6g}')
    return EXIT_OK


def cmd_combine(args, config: Dict) -> int:
    """Render a weighted combination of light rotations"""
    model, _ = load_checkpoint(args.checkpoint)
    spec = CombinationSpec.parse(args.terms)
    result = combine_rotations(model, spec, _camera(args, config))
    write_image(args.out, result.image)
    for warning in result.warnings:
        print(f'warning: {warning}', file=sys.stderr)
    return EXIT_OK


def _sweep_config(args, config: Dict) -> Dict:
    """Copy of the config with sweep command flags folded into their sections"""
    merged = copy.deepcopy(config)
    sweep = merged.setdefault('sweep', {}) or {}
    train = merged.setdefault('train', {}) or {}
    planner = merged.setdefault('planner', {}) or {}
    overrides = {
        'angles': getattr(args, 'angles', None),
        'time_budget': args.budget,
        'angular_speed': args.v,
        'pause': args.m,
        'samples_per_radian': args.n,
        'static_rate': args.static_rate,
        'seeds': args.seeds,
        'plot': args.plot or None,
    }
    sweep.update({k: v for k, v in overrides.items() if v is not None})
    if args.iterations is not None:
        train['iterations'] = args.iterations
    if args.gaussians is not None:
        train['num_gaussians'] = args.gaussians
    if args.resolution is not None:
        planner['width'], planner['height'] = args.resolution
    merged.update(sweep=sweep, train=train, planner=planner)
    return merged


def cmd_sweep(args, config: Dict) -> int:
    """Run the swing-angle sweep"""
    report = SweepOrchestrator(_sweep_config(args, config)).run_sweep(args.out)
    print(report.rows.to_string(index=False))
    best = report.best_angle()
    if best is not None:
        print(f'best s = {best / math.pi:.4g}pi')
    return EXIT_OK


def cmd_blur_sweep(args, config: Dict) -> int:
    """Score a static capture under increasingly blurred light"""
    frame = SweepOrchestrator(_sweep_config(args, config)).run_blur_sweep(args.betas, args.out)
    print(frame.to_string(index=False))
    return EXIT_OK


def cmd_ablate_m(args, config: Dict) -> int:
    """Vary the camera count at a fixed sample total"""
    orchestrator = SweepOrchestrator(_sweep_config(args, config))
    frame = orchestrator.run_ablate_m(args.counts, args.total, args.s, args.out)
    print(frame.to_string(index=False))
    return EXIT_OK


def _add_camera_flags(parser: argparse.ArgumentParser):
    parser.add_argument('--data', help='manifest to take the camera from')
    parser.add_argument('--frame', type=int, default=0)
    parser.add_argument('--azimuth', type=float, default=0.0, help='rig azimuth in degrees')
    parser.add_argument('--elevation', type=float, default=25.0, help='rig elevation in degrees')
    parser.add_argument('--resolution', type=parse_resolution)


def _add_sweep_flags(parser: argparse.ArgumentParser):
    parser.add_argument('--out', required=True)
    parser.add_argument('--budget', type=float)
    parser.add_argument('--v', type=float, help='turntable angular speed, rad/s')
    parser.add_argument('--m', type=float, help='pause between segments, seconds')
    parser.add_argument('--n', type=float, help='samples per radian')
    parser.add_argument('--static-rate', type=float, help='static captures per minute')
    parser.add_argument('--seeds', type=int, nargs='+')
    parser.add_argument('--iterations', type=int)
    parser.add_argument('--gaussians', type=int)
    parser.add_argument('--resolution', type=parse_resolution)
    parser.add_argument('--plot', action='store_true')


def build_parser() -> argparse.ArgumentParser:
    """Argument parser with one subcommand per pipeline stage"""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='YAML config file')
    common.add_argument('--verbose', action='store_true')

    parser = CliParser(prog='spinsplat', description='Swing-capture Gaussian splatting toolkit')
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    commands = parser.add_subparsers(dest='command', required=True, parser_class=CliParser)

    plan = commands.add_parser('plan', parents=[common], help='plan a capture schedule')
    plan.add_argument('--strategy', choices=['static', 'rotating', 'swing'], required=True)
    plan.add_argument('--s', type=parse_angle, help='swing angle, e.g. 0.2pi')
    plan.add_argument('--budget', type=float, help='capture time budget, seconds')
    plan.add_argument('--v', type=float, help='turntable angular speed, rad/s')
    plan.add_argument('--m', type=float, help='pause between segments, seconds')
    plan.add_argument('--M', type=int, help='camera positions')
    plan.add_argument('--N', type=int, help='frames per segment')
    plan.add_argument('--n', type=float, help='samples per radian')
    plan.add_argument('--centered', action='store_true')
    plan.add_argument('--resolution', type=parse_resolution)
    plan.add_argument('--out', required=True)
    plan.set_defaults(handler=cmd_plan)

    gen = commands.add_parser('gen', parents=[common], help='render a synthetic dataset')
    gen.add_argument('--schedule', required=True)
    gen.add_argument('--out', required=True)
    gen.add_argument('--resolution', type=parse_resolution)
    gen.add_argument('--no-pfm', action='store_true', help='skip float PFM copies')
    gen.set_defaults(handler=cmd_gen)

    train = commands.add_parser('train', parents=[common], help='train a model')
    train.add_argument('--data', required=True)
    train.add_argument('--out', required=True)
    train.add_argument('--mode', choices=[m.value for m in TrainMode], default=TrainMode.CONDITIONAL.value)
    train.add_argument('--iterations', type=int)
    train.add_argument('--gaussians', type=int)
    train.add_argument('--seed', type=int)
    train.add_argument('--progress', action='store_true')
    train.set_defaults(handler=cmd_train)

    render = commands.add_parser('render', parents=[common], help='render a trained model')
    render.add_argument('--checkpoint', required=True)
    render.add_argument('--out', required=True)
    render.add_argument('--theta', type=parse_angle, default=0.0)
    render.add_argument('--theta-sweep', type=int, help='render K rotations over the trained range')
    render.add_argument('--distilled', action='store_true')
    render.add_argument('--pfm', action='store_true')
    _add_camera_flags(render)
    render.set_defaults(handler=cmd_render)

    evaluate_cmd = commands.add_parser('eval', parents=[common], help='masked PSNR on a dataset')
    evaluate_cmd.add_argument('--checkpoint', required=True)
    evaluate_cmd.add_argument('--data', required=True)
    evaluate_cmd.add_argument('--out', required=True)
    evaluate_cmd.set_defaults(handler=cmd_eval)

    distill = commands.add_parser('distill', parents=[common], help='bake SH colors at one theta')
    distill.add_argument('--checkpoint', required=True)
    distill.add_argument('--theta', type=parse_angle, default=0.0)
    distill.add_argument('--degree', type=int, default=3)
    distill.add_argument('--samples', type=int, default=128)
    distill.add_argument('--out', required=True, help='checkpoint path to write')
    distill.set_defaults(handler=cmd_distill)

    combine = commands.add_parser('combine', parents=[common], help='relight with rotated lights')
    combine.add_argument('--checkpoint', required=True)
    combine.add_argument("--terms", required=True, help="'theta:r,g,b;theta:r,g,b'")
    combine.add_argument('--out', required=True, help='image path (.png or .pfm)')
    _add_camera_flags(combine)
    combine.set_defaults(handler=cmd_combine)

    sweep = commands.add_parser('sweep', parents=[common], help='swing-angle sweep')
    sweep.add_argument('--angles', type=parse_angle, nargs='+')
    _add_sweep_flags(sweep)
    sweep.set_defaults(handler=cmd_sweep)

    blur = commands.add_parser('blur-sweep', parents=[common], help='sweep per light blur level')
    blur.add_argument('--betas', type=float, nargs='+', required=True)
    blur.add_argument('--angles', type=parse_angle, nargs='+')
    _add_sweep_flags(blur)
    blur.set_defaults(handler=cmd_blur_sweep)

    ablate = commands.add_parser('ablate-m', parents=[common], help='vary camera count at fixed P')
    ablate.add_argument('--counts', type=int, nargs='+', required=True)
    ablate.add_argument('--total', type=int, default=140)
    ablate.add_argument('--s', type=parse_angle, default=0.2 * math.pi)
    _add_sweep_flags(ablate)
    ablate.set_defaults(handler=cmd_ablate_m)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Entry point; returns the process exit code"""
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format='%(asctime)s %(levelname)s %(name)s: %(message)s')
    try:
        config = load_config(args.config)
        return args.handler(args, config)
    except (ConfigError, InvalidInputError) as e:
        logger.error(str(e))
        return EXIT_USAGE
    except SchemaError as e:
        logger.error(str(e))
        return EXIT_SCHEMA
    except NumericDivergenceError as e:
        logger.error(f'{e} (iteration {e.iteration})')
        return EXIT_NUMERIC
