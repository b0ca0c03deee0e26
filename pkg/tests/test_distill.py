import math

import numpy as np
import pytest

from spinsplat.exceptions import InvalidInputError, SingularBasisError
from spinsplat.planning.planner import CameraRig, PlannerConfig, Strategy, generate_schedule
from spinsplat.radiance.mlp import MlpParams
from spinsplat.radiance.sh_colors import ShColors
from spinsplat.relight.distill import distill_sh, fit_sh, render_distilled
from spinsplat.rendering.reference import generate_dataset
from spinsplat.scene.models import ThetaRange
from spinsplat.scene.sh import fibonacci_sphere, sh_basis
from spinsplat.training.losses import psnr
from spinsplat.training.trainer import TrainConfig, TrainedModel, TrainMode, train


@pytest.fixture
def model(make_cloud, rng):
    return TrainedModel(TrainMode.CONDITIONAL, make_cloud(rng, 6), mlp=MlpParams.init(rng, hidden=16),
                        theta_range=ThetaRange(0.0, 1.0))


def test_fit_recovers_band_limited_colors(rng):
    dirs = fibonacci_sphere(64)
    truth = rng.normal(size=(3, 9, 3))
    samples = np.einsum('sk,nkc->nsc', sh_basis(dirs, 2), truth)
    coeffs, residual = fit_sh(samples, dirs, 2)
    np.testing.assert_allclose(coeffs, truth, atol=1e-10)
    np.testing.assert_allclose(residual, 0.0, atol=1e-10)

    higher, _ = fit_sh(samples, dirs, 3)
    np.testing.assert_allclose(higher[:, :9], truth, atol=1e-10)
    np.testing.assert_allclose(higher[:, 9:], 0.0, atol=1e-10)


def test_fit_is_the_least_squares_optimum(rng):
    dirs = fibonacci_sphere(40)
    samples = rng.uniform(0.0, 1.0, size=(2, 40, 3))
    coeffs, residual = fit_sh(samples, dirs, 2)
    basis = sh_basis(dirs, 2)

    def rms(c):
        return np.sqrt(np.mean((np.einsum('sk,nkc->nsc', basis, c) - samples) ** 2, axis=(1, 2)))

    np.testing.assert_allclose(rms(coeffs), residual, rtol=1e-12)
    for index in np.ndindex(coeffs.shape):
        for step in (1e-3, -1e-3):
            moved = coeffs.copy()
            moved[index] += step
            assert rms(moved)[index[0]] >= residual[index[0]] - 1e-12


def test_fit_rejects_underdetermined_bases():
    with pytest.raises(SingularBasisError):
        fit_sh(np.zeros((1, 3, 3)), fibonacci_sphere(3), 1)
    equator = np.array([[math.cos(a), math.sin(a), 0.0] for a in np.linspace(0, 2 * math.pi, 20)])
    with pytest.raises(SingularBasisError):
        fit_sh(np.zeros((1, 20, 3)), equator, 2)


def test_residual_never_grows_with_degree(model):
    residuals = [distill_sh(model, 0.3, degree=d).residual for d in range(5)]
    for lower, higher in zip(residuals, residuals[1:]):
        assert np.all(higher <= lower + 1e-12)


def test_zero_decoder_distills_to_flat_gray(make_cloud, rng):
    flat = TrainedModel(TrainMode.CONDITIONAL, make_cloud(rng, 3), mlp=MlpParams.zeros(hidden=4))
    distilled = distill_sh(flat, 1.0, degree=2)
    expected = ShColors.constant(3, degree=2).coeffs
    np.testing.assert_allclose(distilled.colors.coeffs, expected, atol=1e-12)
    np.testing.assert_allclose(distilled.residual, 0.0, atol=1e-12)
    assert distilled.degree == 2 and distilled.theta_star == 1.0


def test_distilled_render_tracks_the_decoder(model, small_camera):
    distilled = distill_sh(model, 0.5, degree=4)
    reference = model.render(small_camera, 0.5)
    exported = render_distilled(model.cloud, distilled.colors, small_camera)
    assert psnr(exported, reference) > 20.0


def test_distill_validation(model, make_cloud, rng):
    baseline = TrainedModel(TrainMode.SH_BASELINE, make_cloud(rng, 2), sh=ShColors.constant(2))
    with pytest.raises(InvalidInputError):
        distill_sh(baseline, 0.0)
    with pytest.raises(InvalidInputError):
        distill_sh(model, 0.0, degree=5)
    with pytest.raises(InvalidInputError):
        distill_sh(model, math.nan)
    with pytest.raises(SingularBasisError):
        distill_sh(model, 0.0, degree=3, samples=8)


@pytest.mark.slow
def test_distilled_trained_model_matches_decoder(scene, env):
    rig = CameraRig(width=32, height=32)
    schedule = generate_schedule(PlannerConfig(num_cameras=12, frames_per_segment=5),
                                 Strategy.swing(0.2 * math.pi), rig)
    data = generate_dataset(scene, schedule, env)
    model = train(data, TrainConfig(iterations=1000, num_gaussians=300, log_interval=0))
    distilled = distill_sh(model, 0.1 * math.pi, degree=3)
    for entry in data.entries[:6]:
        reference = model.render(entry.camera, 0.1 * math.pi)
        exported = render_distilled(model.cloud, distilled.colors, entry.camera, model.background)
        assert psnr(exported, reference) >= 30.0
