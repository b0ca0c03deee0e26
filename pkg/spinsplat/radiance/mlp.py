"""
Shared radiance decoder: per-Gaussian color = MLP(latent | view direction, light rotation).

Inputs are encoded as latent (8) + view direction with one sin/cos band (9) + light
rotation as (sin, cos) (2). Two rectified hidden layers of width 128, sigmoid output.
Row-vector convention throughout: h = x @ W + b.
"""
import logging
import math
from dataclasses import dataclass
from typing import Dict, Tuple, Union

import numpy as np

from spinsplat.exceptions import InvalidInputError
from spinsplat.radiance.views import view_direction_backward, view_directions
from spinsplat.scene.models import LATENT_DIM, CameraPose, GaussianCloud
from spinsplat.scene.sh import UNIT_TOLERANCE

logger = logging.getLogger(__name__)

VIEW_ENCODING_DIM = 9
THETA_ENCODING_DIM = 2
INPUT_DIM = LATENT_DIM + VIEW_ENCODING_DIM + THETA_ENCODING_DIM
HIDDEN_DIM = 128
OUTPUT_DIM = 3
LATENT_INIT_STD = 0.1
THETA_STEPS = float(2 ** 32)
LAYER_NAMES = ('w1', 'b1', 'w2', 'b2', 'w3', 'b3')


@dataclass(eq=False)
class MlpParams:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray

    def __post_init__(self):
        shapes = self.expected_shapes(np.shape(self.w1)[1] if np.ndim(self.w1) == 2 else HIDDEN_DIM)
        for name in LAYER_NAMES:
            value = np.asarray(getattr(self, name), dtype=np.float64)
            if value.shape != shapes[name]:
                raise InvalidInputError(f'MLP {name} must be {shapes[name]}, got {value.shape}')
            if not np.all(np.isfinite(value)):
                raise InvalidInputError(f'MLP {name} contains non-finite values')
            setattr(self, name, value)

    @staticmethod
    def expected_shapes(hidden: int = HIDDEN_DIM) -> Dict[str, Tuple[int, ...]]:
        return {'w1': (INPUT_DIM, hidden), 'b1': (hidden,), 'w2': (hidden, hidden),
                'b2': (hidden,), 'w3': (hidden, OUTPUT_DIM), 'b3': (OUTPUT_DIM,)}

    @classmethod
    def init(cls, rng: np.random.Generator, hidden: int = HIDDEN_DIM) -> 'MlpParams':
        """Glorot-uniform weights, zero biases"""
        def glorot(fan_in, fan_out):
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            return rng.uniform(-limit, limit, size=(fan_in, fan_out))

        return cls(glorot(INPUT_DIM, hidden), np.zeros(hidden),
                   glorot(hidden, hidden), np.zeros(hidden),
                   glorot(hidden, OUTPUT_DIM), np.zeros(OUTPUT_DIM))

    @classmethod
    def zeros(cls, hidden: int = HIDDEN_DIM) -> 'MlpParams':
        """All-zero weights, decoding every input to mid gray"""
        return cls(**{name: np.zeros(shape) for name, shape in cls.expected_shapes(hidden).items()})

    @classmethod
    def from_dict(cls, values: Dict[str, np.ndarray]) -> 'MlpParams':
        return cls(**{name: values[name] for name in LAYER_NAMES})

    def to_dict(self) -> Dict[str, np.ndarray]:
        return {name: getattr(self, name).copy() for name in LAYER_NAMES}


def init_latents(rng: np.random.Generator, count: int) -> np.ndarray:
    return rng.normal(0.0, LATENT_INIT_STD, size=(count, LATENT_DIM))


def wrap_theta(thetas: Union[float, np.ndarray]) -> np.ndarray:
    """Snap angles to a 2pi / 2^32 grid taken modulo one turn, so theta and theta + 2pi encode identically"""
    step = 2.0 * math.pi / THETA_STEPS
    index = np.mod(np.round(np.asarray(thetas, dtype=np.float64) / step), THETA_STEPS)
    return index * step


def encode_batch(latents: np.ndarray, view_dirs: np.ndarray,
                 thetas: Union[float, np.ndarray]) -> np.ndarray:
    """Encode (N, 8) latents, (N, 3) unit view directions and N (or one) angles into (N, 19)"""
    latents = np.atleast_2d(np.asarray(latents, dtype=np.float64))
    view_dirs = np.atleast_2d(np.asarray(view_dirs, dtype=np.float64))
    if latents.shape[1] != LATENT_DIM:
        raise InvalidInputError(f'Latents must have {LATENT_DIM} entries')
    norms = np.linalg.norm(view_dirs, axis=1)
    if not np.all(np.isfinite(norms)) or np.any(np.abs(norms - 1.0) > UNIT_TOLERANCE):
        raise InvalidInputError('View direction is not unit length')

    thetas = np.broadcast_to(np.asarray(thetas, dtype=np.float64), (latents.shape[0],))
    if not np.all(np.isfinite(thetas)):
        raise InvalidInputError('Light rotation must be finite')
    thetas = wrap_theta(thetas)
    return np.concatenate([
        latents,
        view_dirs,
        np.sin(math.pi * view_dirs),
        np.cos(math.pi * view_dirs),
        np.sin(thetas)[:, None],
        np.cos(thetas)[:, None],
    ], axis=1)


def encode_inputs(latent: np.ndarray, view_dir: np.ndarray, theta: float) -> np.ndarray:
    """Input vector for one Gaussian"""
    return encode_batch(latent, view_dir, theta)[0]


def encode_view_backward(view_dirs: np.ndarray, d_encoded: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. the view directions from a gradient w.r.t. the encoding"""
    start = LATENT_DIM
    d_raw = d_encoded[:, start:start + 3]
    d_sin = d_encoded[:, start + 3:start + 6]
    d_cos = d_encoded[:, start + 6:start + 9]
    return (d_raw + d_sin * math.pi * np.cos(math.pi * view_dirs)
            - d_cos * math.pi * np.sin(math.pi * view_dirs))


@dataclass(eq=False)
class _Activations:
    encoded: np.ndarray
    pre1: np.ndarray
    hidden1: np.ndarray
    pre2: np.ndarray
    hidden2: np.ndarray
    output: np.ndarray


def _forward(params: MlpParams, encoded: np.ndarray) -> _Activations:
    """Forward pass keeping the activations for backprop"""
    pre1 = encoded @ params.w1 + params.b1
    hidden1 = np.maximum(pre1, 0.0)
    pre2 = hidden1 @ params.w2 + params.b2
    hidden2 = np.maximum(pre2, 0.0)
    logits = hidden2 @ params.w3 + params.b3
    output = 1.0 / (1.0 + np.exp(-logits))
    return _Activations(encoded, pre1, hidden1, pre2, hidden2, output)


def mlp_forward(params: MlpParams, encoded: np.ndarray) -> np.ndarray:
    """RGB in (0, 1) for one (19,) input or a batch (N, 19)"""
    encoded = np.asarray(encoded, dtype=np.float64)
    single = encoded.ndim == 1
    out = _forward(params, np.atleast_2d(encoded)).output
    return out[0] if single else out


@dataclass(eq=False)
class MlpGrads:
    params: MlpParams
    encoded: np.ndarray

    @property
    def latent(self) -> np.ndarray:
        return self.encoded[..., :LATENT_DIM]


def _backward(params: MlpParams, acts: _Activations, grad_color: np.ndarray) -> MlpGrads:
    """Weight gradients plus the gradient with respect to the encoded inputs"""
    d_logits = grad_color * acts.output * (1.0 - acts.output)
    d_w3 = acts.hidden2.T @ d_logits
    d_b3 = d_logits.sum(axis=0)
    d_pre2 = (d_logits @ params.w3.T) * (acts.pre2 > 0.0)
    d_w2 = acts.hidden1.T @ d_pre2
    d_b2 = d_pre2.sum(axis=0)
    d_pre1 = (d_pre2 @ params.w2.T) * (acts.pre1 > 0.0)
    d_w1 = acts.encoded.T @ d_pre1
    d_b1 = d_pre1.sum(axis=0)
    d_encoded = d_pre1 @ params.w1.T
    return MlpGrads(MlpParams(d_w1, d_b1, d_w2, d_b2, d_w3, d_b3), d_encoded)


def mlp_backward(params: MlpParams, encoded: np.ndarray, grad_color: np.ndarray) -> MlpGrads:
    """Gradients w.r.t. every weight and the encoded input (latent is its first 8 columns)"""
    encoded = np.asarray(encoded, dtype=np.float64)
    single = encoded.ndim == 1
    grads = _backward(params, _forward(params, np.atleast_2d(encoded)),
                      np.atleast_2d(np.asarray(grad_color, dtype=np.float64)))
    if single:
        grads.encoded = grads.encoded[0]
    return grads


def eval_cloud_colors(cloud: GaussianCloud, params: MlpParams, cam: CameraPose,
                      theta: float) -> np.ndarray:
    """Decode one color per Gaussian for this camera and light rotation"""
    if len(cloud) == 0:
        return np.zeros((0, 3))
    dirs, _ = view_directions(cloud.positions, cam)
    return _forward(params, encode_batch(cloud.latents, dirs, theta)).output


@dataclass(eq=False)
class CloudColorGrads:
    params: MlpParams
    latents: np.ndarray
    positions: np.ndarray


def eval_cloud_colors_backward(cloud: GaussianCloud, params: MlpParams, cam: CameraPose,
                               theta: float, d_colors: np.ndarray) -> CloudColorGrads:
    """Chain a per-Gaussian color gradient back to the MLP, the latents and the positions"""
    if len(cloud) == 0:
        return CloudColorGrads(MlpParams.zeros(params.w1.shape[1]), np.zeros((0, LATENT_DIM)),
                               np.zeros((0, 3)))
    dirs, distances = view_directions(cloud.positions, cam)
    acts = _forward(params, encode_batch(cloud.latents, dirs, theta))
    grads = _backward(params, acts, np.asarray(d_colors, dtype=np.float64))
    d_dirs = encode_view_backward(dirs, grads.encoded)
    return CloudColorGrads(grads.params, grads.latent.copy(),
                           view_direction_backward(dirs, distances, d_dirs))
