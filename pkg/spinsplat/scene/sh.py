"""
Real spherical harmonics shared by the environment light and the SH color baseline.

Basis convention: real SH with the Condon-Shortley phase, indexed k = l*l + l + m.
Written in Cartesian form as

    Y_lm(x, y, z) = K_lm * (-1)^m * D_l^m(z) * {Re, Im}((x + i y)^|m|)

where D_l^m is the m-th derivative of the Legendre polynomial P_l. Degrees 0..3 match
the constants used by standard Gaussian splatting code (Y_1,1 = -0.4886 x, ...).
"""
import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import List, Optional, Sequence, Tuple

import numpy as np
from numpy.polynomial import Legendre, Polynomial

from spinsplat.exceptions import InvalidInputError

logger = logging.getLogger(__name__)

UP_AXIS = np.array([0.0, 0.0, 1.0])
DEFAULT_ENV_DEGREE = 4
UNIT_TOLERANCE = 1e-6


def num_coeffs(degree: int) -> int:
    return (degree + 1) ** 2


def coeff_index(l: int, m: int) -> int:
    return l * l + l + m


def degree_from_count(count: int) -> int:
    """SH degree whose coefficient count is count"""
    degree = int(round(math.sqrt(count))) - 1
    if degree < 0 or num_coeffs(degree) != count:
        raise InvalidInputError(f'{count} coefficients is not a complete SH layout')
    return degree


@lru_cache(maxsize=None)
def _legendre_terms(degree: int) -> Tuple:
    """(l, m, K_lm, D_l^m coefficients, d/dz D_l^m coefficients) for every l, m >= 0"""
    terms = []
    for l in range(degree + 1):
        base = Legendre.basis(l).convert(kind=Polynomial)
        for m in range(l + 1):
            d_m = base.deriv(m) if m > 0 else base
            norm = math.sqrt((2 * l + 1) / (4.0 * math.pi)
                             * math.factorial(l - m) / math.factorial(l + m))
            if m > 0:
                norm *= math.sqrt(2.0) * (-1) ** m
            terms.append((l, m, norm, d_m.coef.copy(), d_m.deriv(1).coef.copy()))
    return tuple(terms)


def _azimuthal_powers(x: np.ndarray, y: np.ndarray, degree: int) -> List[np.ndarray]:
    """(x + iy)^m for m = 0..degree"""
    w = x + 1j * y
    powers = [np.ones_like(w)]
    for _ in range(degree):
        powers.append(powers[-1] * w)
    return powers


def sh_basis(dirs: np.ndarray, degree: int) -> np.ndarray:
    """Evaluate all (degree+1)^2 basis functions at directions of shape (N, 3)"""
    dirs = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    powers = _azimuthal_powers(x, y, degree)

    out = np.empty((dirs.shape[0], num_coeffs(degree)))
    for l, m, norm, poly, _ in _legendre_terms(degree):
        radial = norm * np.polynomial.polynomial.polyval(z, poly)
        if m == 0:
            out[:, coeff_index(l, 0)] = radial
        else:
            out[:, coeff_index(l, m)] = radial * powers[m].real
            out[:, coeff_index(l, -m)] = radial * powers[m].imag
    return out


def sh_basis_grad(dirs: np.ndarray, degree: int) -> np.ndarray:
    """Cartesian gradient of every basis function, shape (N, (degree+1)^2, 3)"""
    dirs = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    powers = _azimuthal_powers(x, y, degree)

    grad = np.zeros((dirs.shape[0], num_coeffs(degree), 3))
    for l, m, norm, poly, dpoly in _legendre_terms(degree):
        radial = norm * np.polynomial.polynomial.polyval(z, poly)
        dradial = norm * np.polynomial.polynomial.polyval(z, dpoly)
        if m == 0:
            grad[:, coeff_index(l, 0), 2] = dradial
            continue

        lower = m * powers[m - 1]
        cos_k, sin_k = coeff_index(l, m), coeff_index(l, -m)
        grad[:, cos_k, 0] = radial * lower.real
        grad[:, cos_k, 1] = -radial * lower.imag
        grad[:, cos_k, 2] = dradial * powers[m].real
        grad[:, sin_k, 0] = radial * lower.imag
        grad[:, sin_k, 1] = radial * lower.real
        grad[:, sin_k, 2] = dradial * powers[m].imag
    return grad


def band_of_each_coeff(degree: int) -> np.ndarray:
    return np.concatenate([np.full(2 * l + 1, l) for l in range(degree + 1)])


def clamped_cosine_band(l: int) -> float:
    """Convolution weight of the clamped-cosine kernel for band l"""
    if l == 0:
        return math.pi
    if l == 1:
        return 2.0 * math.pi / 3.0
    if l % 2 == 1:
        return 0.0
    half = l // 2
    return (2.0 * math.pi * (-1) ** (half - 1) / ((l + 2) * (l - 1))
            * math.factorial(l) / (2 ** l * math.factorial(half) ** 2))


def fibonacci_sphere(count: int) -> np.ndarray:
    """Near-uniform unit directions on the sphere"""
    i = np.arange(count, dtype=np.float64) + 0.5
    z = 1.0 - 2.0 * i / count
    r = np.sqrt(np.clip(1.0 - z * z, 0.0, None))
    phi = math.pi * (3.0 - math.sqrt(5.0)) * i
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def _check_directions(direction: np.ndarray) -> np.ndarray:
    """Unit directions as an (N, 3) array"""
    dirs = np.atleast_2d(np.asarray(direction, dtype=np.float64))
    if not np.all(np.isfinite(dirs)):
        raise InvalidInputError('Direction contains non-finite values')
    norms = np.linalg.norm(dirs, axis=1)
    if np.any(norms == 0.0):
        raise InvalidInputError('Zero-length direction')
    if np.any(np.abs(norms - 1.0) > UNIT_TOLERANCE):
        raise InvalidInputError('Direction is not unit length')
    return dirs


@dataclass(frozen=True, eq=False)
class EnvLight:
    """Environment illumination as real SH coefficients, shape ((L+1)^2, 3)"""
    sh_coeffs: np.ndarray
    up_axis: np.ndarray = field(default_factory=lambda: UP_AXIS.copy())

    def __post_init__(self):
        coeffs = np.array(self.sh_coeffs, dtype=np.float64)
        if coeffs.ndim != 2 or coeffs.shape[1] != 3:
            raise InvalidInputError(f'SH coefficients must be (K, 3), got {coeffs.shape}')
        degree_from_count(coeffs.shape[0])
        if not np.all(np.isfinite(coeffs)):
            raise InvalidInputError('SH coefficients must be finite')
        coeffs.setflags(write=False)
        object.__setattr__(self, 'sh_coeffs', coeffs)

    @property
    def degree(self) -> int:
        return degree_from_count(self.sh_coeffs.shape[0])

    def scaled(self, k: float) -> 'EnvLight':
        return EnvLight(self.sh_coeffs * k)

    def blurred(self, beta: float) -> 'EnvLight':
        """Attenuate band l by exp(-beta * l * (l + 1)); beta = inf keeps DC only"""
        bands = band_of_each_coeff(self.degree)
        if math.isinf(beta):
            weights = (bands == 0).astype(np.float64)
        else:
            weights = np.exp(-beta * bands * (bands + 1))
        return EnvLight(self.sh_coeffs * weights[:, None])

    @classmethod
    def from_lobes(cls, lobes: Sequence[Tuple[Sequence[float], Sequence[float], float]],
                   ambient: Sequence[float] = (0.0, 0.0, 0.0),
                   degree: int = DEFAULT_ENV_DEGREE) -> 'EnvLight':
        """Project smooth directional lobes (direction, rgb, sharpness) plus ambient onto SH"""
        coeffs = np.zeros((num_coeffs(degree), 3))
        bands = band_of_each_coeff(degree)
        coeffs[0] = np.asarray(ambient, dtype=np.float64) / sh_basis(UP_AXIS, 0)[0, 0]

        for direction, rgb, sharpness in lobes:
            d = np.asarray(direction, dtype=np.float64)
            d = d / np.linalg.norm(d)
            falloff = np.exp(-bands * (bands + 1) / (2.0 * sharpness))
            coeffs += (falloff * sh_basis(d, degree)[0])[:, None] * np.asarray(rgb)[None, :]
        return cls(coeffs)

    @classmethod
    def random(cls, rng: np.random.Generator, degree: int = DEFAULT_ENV_DEGREE,
               scale: float = 0.5) -> 'EnvLight':
        """Random light with a dominant constant term"""
        coeffs = rng.normal(0.0, scale, size=(num_coeffs(degree), 3))
        coeffs[0] = np.abs(coeffs[0]) + 2.0
        return cls(coeffs)


def default_environment(degree: int = DEFAULT_ENV_DEGREE, sun_elevation_deg: float = 35.0,
                        sun_azimuth_deg: float = 20.0, sharpness: float = 6.0,
                        sun_rgb: Sequence[float] = (1.4, 1.3, 1.1),
                        sky_rgb: Sequence[float] = (0.3, 0.38, 0.5),
                        fill_rgb: Sequence[float] = (0.35, 0.25, 0.18)) -> EnvLight:
    """Sun-and-sky style light with a warm fill from the opposite side"""
    el, az = math.radians(sun_elevation_deg), math.radians(sun_azimuth_deg)
    sun = (math.cos(el) * math.cos(az), math.cos(el) * math.sin(az), math.sin(el))
    fill = (-sun[0], -sun[1], 0.2)
    return EnvLight.from_lobes(
        [(sun, sun_rgb, sharpness), (fill, fill_rgb, 2.0)],
        ambient=sky_rgb,
        degree=degree,
    )


def rotate_coeffs_z(coeffs: np.ndarray, theta: float) -> np.ndarray:
    """Rotate SH coefficients (K, ...) by theta about +z, mixing only (m, -m) pairs"""
    if not math.isfinite(theta):
        raise InvalidInputError('Rotation angle must be finite')
    coeffs = np.asarray(coeffs, dtype=np.float64)
    degree = degree_from_count(coeffs.shape[0])
    out = coeffs.copy()
    for l in range(1, degree + 1):
        for m in range(1, l + 1):
            c, s = math.cos(m * theta), math.sin(m * theta)
            cos_k, sin_k = coeff_index(l, m), coeff_index(l, -m)
            out[cos_k] = coeffs[cos_k] * c - coeffs[sin_k] * s
            out[sin_k] = coeffs[cos_k] * s + coeffs[sin_k] * c
    return out


def rotate_env(env: EnvLight, theta: float) -> EnvLight:
    """Rotated light satisfies eval(rotated, d) = eval(env, Rz(-theta) d)"""
    return EnvLight(rotate_coeffs_z(env.sh_coeffs, theta))


def eval_env(env: EnvLight, direction: np.ndarray) -> np.ndarray:
    """Radiance along unit direction(s); negative reconstructions clamp to 0"""
    dirs = _check_directions(direction)
    radiance = np.maximum(sh_basis(dirs, env.degree) @ env.sh_coeffs, 0.0)
    return radiance[0] if np.ndim(direction) == 1 else radiance


def irradiance(env: EnvLight, normals: np.ndarray) -> np.ndarray:
    """Diffuse irradiance via the clamped-cosine SH convolution, clamped to 0"""
    weights = np.array([clamped_cosine_band(l) for l in band_of_each_coeff(env.degree)])
    return np.maximum(sh_basis(normals, env.degree) @ (env.sh_coeffs * weights[:, None]), 0.0)


def project_to_sh(func_values: np.ndarray, dirs: np.ndarray, degree: int,
                  weights: Optional[np.ndarray] = None) -> np.ndarray:
    """Monte-Carlo projection of sampled values (N, C) at uniform directions onto SH"""
    basis = sh_basis(dirs, degree)
    if weights is None:
        weights = np.full(dirs.shape[0], 4.0 * math.pi / dirs.shape[0])
    return basis.T @ (func_values * weights[:, None])
