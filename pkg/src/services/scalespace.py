# src/services/scalespace.py
"""Affine Gaussian pyramid, LoG / LoG-derivative stacks and their cubic fits in sigma.

Every octave samples four scales {1.6, 1.6*sqrt2, 3.2, 3.2*sqrt2} (octave-relative).
Consecutive ladder scales differ by sqrt2, so sample i is always one blur of sample i-1
with the previous scale; octave o+1 starts from the 2x2-averaged sigma=3.2 raster.
"""
import logging
import math
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from src.errors import AffinaError, BoundsError, ConfigError, SingularMatrixError, SizeError
from src.models.features import AffineParams
from src.models.image import GrayImage
from src.models.scale_space import (DERIVATIVE_STACKS, Octave, PolyField,
                                    PolyParamMatrix, Pyramid)
from src.services.imagecore import (DERIVATIVE_TRUNCATION, anisotropic_gaussian_kernel,
                                    convolve_array, downsample2_array,
                                    gaussian_derivative_kernel, sample_bilinear)

logger = logging.getLogger(__name__)

SQRT2 = math.sqrt(2.0)
SCALES = (1.6, 1.6 * SQRT2, 3.2, 3.2 * SQRT2)
SIGMA_LO = SCALES[0]
SIGMA_HI = SCALES[-1]
MIN_OCTAVE_SIDE = 16
PYRAMID_TRUNCATION = 4.5

# sigma power per stack: sigma^2 for the LoG, one more per spatial derivative
STACK_POWERS = {
    'log': 2, 'log_dx': 3, 'log_dy': 3, 'log_dxx': 4, 'log_dxy': 4, 'log_dyy': 4,
}

DEFAULT_TILTS = (1.0, SQRT2, 2.0)
DEFAULT_LONGITUDES = (0.0, 45.0, 90.0, 135.0)


# -------------------------------
# Channels
# -------------------------------
def default_channels(tilts: Iterable[float] = DEFAULT_TILTS,
                     longitudes: Iterable[float] = DEFAULT_LONGITUDES) -> List[AffineParams]:
    """A = R(phi) diag(t, 1) for every tilt/longitude; tilt 1 is isotropic and listed once"""
    channels = []
    for t in tilts:
        if abs(t - 1.0) < 1e-12:
            channels.append(AffineParams.identity())
            continue
        for phi in longitudes:
            channels.append(AffineParams.from_tilt(t, math.radians(phi)))
    return channels


def parse_channels(text: str) -> List[AffineParams]:
    """'default', 'identity', or a comma list of tilt@degrees items (e.g. '1,1.414@45,2@90')"""
    text = (text or "default").strip().lower()
    if text == "default":
        return default_channels()
    if text == "identity":
        return [AffineParams.identity()]
    channels = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        tilt, _, phi = item.partition("@")
        try:
            channels.append(AffineParams.from_tilt(float(tilt), math.radians(float(phi or 0.0))))
        except (ValueError, AffinaError):
            raise ConfigError(f"Bad channel '{item}': expected tilt or tilt@degrees")
    if not channels:
        raise ConfigError(f"No channels in '{text}'")
    return channels


# -------------------------------
# Pyramid
# -------------------------------
def required_side(a: AffineParams) -> int:
    """Smallest octave side that still fits every kernel used inside one octave"""
    widest = int(math.ceil(max(DERIVATIVE_TRUNCATION, PYRAMID_TRUNCATION) * SCALES[2] * a.norm))
    return max(MIN_OCTAVE_SIDE, widest + 1)


def max_octaves(shape, a: AffineParams) -> int:
    side = min(shape)
    need = required_side(a)
    count = 0
    while side >= need:
        count += 1
        side //= 2
    return count


def build_pyramid(img, a: AffineParams, n_octaves: int) -> Pyramid:
    """Gaussian samples of every octave under channel A (sigma of `a` is ignored)"""
    data = img.data if isinstance(img, GrayImage) else np.asarray(img, dtype=np.float64)
    limit = max_octaves(data.shape, a)
    if n_octaves < 1 or n_octaves > limit:
        raise SizeError(
            f"{data.shape[1]}x{data.shape[0]} image supports {limit} octave(s) for channel "
            f"[{a.label}], {n_octaves} requested"
        )

    kernels = {}

    def blur(raster, sigma):
        if sigma not in kernels:
            kernels[sigma] = anisotropic_gaussian_kernel(a.with_sigma(sigma), PYRAMID_TRUNCATION)
        return convolve_array(raster, kernels[sigma])

    half = SCALES[0] / SQRT2
    base = blur(data, half)
    first = blur(base, half)
    octaves = []
    for level in range(n_octaves):
        gauss = [first]
        for i in range(1, 4):
            gauss.append(blur(gauss[-1], math.sqrt(SCALES[i] ** 2 - SCALES[i - 1] ** 2)))
        octaves.append(Octave(level, SCALES, gauss, base))
        if level + 1 < n_octaves:
            # sigma 1.6*sqrt2 -> 1.6/sqrt2 and sigma 3.2 -> 1.6 after halving
            base = downsample2_array(gauss[1])
            first = downsample2_array(gauss[2])

    logger.debug(f"Pyramid [{a.label}]: {n_octaves} octave(s) from {data.shape[1]}x{data.shape[0]}")
    return Pyramid(a, octaves, data.shape)


def _stack_from_semigroup(oct: Octave, a: AffineParams, order: str, power: int) -> List[np.ndarray]:
    """Sample i = small derivative kernel applied to the raster one ladder step below, times s_i**power"""
    sources = [(oct.base, oct.scales[0] / SQRT2)]
    sources += [(oct.gauss[i - 1], oct.scales[i - 1]) for i in range(1, 4)]
    rasters = []
    for s, (source, source_sigma) in zip(oct.scales, sources):
        step = math.sqrt(s * s - source_sigma * source_sigma)
        k = gaussian_derivative_kernel(a.with_sigma(step), order)
        rasters.append(convolve_array(source, k) * s ** power)
    return rasters


def log_and_derivatives(oct: Octave, a: AffineParams) -> Octave:
    """Scale-normalised affine LoG (sigma^2) and its normalised-frame first (sigma^3) and second (sigma^4) derivatives"""
    stacks = dict(oct.stacks)
    for name in DERIVATIVE_STACKS:
        stacks[name] = _stack_from_semigroup(oct, a, name, power=STACK_POWERS[name])
    return Octave(oct.level, oct.scales, oct.gauss, oct.base, stacks)


def gradient_stacks(oct: Octave, a: AffineParams) -> Octave:
    """Scale-normalised (sigma) affine Gaussian gradient samples"""
    stacks = dict(oct.stacks)
    stacks['grad_x'] = _stack_from_semigroup(oct, a, 'dx', power=1)
    stacks['grad_y'] = _stack_from_semigroup(oct, a, 'dy', power=1)
    return Octave(oct.level, oct.scales, oct.gauss, oct.base, stacks)


# -------------------------------
# Cubic fits in sigma
# -------------------------------
def compute_poly_param_matrix(scales: Sequence[float]) -> PolyParamMatrix:
    """M = inverse of the Vandermonde matrix with rows [s^3 s^2 s 1]"""
    s = np.asarray(scales, dtype=np.float64)
    if s.shape != (4,) or np.any(s <= 0):
        raise ValueError(f"Need 4 positive scales, got {list(scales)}")
    if np.min(np.diff(np.sort(s))) < 1e-12:
        raise SingularMatrixError(f"Duplicate scales {list(scales)}")
    M = np.linalg.inv(np.vander(s, 4))
    return PolyParamMatrix(M, tuple(float(v) for v in s))


LADDER_MATRIX = compute_poly_param_matrix(SCALES)


def fit_poly(stack: Sequence[np.ndarray], m: PolyParamMatrix = LADDER_MATRIX) -> PolyField:
    rasters = [r.data if isinstance(r, GrayImage) else np.asarray(r, dtype=np.float64) for r in stack]
    if len(rasters) != 4 or any(r.shape != rasters[0].shape for r in rasters):
        raise SizeError(f"fit_poly needs 4 equally sized rasters, got {[r.shape for r in rasters]}")
    coefs = np.tensordot(m.M, np.stack(rasters), axes=1)
    return PolyField(coefs[0], coefs[1], coefs[2], coefs[3])


def octave_polyfields(oct: Octave, names: Iterable[str],
                      m: PolyParamMatrix = LADDER_MATRIX) -> Dict[str, PolyField]:
    return {name: fit_poly(oct.stacks[name], m) for name in names}


def _check_bounds(pf: PolyField, xs, ys):
    h, w = pf.shape
    xs, ys = np.asarray(xs, dtype=np.float64), np.asarray(ys, dtype=np.float64)
    if np.any(xs < 0) or np.any(ys < 0) or np.any(xs > w - 1) or np.any(ys > h - 1):
        raise BoundsError(f"Position outside the {w}x{h} coefficient raster")
    return xs, ys


def coefficients_at(pf: PolyField, xs, ys) -> np.ndarray:
    """Bilinearly interpolated (a, b, c, d) at sub-pixel positions; shape (4,) + xs.shape"""
    xs, ys = _check_bounds(pf, xs, ys)
    return np.stack([sample_bilinear(c, xs, ys) for c in (pf.a, pf.b, pf.c, pf.d)])


def _cubic(coefs, sigma):
    a, b, c, d = coefs
    return ((a * sigma + b) * sigma + c) * sigma + d


def eval_poly_at(pf: PolyField, xs, ys, sigmas) -> np.ndarray:
    return _cubic(coefficients_at(pf, xs, ys), np.asarray(sigmas, dtype=np.float64))


def eval_poly(pf: PolyField, x: float, y: float, sigma: float) -> float:
    return float(eval_poly_at(pf, x, y, sigma))


def critical_scales(a, b, c, lo: float = SIGMA_LO, hi: float = SIGMA_HI):
    """Roots of 3a s^2 + 2b s + c inside [lo, hi], split into maxima and minima (NaN = none)"""
    a, b, c = (np.asarray(v, dtype=np.float64) for v in (a, b, c))
    qa, qb, qc = 3.0 * a, 2.0 * b, c
    shape = np.broadcast(qa, qb, qc).shape
    sig_max = np.full(shape, np.nan)
    sig_min = np.full(shape, np.nan)

    with np.errstate(divide='ignore', invalid='ignore'):
        disc = qb * qb - 4.0 * qa * qc
        sq = np.sqrt(np.where(disc >= 0, disc, np.nan))
        # numerically stable pair of roots
        q = -0.5 * (qb + np.copysign(sq, qb))
        quad = qa != 0
        r1 = np.where(quad, q / qa, np.nan)
        r2 = np.where(quad, qc / q, np.nan)
        r_lin = np.where(~quad & (qb != 0), -qc / qb, np.nan)

        for root in (r1, r2, r_lin):
            curvature = 6.0 * a * root + 2.0 * b
            inside = np.isfinite(root) & (root >= lo) & (root <= hi)
            sig_max = np.where(inside & (curvature < 0) & np.isnan(sig_max), root, sig_max)
            sig_min = np.where(inside & (curvature > 0) & np.isnan(sig_min), root, sig_min)
    return sig_max, sig_min


def extremal_scale_maps(pf: PolyField, lo: float = SIGMA_LO, hi: float = SIGMA_HI):
    return critical_scales(pf.a, pf.b, pf.c, lo, hi)


def solve_extremal_scales(pf: PolyField, x: float, y: float,
                          lo: float = SIGMA_LO, hi: float = SIGMA_HI) -> Dict[str, Optional[float]]:
    """Extremal scales of the cubic at one position; None where no root lies in [lo, hi]"""
    a, b, c, _ = coefficients_at(pf, x, y)
    smax, smin = critical_scales(a, b, c, lo, hi)
    smax, smin = float(smax), float(smin)
    return {
        'sigma_max': None if math.isnan(smax) else smax,
        'sigma_min': None if math.isnan(smin) else smin,
    }


__all__ = [
    'SCALES', 'SIGMA_LO', 'SIGMA_HI', 'default_channels', 'parse_channels', 'max_octaves',
    'required_side', 'build_pyramid', 'log_and_derivatives', 'gradient_stacks',
    'compute_poly_param_matrix', 'LADDER_MATRIX', 'fit_poly', 'octave_polyfields',
    'coefficients_at', 'eval_poly', 'eval_poly_at', 'critical_scales', 'extremal_scale_maps',
    'solve_extremal_scales',
]
