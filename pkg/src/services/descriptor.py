# src/services/descriptor.py
"""Affine gradient relocation, orientation assignment and the 4x4x8 histogram descriptor."""
import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.config import DescriptorConfig
from src.errors import BorderError, DescriptorRejected, PatchRejected, ScaleError
from src.models.features import (AffineParams, Descriptor128, Feature, GradientPatch,
                                 rotation, wrap_angle)
from src.models.scale_space import GradientField, Pyramid
from src.services.accel import accumulate_trilinear
from src.services.scalespace import (SIGMA_HI, SIGMA_LO, coefficients_at, fit_poly,
                                     gradient_stacks)

logger = logging.getLogger(__name__)

N_CELLS = 4
N_ORIENT = 8
SCALE_EPS = 1e-9


@dataclass(frozen=True)
class DroppedFeature:
    feature: Feature
    reason: str


# -------------------------------
# Gradient fields
# -------------------------------
class GradientCache:
    """Gradient cubic fits per octave of one pyramid, built on first use and then shared"""

    def __init__(self, pyr: Pyramid, a: Optional[AffineParams] = None):
        self.pyr = pyr
        self.channel = a or pyr.channel
        self._fits: Dict[int, Tuple] = {}
        self._lock = threading.Lock()

    def fits(self, octave: int):
        if not 0 <= octave < self.pyr.n_octaves:
            raise ScaleError(f"octave {octave} not in a {self.pyr.n_octaves}-octave pyramid")
        with self._lock:
            if octave not in self._fits:
                filled = gradient_stacks(self.pyr.octaves[octave], self.channel)
                self._fits[octave] = (fit_poly(filled.grad_x), fit_poly(filled.grad_y))
            return self._fits[octave]

    def field(self, octave: int, sigma: float) -> GradientField:
        px, py = self.fits(octave)
        return GradientField(px, py, sigma, octave, self.channel)


def octave_for_scale(pyr: Pyramid, sigma: float) -> int:
    """Lowest octave whose ladder [1.6, 3.2 sqrt2] contains sigma (original units)"""
    for level in range(pyr.n_octaves):
        rel = sigma / 2 ** level
        if SIGMA_LO - SCALE_EPS <= rel <= SIGMA_HI + SCALE_EPS:
            return level
    raise ScaleError(f"sigma {sigma:.3f} outside the pyramid range "
                     f"[{SIGMA_LO}, {SIGMA_HI * 2 ** (pyr.n_octaves - 1):.3f}]")


def affine_gradient_field(pyr: Pyramid, a: AffineParams, sigma: float,
                          cache: Optional[GradientCache] = None) -> GradientField:
    """Scale-normalised affine Gaussian gradient at sigma (original units), on its octave grid"""
    level = octave_for_scale(pyr, sigma)
    cache = cache or GradientCache(pyr, a)
    return cache.field(level, sigma / 2 ** level)


def _cubic_at(pf, xs, ys, s):
    a, b, c, d = coefficients_at(pf, xs, ys)
    return ((a * s + b) * s + c) * s + d


def sample_field(field: GradientField, xs, ys):
    """Gradient vectors at sub-pixel octave positions"""
    return _cubic_at(field.poly_x, xs, ys, field.sigma), _cubic_at(field.poly_y, xs, ys, field.sigma)


def _inside(field: GradientField, xs, ys) -> bool:
    h, w = field.shape
    return bool(np.all(xs >= 0) and np.all(ys >= 0) and np.all(xs <= w - 1) and np.all(ys <= h - 1))


# -------------------------------
# Relocation and orientation
# -------------------------------
def relocate_patch(field: GradientField, f: Feature, a_prime: np.ndarray,
                   half_extent: float = 6.0, side: int = 16) -> GradientPatch:
    """Sample side x side gradients on [-half_extent, half_extent]^2 (sigma units) mapped through a_prime.

    Field gradients live in the field channel's normalised frame; they are steered with
    (A_field^-1 a_prime)^T so the patch reads as if seen in the a_prime frame.
    """
    cx, cy = f.octave_position()
    s = f.octave_sigma
    u = (np.arange(side) + 0.5) / side * 2.0 * half_extent - half_extent
    U, V = np.meshgrid(u, u)
    offsets = s * (np.asarray(a_prime) @ np.vstack([U.ravel(), V.ravel()]))
    xs = cx + offsets[0]
    ys = cy + offsets[1]
    if not _inside(field, xs, ys):
        raise PatchRejected(f"patch around ({f.x:.1f}, {f.y:.1f}) leaves the image")
    gx, gy = sample_field(field, xs, ys)
    a_field = field.channel.A if field.channel is not None else np.eye(2)
    steer = np.linalg.solve(a_field, np.asarray(a_prime))
    steered = steer.T @ np.vstack([gx, gy])
    return GradientPatch(side, steered[0].reshape(side, side), steered[1].reshape(side, side))


def orientation_histogram(field: GradientField, f: Feature, cfg: DescriptorConfig) -> np.ndarray:
    """Smoothed magnitude histogram of normalised-frame gradient orientations around f"""
    window = cfg.orientation_window * f.octave_sigma
    radius = max(1, int(round(0.5 * cfg.orientation_region * f.octave_sigma)))
    cx, cy = f.octave_position()
    ax = np.arange(-radius, radius + 1, dtype=np.float64)
    U, V = np.meshgrid(ax, ax)
    A = f.channel.A
    offsets = A @ np.vstack([U.ravel(), V.ravel()])
    xs, ys = cx + offsets[0], cy + offsets[1]
    if not _inside(field, xs, ys):
        raise BorderError(f"orientation region around ({f.x:.1f}, {f.y:.1f}) leaves the image")

    gx, gy = sample_field(field, xs, ys)
    mag = np.hypot(gx, gy)
    theta = wrap_angle(np.arctan2(gy, gx))
    weight = np.exp(-(U.ravel() ** 2 + V.ravel() ** 2) / (2.0 * window * window))
    nb = cfg.orientation_bins
    idx = np.round(theta * nb / (2 * np.pi)).astype(int) % nb
    raw = np.bincount(idx, weights=mag * weight, minlength=nb)
    return (np.roll(raw, 1) + 2.0 * raw + np.roll(raw, -1)) / 4.0


def peak_orientations(hist: np.ndarray, peak_ratio: float = 0.8) -> List[float]:
    """Global peak plus local peaks within peak_ratio of it, each refined by a parabolic offset"""
    nb = hist.size
    top = float(hist.max())
    if top <= 1e-12:
        return []
    left = np.roll(hist, 1)
    right = np.roll(hist, -1)
    peaks = np.nonzero((hist > left) & (hist >= right) & (hist >= peak_ratio * top)
                       & (hist > 0.5 * (left + right)))[0]
    orientations = []
    for k in peaks:
        m_minus, m, m_plus = left[k], hist[k], right[k]
        denom = 0.5 * (m_plus + m_minus) - m
        delta = 0.0 if denom == 0 else -0.5 * (m_plus - m_minus) / denom
        if abs(delta) > 0.5:
            delta = 0.0
        orientations.append(float(wrap_angle((k + delta) * 2 * np.pi / nb)))
    return orientations


def assign_orientations(field: GradientField, f: Feature,
                        cfg: Optional[DescriptorConfig] = None) -> List[float]:
    cfg = cfg or DescriptorConfig()
    return peak_orientations(orientation_histogram(field, f, cfg), cfg.peak_ratio)


# -------------------------------
# Descriptor vector
# -------------------------------
def normalize_descriptor(vec: np.ndarray, clamp: float = 0.2):
    """L2 normalise, clamp, renormalise; returns (unit vector, bytes = min(255, round(512 v)))"""
    norm = float(np.linalg.norm(vec))
    if norm <= 1e-12:
        raise DescriptorRejected("descriptor histogram has zero norm")
    v = np.minimum(vec / norm, clamp)
    v = v / np.linalg.norm(v)
    return v, np.minimum(255, np.round(512.0 * v)).astype(np.uint8)


def build_descriptor(patch: GradientPatch, feature: Optional[Feature] = None,
                     orientation: float = 0.0, clamp: float = 0.2) -> Descriptor128:
    side = patch.side
    centers = np.arange(side) + 0.5
    cell = centers / side * N_CELLS - 0.5
    rows, cols = np.meshgrid(cell, cell, indexing='ij')
    du = centers - side / 2.0
    DV, DU = np.meshgrid(du, du, indexing='ij')
    half = side / 2.0
    weight = patch.magnitude * np.exp(-(DU ** 2 + DV ** 2) / (2.0 * half * half))
    obins = patch.orientation * N_ORIENT / (2 * np.pi)

    hist = accumulate_trilinear(rows.ravel(), cols.ravel(), obins.ravel(), weight.ravel(),
                                N_CELLS, N_ORIENT)
    vector, values = normalize_descriptor(np.ascontiguousarray(hist).ravel(), clamp)
    return Descriptor128(values, feature, orientation, vector)


def _describe_one(f: Feature, cache: GradientCache, cfg: DescriptorConfig):
    try:
        field = cache.field(f.octave, f.octave_sigma)
        thetas = assign_orientations(field, f, cfg)
        if not thetas:
            return [], DroppedFeature(f, "flat")
        f.orientations = thetas
        out = []
        for theta in thetas:
            a_prime = f.channel.A @ rotation(theta)
            patch = relocate_patch(field, f, a_prime, cfg.half_extent, cfg.side)
            out.append(build_descriptor(patch, f, theta, cfg.clamp))
        return out, None
    except BorderError:
        return [], DroppedFeature(f, "border")
    except DescriptorRejected:
        return [], DroppedFeature(f, "zero-norm")
    except ScaleError:
        return [], DroppedFeature(f, "scale")


def describe(features: Sequence[Feature], pyr: Pyramid, a: Optional[AffineParams] = None,
             cfg: Optional[DescriptorConfig] = None, threads: int = 1,
             cache: Optional[GradientCache] = None):
    """One descriptor per feature and orientation; returns (descriptors, dropped features)"""
    cfg = cfg or DescriptorConfig()
    cache = cache or GradientCache(pyr, a)
    for level in sorted({f.octave for f in features if f.octave < pyr.n_octaves}):
        cache.fits(level)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        results = list(pool.map(lambda f: _describe_one(f, cache, cfg), features))

    descriptors, dropped = [], []
    for out, drop in results:
        descriptors.extend(out)
        if drop is not None:
            dropped.append(drop)
            logger.debug(f"Feature at ({drop.feature.x:.1f}, {drop.feature.y:.1f}) dropped: {drop.reason}")
    logger.info(f"Channel [{cache.channel.label}]: {len(descriptors)} descriptor(s) from "
                f"{len(features)} feature(s), {len(dropped)} dropped")
    return descriptors, dropped


__all__ = [
    'DroppedFeature', 'GradientCache', 'octave_for_scale', 'affine_gradient_field', 'sample_field',
    'relocate_patch', 'orientation_histogram', 'peak_orientations', 'assign_orientations',
    'normalize_descriptor', 'build_descriptor', 'describe',
]
