# src/services/detector.py
"""Affine-invariant interest point detection on the cubic LoG scale space.

Per pixel the scale-normalised LoG cubic gives at most one sigma_max and one sigma_min.
A pixel is kept when its Hessian/Harris eigenvalues pass the extremum test with the
matching sign, the Hessian is not edge-like and the response clears the contrast gate.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from src.config import DetectorConfig
from src.errors import BorderError, RefinementRejected, SizeError
from src.models.features import AffineParams, ExtremumKind, Feature, LocalMatrices, from_octave
from src.models.image import GrayImage
from src.models.scale_space import DERIVATIVE_STACKS, PolyField, Pyramid
from src.services.scalespace import (build_pyramid, coefficients_at, critical_scales,
                                     eval_poly, extremal_scale_maps, log_and_derivatives,
                                     max_octaves, octave_polyfields)

logger = logging.getLogger(__name__)

SINGULAR_DET = 1e-14
HARRIS_WINDOW = 1.5
# elements per block when evaluating many second-moment windows at once
MOMENT_CHUNK = 1 << 20


# -------------------------------
# Local matrices and tests
# -------------------------------
def window_reach(cut, a: Optional[AffineParams] = None):
    """Pixel half-extent of the normalised-frame square |xi|_inf <= cut"""
    spread = 1.0 if a is None else float(np.abs(a.A).sum(axis=1).max())
    return np.ceil(np.asarray(cut, dtype=np.float64) * spread - 1e-9).astype(int)


def _window_grid(cut: int, a: Optional[AffineParams] = None):
    """Integer offsets (dy, dx) inside the normalised-frame square of half-side cut, and their xi"""
    reach = int(window_reach(cut, a))
    ax = np.arange(-reach, reach + 1)
    dy, dx = np.meshgrid(ax, ax, indexing='ij')
    eta = np.vstack([dx.ravel(), dy.ravel()]).astype(np.float64)
    xi = eta if a is None else a.inverse @ eta
    inside = np.max(np.abs(xi), axis=0) <= cut + 1e-9
    offsets = np.stack([dy.ravel(), dx.ravel()], axis=1)[inside]
    return offsets, xi[:, inside].T


def harris_window(std: float, a: Optional[AffineParams] = None):
    """Offsets (dy, dx) and normalised Gaussian weights of the second-moment window.

    The Gaussian has the given std in the channel's normalised frame and is cut to
    the square of half-side ceil(2 std) there; for A = I that is the plain pixel square.
    """
    cut = int(math.ceil(2.0 * std))
    if cut == 0:
        return np.zeros((1, 2), dtype=int), np.ones(1)
    offsets, xi = _window_grid(cut, a)
    weights = np.exp(-np.sum(xi * xi, axis=1) / (2.0 * std * std))
    return offsets, weights / weights.sum()


def _cubic(pf: PolyField, ys, xs, s):
    return ((pf.a[ys, xs] * s + pf.b[ys, xs]) * s + pf.c[ys, xs]) * s + pf.d[ys, xs]


def _cubic_interp(pf: PolyField, xs, ys, s):
    a, b, c, d = coefficients_at(pf, xs, ys)
    return ((a * s + b) * s + c) * s + d


def _sym_eig(p, q, r):
    """Ascending eigenvalues of [[p, q], [q, r]] (vectorised)"""
    mean = 0.5 * (p + r)
    rad = np.sqrt(0.25 * (p - r) ** 2 + q * q)
    return mean - rad, mean + rad


def _classify(psi_lo, psi_hi, nu_hi):
    """+1 maximum, -1 minimum, 0 none"""
    passes = 0.25 * psi_lo * psi_lo > nu_hi
    return np.where(passes & (psi_hi < 0), 1, np.where(passes & (psi_hi > 0), -1, 0))


def _edge_ok(hxx, hxy, hyy, r_max):
    det = hxx * hyy - hxy * hxy
    tr = hxx + hyy
    return (det > 0) & (r_max * tr * tr < (r_max + 1.0) ** 2 * det)


def local_matrices(pfs: Dict[str, PolyField], x: float, y: float, sigma: float,
                   window: float = HARRIS_WINDOW, a: Optional[AffineParams] = None) -> LocalMatrices:
    """Hessian and windowed second-moment matrix of the LoG at (x, y, sigma), octave units.

    The window std is `window` * sigma in the normalised frame of channel `a`.
    """
    offsets, weights = harris_window(window * sigma, a)
    radius = int(np.abs(offsets).max())
    h, w = pfs['log'].shape
    if x < radius or y < radius or x > w - 1 - radius or y > h - 1 - radius:
        raise BorderError(f"({x:.2f}, {y:.2f}) closer than {radius} px to the border")

    hxx = _cubic_interp(pfs['log_dxx'], x, y, sigma)
    hxy = _cubic_interp(pfs['log_dxy'], x, y, sigma)
    hyy = _cubic_interp(pfs['log_dyy'], x, y, sigma)
    xs = x + offsets[:, 1]
    ys = y + offsets[:, 0]
    lx = _cubic_interp(pfs['log_dx'], xs, ys, sigma)
    ly = _cubic_interp(pfs['log_dy'], xs, ys, sigma)
    harris = np.array([
        [np.sum(weights * lx * lx), np.sum(weights * lx * ly)],
        [np.sum(weights * lx * ly), np.sum(weights * ly * ly)],
    ])
    hessian = np.array([[hxx, hxy], [hxy, hyy]], dtype=np.float64)
    return LocalMatrices(hessian, harris)


def _window_moments(pfs: Dict[str, PolyField], ys, xs, s, a: AffineParams, window: float):
    """Second-moment entries (xx, xy, yy) for many integer positions, each with its own sigma window"""
    std = window * s
    cut = np.ceil(2.0 * std)
    offsets, xi = _window_grid(int(cut.max()), a)
    r2 = np.sum(xi * xi, axis=1)
    extent = np.max(np.abs(xi), axis=1)
    h, w = pfs['log_dx'].shape
    out = np.zeros((3, s.size))
    step = max(1, MOMENT_CHUNK // len(offsets))
    for lo in range(0, s.size, step):
        sl = slice(lo, lo + step)
        yy = np.clip(ys[sl, None] + offsets[None, :, 0], 0, h - 1)
        xx = np.clip(xs[sl, None] + offsets[None, :, 1], 0, w - 1)
        ss = s[sl, None]
        lx = _cubic(pfs['log_dx'], yy, xx, ss)
        ly = _cubic(pfs['log_dy'], yy, xx, ss)
        inside = extent[None, :] <= cut[sl, None] + 1e-9
        wgt = np.where(inside, np.exp(-r2[None, :] / (2.0 * std[sl, None] ** 2)), 0.0)
        wgt /= wgt.sum(axis=1, keepdims=True)
        out[0, sl] = np.sum(wgt * lx * lx, axis=1)
        out[1, sl] = np.sum(wgt * lx * ly, axis=1)
        out[2, sl] = np.sum(wgt * ly * ly, axis=1)
    return out


def extremum_test(m: LocalMatrices) -> Optional[ExtremumKind]:
    """1/4 min(psi)^2 > max(nu) plus the sign of max(psi); equality gives None"""
    psi = m.psi
    nu = m.nu
    code = int(_classify(psi[0], psi[1], nu[1]))
    if code == 1:
        return ExtremumKind.MAX
    if code == -1:
        return ExtremumKind.MIN
    return None


def edge_response_filter(hessian: np.ndarray, r_max: float = 10.0) -> bool:
    """Keep iff Det(H) > 0 and Tr(H)^2 / Det(H) < (r+1)^2 / r"""
    return bool(_edge_ok(hessian[0, 0], hessian[0, 1], hessian[1, 1], r_max))


def contrast_threshold(responses: np.ndarray, floor: float = 0.005, ratio: float = 0.024) -> float:
    """max(floor, ratio * median |response|); just the floor when there are no responses"""
    responses = np.abs(np.asarray(responses, dtype=np.float64))
    if responses.size == 0:
        return float(floor)
    return max(float(floor), float(ratio) * float(np.median(responses)))


# -------------------------------
# Candidate scan
# -------------------------------
def scan_octave(pfs: Dict[str, PolyField], level: int, channel: AffineParams,
                cfg: DetectorConfig) -> List[Feature]:
    """Integer-position candidates of one octave (coordinates mapped to the original image)"""
    log_pf = pfs['log']
    h, w = log_pf.shape

    sig_max, sig_min = extremal_scale_maps(log_pf)
    entries = []
    for kind, code, smap in ((ExtremumKind.MAX, 1, sig_max), (ExtremumKind.MIN, -1, sig_min)):
        ys, xs = np.nonzero(np.isfinite(smap))
        s = smap[ys, xs]
        entries.append((kind, code, ys, xs, s, _cubic(log_pf, ys, xs, s)))
    threshold = contrast_threshold(np.concatenate([e[5] for e in entries]),
                                   cfg.contrast, cfg.contrast_ratio)

    candidates = []
    for kind, code, ys, xs, s, resp in entries:
        reach = window_reach(np.ceil(2.0 * cfg.harris_window * s), channel)
        keep = ((np.abs(resp) >= threshold) & (xs >= reach) & (ys >= reach)
                & (xs <= w - 1 - reach) & (ys <= h - 1 - reach))
        ys, xs, s, resp = ys[keep], xs[keep], s[keep], resp[keep]

        hxx = _cubic(pfs['log_dxx'], ys, xs, s)
        hxy = _cubic(pfs['log_dxy'], ys, xs, s)
        hyy = _cubic(pfs['log_dyy'], ys, xs, s)
        keep = _edge_ok(hxx, hxy, hyy, cfg.edge_ratio)
        ys, xs, s, resp = ys[keep], xs[keep], s[keep], resp[keep]
        if ys.size == 0:
            continue

        psi_lo, psi_hi = _sym_eig(hxx[keep], hxy[keep], hyy[keep])
        sxx, sxy, syy = _window_moments(pfs, ys, xs, s, channel, cfg.harris_window)
        _, nu_hi = _sym_eig(sxx, sxy, syy)
        keep = _classify(psi_lo, psi_hi, nu_hi) == code
        for x, y, sig, r in zip(xs[keep], ys[keep], s[keep], resp[keep]):
            candidates.append(Feature(
                x=from_octave(float(x), level), y=from_octave(float(y), level),
                sigma=float(sig) * 2 ** level, kind=kind, octave=level,
                response=float(r), channel=channel,
            ))
    logger.debug(f"Octave {level} [{channel.label}]: {len(candidates)} candidate(s), "
                 f"contrast threshold {threshold:.4f}")
    return candidates


# -------------------------------
# Sub-pixel refinement
# -------------------------------
def _scale_of_kind(pfs, x, y, kind):
    a, b, c, _ = coefficients_at(pfs['log'], x, y)
    smax, smin = critical_scales(a, b, c)
    s = float(smax if kind == ExtremumKind.MAX else smin)
    return None if math.isnan(s) else s


def refine_subpixel(pfs: Dict[str, PolyField], cand: Feature, max_iterations: int = 5,
                    window: float = HARRIS_WINDOW, edge_ratio: float = 10.0) -> Feature:
    """Newton step on the LoG; re-centre while the step exceeds half a pixel.

    Derivatives live in the channel's normalised frame with sigma^3 / sigma^4 normalisation,
    so the step is A (-sigma H^-1 g) in octave pixels.
    """
    level = cand.octave
    ox, oy = cand.octave_position()
    ix, iy = int(round(ox)), int(round(oy))
    s = cand.octave_sigma
    A = cand.channel.A
    h, w = pfs['log'].shape

    def inside(px, py, sigma):
        margin = max(int(window_reach(math.ceil(2.0 * window * sigma), cand.channel)), 1)
        return margin <= px < w - margin and margin <= py < h - margin

    for _ in range(max_iterations):
        if not inside(ix, iy, s):
            raise RefinementRejected(f"drifted out of bounds at ({ix}, {iy})")
        g = np.array([_cubic(pfs['log_dx'], iy, ix, s), _cubic(pfs['log_dy'], iy, ix, s)])
        hxx = _cubic(pfs['log_dxx'], iy, ix, s)
        hxy = _cubic(pfs['log_dxy'], iy, ix, s)
        hyy = _cubic(pfs['log_dyy'], iy, ix, s)
        det = hxx * hyy - hxy * hxy
        if abs(det) < SINGULAR_DET:
            raise RefinementRejected(f"singular Hessian at ({ix}, {iy})")
        H = np.array([[hxx, hxy], [hxy, hyy]])
        offset = A @ (-s * np.linalg.solve(H, g))
        if abs(offset[0]) > 0.5 or abs(offset[1]) > 0.5:
            ix += int(round(offset[0]))
            iy += int(round(offset[1]))
            if not inside(ix, iy, s):
                raise RefinementRejected(f"drifted out of bounds at ({ix}, {iy})")
            s = _scale_of_kind(pfs, ix, iy, cand.kind)
            if s is None:
                raise RefinementRejected(f"no extremal scale after moving to ({ix}, {iy})")
            continue

        fx, fy = ix + offset[0], iy + offset[1]
        s = _scale_of_kind(pfs, fx, fy, cand.kind) or s
        try:
            m = local_matrices(pfs, fx, fy, s, window, cand.channel)
        except BorderError as e:
            raise RefinementRejected(str(e))
        if extremum_test(m) != cand.kind or not edge_response_filter(m.hessian, edge_ratio):
            raise RefinementRejected(f"re-check failed at ({fx:.2f}, {fy:.2f})")
        return Feature(
            x=from_octave(fx, level), y=from_octave(fy, level), sigma=s * 2 ** level,
            kind=cand.kind, octave=level, response=eval_poly(pfs['log'], fx, fy, s),
            channel=cand.channel,
        )
    raise RefinementRejected(f"no convergence within {max_iterations} iterations")


# -------------------------------
# Full detection
# -------------------------------
def detect_in_pyramid(pyr: Pyramid, cfg: DetectorConfig) -> List[Feature]:
    features = []
    rejected = 0
    for octave in pyr.octaves:
        filled = log_and_derivatives(octave, pyr.channel)
        pfs = octave_polyfields(filled, DERIVATIVE_STACKS)
        for cand in scan_octave(pfs, octave.level, pyr.channel, cfg):
            try:
                features.append(refine_subpixel(pfs, cand, cfg.refine_iterations,
                                                cfg.harris_window, cfg.edge_ratio))
            except RefinementRejected as e:
                rejected += 1
                logger.debug(f"Candidate at ({cand.x:.1f}, {cand.y:.1f}) rejected: {e}")
    logger.info(f"Channel [{pyr.channel.label}]: {len(features)} feature(s), {rejected} rejected in refinement")
    return features


def octave_count(shape, channel: AffineParams, requested: int) -> int:
    n = min(requested, max_octaves(shape, channel))
    if n < 1:
        raise SizeError(f"{shape[1]}x{shape[0]} image is too small for channel [{channel.label}]")
    return n


def detect_channel(img: GrayImage, channel: AffineParams, cfg: DetectorConfig) -> List[Feature]:
    n = octave_count(img.shape, channel, cfg.n_octaves)
    return detect_in_pyramid(build_pyramid(img, channel, n), cfg)


def _detect_or_skip(img: GrayImage, channel: AffineParams, cfg: DetectorConfig) -> Optional[List[Feature]]:
    try:
        return detect_channel(img, channel, cfg)
    except SizeError as e:
        logger.warning(f"Skipping channel [{channel.label}]: {e}")
        return None


def deduplicate(features: Sequence[Feature], distance: float = 2.0, scale: float = 0.2) -> List[Feature]:
    """Greedy by |response|: drop a feature within `distance` px and `scale` relative sigma of a kept one"""
    if not features:
        return []
    order = sorted(features, key=lambda f: (-abs(f.response),) + f.sort_key())
    tree = cKDTree(np.array([[f.x, f.y] for f in order]))
    sigmas = np.array([f.sigma for f in order])
    kept_mask = np.zeros(len(order), dtype=bool)
    for i, f in enumerate(order):
        near = tree.query_ball_point([f.x, f.y], r=distance)
        clash = any(
            kept_mask[j] and abs(sigmas[j] - f.sigma) <= scale * max(sigmas[j], f.sigma)
            for j in near
        )
        if not clash:
            kept_mask[i] = True
    return [f for f, keep in zip(order, kept_mask) if keep]


def detect(img: GrayImage, channels: Sequence[AffineParams], cfg: DetectorConfig,
           threads: int = 1) -> List[Feature]:
    """Detect under every channel, merge duplicates and sort by (octave, y, x, sigma)"""
    if not channels:
        raise ValueError("detect needs at least one channel")
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        per_channel = list(pool.map(lambda a: _detect_or_skip(img, a, cfg), channels))
    if all(feats is None for feats in per_channel):
        raise SizeError(f"{img.shape[1]}x{img.shape[0]} image is too small for every channel")
    merged = [f for feats in per_channel if feats is not None for f in feats]
    unique = deduplicate(merged, cfg.dedup_distance, cfg.dedup_scale)
    unique.sort(key=Feature.sort_key)
    logger.info(f"Detected {len(unique)} feature(s) over {len(channels)} channel(s) "
                f"({len(merged) - len(unique)} duplicate(s) merged)")
    return unique


__all__ = [
    'HARRIS_WINDOW', 'window_reach', 'harris_window', 'local_matrices', 'extremum_test',
    'edge_response_filter', 'contrast_threshold', 'scan_octave',
    'refine_subpixel', 'detect_in_pyramid', 'detect_channel', 'octave_count', 'deduplicate',
    'detect',
]
