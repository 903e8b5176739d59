# src/services/synthetic.py
"""Synthetic blob images and homography warps with known ground truth."""
import logging
import math
from typing import Iterable, Optional, Sequence as Seq, Tuple

import numpy as np
from scipy import ndimage

from src.models.evaluation import Sequence
from src.models.features import rotation
from src.models.image import GrayImage

logger = logging.getLogger(__name__)

Blob = Tuple[float, float, float, float]  # x, y, std, amplitude


def render_blobs(shape: Tuple[int, int], blobs: Iterable[Blob], background: float = 0.0) -> GrayImage:
    """Sum of isotropic Gaussian bumps on a constant background"""
    h, w = shape
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    data = np.full(shape, float(background))
    for x, y, std, amp in blobs:
        data += amp * np.exp(-((xs - x) ** 2 + (ys - y) ** 2) / (2.0 * std * std))
    return GrayImage(data)


def random_blobs(shape: Tuple[int, int], count: int, seed: int = 0, std_range=(2.0, 6.0),
                 margin: float = 16.0) -> list:
    """Blobs of random position, size and sign kept away from the border"""
    rng = np.random.default_rng(seed)
    h, w = shape
    xs = rng.uniform(margin, w - 1 - margin, count)
    ys = rng.uniform(margin, h - 1 - margin, count)
    stds = rng.uniform(std_range[0], std_range[1], count)
    amps = rng.choice([-1.0, 1.0], count) * rng.uniform(0.4, 1.0, count)
    return list(zip(xs, ys, stds, amps))


def affine_homography(A: np.ndarray, center_in: Seq[float], center_out: Seq[float]) -> np.ndarray:
    """3x3 homography x -> A (x - center_in) + center_out"""
    A = np.asarray(A, dtype=np.float64).reshape(2, 2)
    H = np.eye(3)
    H[:2, :2] = A
    H[:2, 2] = np.asarray(center_out) - A @ np.asarray(center_in)
    return H


def tilt_homography(tilt: float, phi: float, shape: Tuple[int, int]) -> np.ndarray:
    """Compression by 1/tilt along direction phi (radians) about the image centre"""
    R = rotation(phi)
    A = R @ np.diag([1.0 / tilt, 1.0]) @ R.T
    center = ((shape[1] - 1) / 2.0, (shape[0] - 1) / 2.0)
    return affine_homography(A, center, center)


def rotation_homography(theta: float, shape: Tuple[int, int]) -> np.ndarray:
    center = ((shape[1] - 1) / 2.0, (shape[0] - 1) / 2.0)
    return affine_homography(rotation(theta), center, center)


def warp_image(img: GrayImage, H: np.ndarray, shape: Optional[Tuple[int, int]] = None,
               fill: float = 0.0) -> GrayImage:
    """Resample img so that output pixel p shows input point H^-1 p (cubic spline interpolation)"""
    shape = shape or img.shape
    h, w = shape
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    pts = np.vstack([xs.ravel(), ys.ravel(), np.ones(h * w)])
    src = np.linalg.inv(np.asarray(H, dtype=np.float64)) @ pts
    src = src[:2] / src[2]
    out = ndimage.map_coordinates(img.data, [src[1], src[0]], order=3, mode='constant', cval=fill)
    return GrayImage(out.reshape(shape))


def similarity_matches(n_inliers: int, n_outliers: int, frame: float = 512.0, seed: int = 0):
    """Matched point sets: inliers related by a random similarity, outliers independent uniform.

    Returns (X, Y, is_inlier) with the rows shuffled.
    """
    rng = np.random.default_rng(seed)
    n = n_inliers + n_outliers
    X = rng.uniform(0.0, frame, (n, 2))
    scale = float(np.exp(rng.uniform(np.log(0.5), np.log(2.0))))
    R = rotation(rng.uniform(0.0, 2.0 * np.pi))
    center = np.array([frame / 2.0, frame / 2.0])
    Y = (X - center) @ (scale * R).T + center
    Y[n_inliers:] = rng.uniform(0.0, frame, (n_outliers, 2))
    is_inlier = np.arange(n) < n_inliers
    order = rng.permutation(n)
    return X[order], Y[order], is_inlier[order]


def tilt_sequence(img: GrayImage, tilts: Iterable[float], phi: float = 0.0, name: str = "tilt") -> Sequence:
    """img followed by one synthetic tilted view per tilt"""
    images = [img]
    homographies = [np.eye(3)]
    for t in tilts:
        H = tilt_homography(t, phi, img.shape)
        images.append(warp_image(img, H, fill=float(np.mean(img.data))))
        homographies.append(H)
    logger.info(f"Synthesised {len(images) - 1} tilted view(s) at {math.degrees(phi):.0f} deg")
    return Sequence(images, homographies, name)


__all__ = [
    'render_blobs', 'random_blobs', 'affine_homography', 'tilt_homography',
    'rotation_homography', 'warp_image', 'similarity_matches', 'tilt_sequence',
]
