# src/services/imagecore.py
"""Raster I/O and the convolution primitives every later stage is built on.

Coordinates: x is the column, y the row. Kernels are indexed weights[dy + r, dx + r]
and applied as true convolutions with edge replication.
"""
import logging
import math
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy import ndimage, signal

from src.errors import ImageFormatError, ImageIOError, SizeError
from src.models.features import AffineParams
from src.models.image import GrayImage, Kernel2D

logger = logging.getLogger(__name__)

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])
SUPPORTED_FORMATS = {"PPM", "PNG"}  # PIL reports PGM files as PPM
COLOR_MODES = {"RGB", "RGBA", "P", "LA", "PA"}
TRUNCATION = 3.0
DERIVATIVE_TRUNCATION = 4.0
FFT_MIN_RADIUS = 8

DERIVATIVE_ORDERS = (
    'dx', 'dy', 'dxx', 'dxy', 'dyy',
    'log', 'log_dx', 'log_dy', 'log_dxx', 'log_dxy', 'log_dyy',
)


# -------------------------------
# Loading and saving
# -------------------------------
def load_image(path) -> GrayImage:
    """Read an 8-bit PGM/PPM/PNG file as luminance in [0, 1]"""
    path = Path(path)
    try:
        with Image.open(path) as im:
            im.load()
            fmt, mode = im.format, im.mode
            if fmt not in SUPPORTED_FORMATS:
                raise ImageFormatError(f"{path}: unsupported image format {fmt}")
            if mode == "1":
                im = im.convert("L")
                mode = "L"
            if mode == "L":
                data = np.asarray(im, dtype=np.float64) / 255.0
            elif mode in COLOR_MODES:
                rgb = np.asarray(im.convert("RGB"), dtype=np.float64)
                data = rgb @ LUMA_WEIGHTS / 255.0
            else:
                raise ImageFormatError(f"{path}: unsupported pixel mode {mode} (8-bit only)")
    except UnidentifiedImageError as e:
        raise ImageFormatError(f"{path}: not a recognised image: {e}")
    except OSError as e:
        raise ImageIOError(f"{path}: cannot read image: {e}")

    logger.debug(f"Loaded {path} ({data.shape[1]}x{data.shape[0]}, {fmt}/{mode})")
    return GrayImage(data)


def save_pgm(img, path) -> Path:
    """Dump a raster as 8-bit PGM with values mapped affinely onto 0..255"""
    data = img.data if isinstance(img, GrayImage) else np.asarray(img, dtype=np.float64)
    lo, hi = float(data.min()), float(data.max())
    if hi > lo:
        scaled = (data - lo) / (hi - lo) * 255.0
    else:
        scaled = np.zeros_like(data)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.round(scaled).astype(np.uint8)).save(path, format="PPM")
    return path


# -------------------------------
# Kernels
# -------------------------------
def _offsets(radius):
    ax = np.arange(-radius, radius + 1, dtype=np.float64)
    dy, dx = np.meshgrid(ax, ax, indexing='ij')
    return dx, dy


def _precision(a: AffineParams):
    cov = a.covariance
    return cov, np.linalg.inv(cov)


def anisotropic_gaussian_kernel(a: AffineParams, truncation: float = TRUNCATION) -> Kernel2D:
    """Sampled g(eta, Sigma_s), Sigma_s = A sigma^2 A^T, truncated at `truncation` std along the widest axis"""
    cov, P = _precision(a)
    radius = int(math.ceil(truncation * a.sigma * a.norm))
    dx, dy = _offsets(radius)
    q = P[0, 0] * dx * dx + 2.0 * P[0, 1] * dx * dy + P[1, 1] * dy * dy
    weights = np.exp(-0.5 * q)
    weights /= weights.sum()

    factors = None
    if abs(cov[0, 1]) <= 1e-12 * max(cov[0, 0], cov[1, 1]):
        ax = np.arange(-radius, radius + 1, dtype=np.float64)
        kx = np.exp(-0.5 * ax * ax / cov[0, 0])
        ky = np.exp(-0.5 * ax * ax / cov[1, 1])
        factors = (ky / ky.sum(), kx / kx.sum())
    return Kernel2D(weights, factors)


def gaussian_derivative_kernel(a: AffineParams, order: str) -> Kernel2D:
    """Analytic derivative of the affine Gaussian (or of its Laplacian), sampled and zero-sum corrected.

    Derivatives are taken in the channel's normalised frame xi = A^-1 eta, where the
    affine Gaussian is isotropic with variance sigma^2. With u = xi / sigma^2 the
    gradient is -u g, the Hessian (u u^T - I / sigma^2) g and the LoG (|u|^2 - 2 / sigma^2) g;
    log_* orders differentiate the LoG again. For A = I these are the usual image derivatives.
    """
    if order not in DERIVATIVE_ORDERS:
        raise ValueError(f"Unknown derivative order '{order}'")
    cov, P = _precision(a)
    radius = int(math.ceil(DERIVATIVE_TRUNCATION * a.sigma * a.norm))
    dx, dy = _offsets(radius)
    q = P[0, 0] * dx * dx + 2.0 * P[0, 1] * dx * dy + P[1, 1] * dy * dy
    g = np.exp(-0.5 * q) / (2.0 * math.pi * math.sqrt(np.linalg.det(cov)))

    inv = a.inverse
    s2 = a.sigma * a.sigma
    ux = (inv[0, 0] * dx + inv[0, 1] * dy) / s2
    uy = (inv[1, 0] * dx + inv[1, 1] * dy) / s2
    Q = ux * ux + uy * uy - 2.0 / s2
    c = 1.0 / s2

    if order == 'dx':
        w = -ux * g
    elif order == 'dy':
        w = -uy * g
    elif order == 'dxx':
        w = (ux * ux - c) * g
    elif order == 'dxy':
        w = ux * uy * g
    elif order == 'dyy':
        w = (uy * uy - c) * g
    elif order == 'log':
        w = Q * g
    elif order == 'log_dx':
        w = (2.0 * c - Q) * ux * g
    elif order == 'log_dy':
        w = (2.0 * c - Q) * uy * g
    elif order == 'log_dxx':
        w = (2.0 * c * c - 4.0 * c * ux * ux - Q * c + Q * ux * ux) * g
    elif order == 'log_dxy':
        w = (Q - 4.0 * c) * ux * uy * g
    else:
        w = (2.0 * c * c - 4.0 * c * uy * uy - Q * c + Q * uy * uy) * g

    # derivative kernels must annihilate constants
    w = w - w.sum() * (g / g.sum())
    return Kernel2D(w)


# -------------------------------
# Convolution and resampling
# -------------------------------
def convolve_array(data: np.ndarray, k: Kernel2D) -> np.ndarray:
    """Same-size convolution with edge replication; picks separable, dense or FFT evaluation"""
    r = k.radius
    if r >= min(data.shape):
        raise SizeError(f"Kernel radius {r} does not fit a {data.shape[1]}x{data.shape[0]} raster")
    if k.separable:
        ky, kx = k.factors
        out = ndimage.convolve1d(data, kx, axis=1, mode='nearest')
        return ndimage.convolve1d(out, ky, axis=0, mode='nearest')
    if r >= FFT_MIN_RADIUS:
        padded = np.pad(data, r, mode='edge')
        return signal.fftconvolve(padded, k.weights, mode='valid')
    return ndimage.convolve(data, k.weights, mode='nearest')


def convolve(img: GrayImage, k: Kernel2D) -> GrayImage:
    return GrayImage(convolve_array(img.data, k))


def downsample2_array(data: np.ndarray) -> np.ndarray:
    h, w = data.shape
    if h < 2 or w < 2:
        raise SizeError(f"Cannot halve a {w}x{h} raster")
    h2, w2 = h // 2, w // 2
    return data[:2 * h2, :2 * w2].reshape(h2, 2, w2, 2).mean(axis=(1, 3))


def downsample2(img: GrayImage) -> GrayImage:
    """Average 2x2 blocks; odd trailing rows/columns are dropped"""
    return GrayImage(downsample2_array(img.data))


def sample_bilinear(data: np.ndarray, xs, ys) -> np.ndarray:
    """Bilinear interpolation at (x, y) positions; positions are clamped to the raster"""
    coords = np.vstack([np.ravel(ys), np.ravel(xs)]).astype(np.float64)
    values = ndimage.map_coordinates(data, coords, order=1, mode='nearest')
    return values.reshape(np.shape(xs))


def finite_difference_gradient(img: GrayImage):
    """Central differences 0.5 (I(x+1) - I(x-1)); one-sided on the border"""
    gy, gx = np.gradient(img.data)
    return gx, gy


__all__ = [
    'load_image', 'save_pgm', 'anisotropic_gaussian_kernel', 'gaussian_derivative_kernel',
    'convolve', 'convolve_array', 'downsample2', 'downsample2_array', 'sample_bilinear',
    'finite_difference_gradient', 'DERIVATIVE_ORDERS',
]
