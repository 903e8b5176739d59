# src/models/features.py
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np

from src.errors import DegenerateTransformError, ScaleError

MIN_DET = 1e-9
MAX_SIGMA = 64.0


def rotation(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def wrap_angle(theta):
    """Map angles onto [0, 2pi); values that round up to 2pi become 0"""
    wrapped = np.mod(theta, 2 * np.pi)
    return np.where(wrapped >= 2 * np.pi, 0.0, wrapped)


def to_octave(value, octave: int):
    """Original-image coordinate -> coordinate in an octave raster (2x2 block sampling)"""
    return (value + 0.5) / (2 ** octave) - 0.5


def from_octave(value, octave: int):
    return (value + 0.5) * (2 ** octave) - 0.5


@dataclass(frozen=True, eq=False)
class AffineParams:
    """Model for an affine channel: matrix A and scale sigma, Sigma_s = A sigma^2 A^T"""
    A: np.ndarray
    sigma: float = 1.0

    def __post_init__(self):
        a = np.array(self.A, dtype=np.float64).reshape(2, 2)
        if not np.all(np.isfinite(a)) or abs(np.linalg.det(a)) <= MIN_DET:
            raise DegenerateTransformError(f"Affine matrix is singular: {a.tolist()}")
        if not (0 < self.sigma <= MAX_SIGMA):
            raise ScaleError(f"sigma must be in (0, {MAX_SIGMA}], got {self.sigma}")
        a.setflags(write=False)
        object.__setattr__(self, 'A', a)
        object.__setattr__(self, 'sigma', float(self.sigma))

    @classmethod
    def identity(cls, sigma: float = 1.0) -> "AffineParams":
        return cls(np.eye(2), sigma)

    @classmethod
    def from_tilt(cls, tilt: float, phi: float, sigma: float = 1.0) -> "AffineParams":
        """A = R(phi) diag(tilt, 1)"""
        return cls(rotation(phi) @ np.diag([tilt, 1.0]), sigma)

    def with_sigma(self, sigma: float) -> "AffineParams":
        return AffineParams(self.A, sigma)

    @property
    def covariance(self) -> np.ndarray:
        return self.sigma ** 2 * self.A @ self.A.T

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.A, 2))

    @property
    def inverse(self) -> np.ndarray:
        return np.linalg.inv(self.A)

    def is_identity(self, tol: float = 1e-12) -> bool:
        return bool(np.allclose(self.A, np.eye(2), atol=tol, rtol=0))

    def same_transform(self, other: "AffineParams", tol: float = 1e-12) -> bool:
        return bool(np.allclose(self.A, other.A, atol=tol, rtol=0))

    @property
    def label(self) -> str:
        return " ".join(f"{v:.6f}" for v in self.A.ravel())

    def to_dict(self):
        a = self.A
        return {
            'a11': float(a[0, 0]), 'a12': float(a[0, 1]),
            'a21': float(a[1, 0]), 'a22': float(a[1, 1]),
            'sigma': self.sigma,
        }


class ExtremumKind(str, Enum):
    MAX = "max"
    MIN = "min"


@dataclass
class Feature:
    """Model for a detected interest point (coordinates and sigma in original-image units)"""
    x: float
    y: float
    sigma: float
    kind: ExtremumKind
    octave: int
    response: float
    channel: AffineParams
    orientations: List[float] = field(default_factory=list)

    @property
    def octave_sigma(self) -> float:
        return self.sigma / (2 ** self.octave)

    def octave_position(self) -> Tuple[float, float]:
        return to_octave(self.x, self.octave), to_octave(self.y, self.octave)

    def ellipse(self, scale: float = 1.0) -> Tuple[float, float, float]:
        """(a, b, c) with a x^2 + 2 b x y + c y^2 = 1 for the region scale*sigma*A*disk"""
        cov = (scale * self.sigma) ** 2 * self.channel.A @ self.channel.A.T
        inv = np.linalg.inv(cov)
        return float(inv[0, 0]), float(inv[0, 1]), float(inv[1, 1])

    def sort_key(self):
        return (self.octave, self.y, self.x, self.sigma)

    def to_dict(self):
        row = {
            'x': self.x,
            'y': self.y,
            'sigma': self.sigma,
            'kind': self.kind.value,
            'octave': self.octave,
            'response': self.response,
        }
        a = self.channel.A
        row.update({'a11': a[0, 0], 'a12': a[0, 1], 'a21': a[1, 0], 'a22': a[1, 1]})
        row['orientations'] = " ".join(f"{t:.6f}" for t in self.orientations)
        return row


@dataclass(frozen=True)
class LocalMatrices:
    """Hessian of the LoG response and the windowed second-moment (Harris) matrix of its gradient"""
    hessian: np.ndarray
    harris: np.ndarray

    @property
    def psi(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.hessian)

    @property
    def nu(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.harris)


@dataclass(frozen=True)
class GradientPatch:
    side: int
    gx: np.ndarray
    gy: np.ndarray

    @property
    def magnitude(self) -> np.ndarray:
        return np.hypot(self.gx, self.gy)

    @property
    def orientation(self) -> np.ndarray:
        return wrap_angle(np.arctan2(self.gy, self.gx))


@dataclass
class Descriptor128:
    """Model for one quantized 4x4x8 histogram attached to a feature and orientation"""
    values: np.ndarray
    feature: Optional[Feature] = None
    orientation: float = 0.0
    vector: Optional[np.ndarray] = None

    def __post_init__(self):
        vals = np.asarray(self.values)
        if vals.shape != (128,):
            raise ValueError(f"Descriptor needs 128 values, got {vals.shape}")
        self.values = vals.astype(np.uint8)

    @property
    def x(self) -> float:
        return self.feature.x

    @property
    def y(self) -> float:
        return self.feature.y

    def to_dict(self):
        row = {'orientation': self.orientation, 'values': self.values.tolist()}
        if self.feature is not None:
            row.update({'x': self.feature.x, 'y': self.feature.y, 'sigma': self.feature.sigma})
        return row


@dataclass(frozen=True)
class Match:
    index_a: int
    index_b: int
    distance: float
    ratio: float

    def to_dict(self):
        return {
            'index_a': self.index_a,
            'index_b': self.index_b,
            'distance': self.distance,
            'ratio': self.ratio,
        }
