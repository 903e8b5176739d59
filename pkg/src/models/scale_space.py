# src/models/scale_space.py
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, List, Optional, Tuple

import numpy as np

from src.models.features import AffineParams, wrap_angle

DERIVATIVE_STACKS = ('log', 'log_dx', 'log_dy', 'log_dxx', 'log_dxy', 'log_dyy')
GRADIENT_STACKS = ('grad_x', 'grad_y')


@dataclass(frozen=True)
class PolyParamMatrix:
    """Model for the constant 4x4 matrix mapping four scale samples to cubic coefficients"""
    M: np.ndarray
    scales: Tuple[float, float, float, float]


@dataclass(frozen=True)
class PolyField:
    """Per-pixel cubic f(sigma) = a sigma^3 + b sigma^2 + c sigma + d"""
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray

    @property
    def shape(self) -> Tuple[int, int]:
        return self.a.shape

    @property
    def coefficients(self) -> np.ndarray:
        return np.stack([self.a, self.b, self.c, self.d])

    def value(self, sigma) -> np.ndarray:
        """Whole-raster evaluation; sigma is a scalar or a raster of the same shape"""
        return ((self.a * sigma + self.b) * sigma + self.c) * sigma + self.d


@dataclass
class Octave:
    """One pyramid level: four samples of each stack on a 2**-level grid.

    ``base`` holds the raster at scale scales[0]/sqrt(2) that seeds the first
    derivative samples through the semi-group split.
    """
    level: int
    scales: Tuple[float, float, float, float]
    gauss: List[np.ndarray]
    base: np.ndarray
    stacks: Dict[str, List[np.ndarray]] = field(default_factory=dict)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.gauss[0].shape

    def __getattr__(self, name):
        # log, log_dx, ..., grad_y read straight from the stack table
        stacks = self.__dict__.get('stacks', {})
        if name in stacks:
            return stacks[name]
        raise AttributeError(name)

    def to_dict(self):
        return {
            'level': self.level,
            'scales': list(self.scales),
            'height': self.shape[0],
            'width': self.shape[1],
            'stacks': sorted(self.stacks),
        }


@dataclass
class Pyramid:
    """Gaussian pyramid of one image under one affine channel"""
    channel: AffineParams
    octaves: List[Octave]
    image_shape: Tuple[int, int]

    @property
    def n_octaves(self) -> int:
        return len(self.octaves)

    def to_dict(self):
        return {
            'channel': self.channel.label,
            'octaves': [o.to_dict() for o in self.octaves],
        }


@dataclass
class GradientField:
    """Affine Gaussian gradient of one octave at a fixed octave-relative sigma.

    The field is kept as two cubic fits so any position can be sampled exactly;
    ``gx``/``gy`` materialise the full rasters on first access.
    """
    poly_x: PolyField
    poly_y: PolyField
    sigma: float
    octave: int = 0
    # gradients are expressed in this channel's normalised frame (None: image frame)
    channel: Optional[AffineParams] = None

    @classmethod
    def from_rasters(cls, gx: np.ndarray, gy: np.ndarray, sigma: float = 1.6, octave: int = 0,
                     channel: Optional[AffineParams] = None):
        zeros = np.zeros_like(np.asarray(gx, dtype=np.float64))
        px = PolyField(zeros, zeros, zeros, np.asarray(gx, dtype=np.float64))
        py = PolyField(zeros, zeros, zeros, np.asarray(gy, dtype=np.float64))
        return cls(px, py, sigma, octave, channel)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.poly_x.shape

    @cached_property
    def gx(self) -> np.ndarray:
        return self.poly_x.value(self.sigma)

    @cached_property
    def gy(self) -> np.ndarray:
        return self.poly_y.value(self.sigma)

    @property
    def magnitude(self) -> np.ndarray:
        return np.hypot(self.gx, self.gy)

    @property
    def orientation(self) -> np.ndarray:
        return wrap_angle(np.arctan2(self.gy, self.gx))
