# src/models/image.py
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np


@dataclass(frozen=True)
class GrayImage:
    """Model for a single-channel floating point raster (row = y, column = x)"""
    data: np.ndarray

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64, copy=True)
        if arr.ndim != 2 or arr.size == 0:
            raise ValueError(f"GrayImage needs a non-empty 2-D array, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("GrayImage values must be finite")
        arr.setflags(write=False)
        object.__setattr__(self, 'data', arr)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.data.shape

    def to_dict(self):
        return {
            'width': self.width,
            'height': self.height,
            'min': float(self.data.min()),
            'max': float(self.data.max()),
        }


@dataclass(frozen=True)
class Kernel2D:
    """Model for a square convolution kernel of odd side 2*radius+1.

    ``factors`` holds (ky, kx) when the kernel is the outer product of two 1-D kernels.
    """
    weights: np.ndarray
    factors: Optional[Tuple[np.ndarray, np.ndarray]] = None

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] != w.shape[1] or w.shape[0] % 2 == 0:
            raise ValueError(f"Kernel2D needs an odd square array, got shape {w.shape}")
        object.__setattr__(self, 'weights', w)

    @property
    def radius(self) -> int:
        return self.weights.shape[0] // 2

    @property
    def separable(self) -> bool:
        return self.factors is not None

    def total(self) -> float:
        return float(self.weights.sum())

    def to_dict(self):
        return {
            'radius': self.radius,
            'sum': self.total(),
            'separable': self.separable,
        }
