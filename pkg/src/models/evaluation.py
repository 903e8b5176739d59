# src/models/evaluation.py
from dataclasses import dataclass, field
from typing import List

import numpy as np
import pandas as pd

from src.models.image import GrayImage

REPORT_COLUMNS = ['pair', 'repeatability', 'n_corr', 'matching_score', 'n_matches']


@dataclass
class Sequence:
    """Image sequence with homographies H(1->k) from image 1 to image k (H(1->1) = I)"""
    images: List[GrayImage]
    homographies: List[np.ndarray]
    name: str = ""

    def __post_init__(self):
        if len(self.images) != len(self.homographies):
            raise ValueError("one homography per image is required")

    def __len__(self):
        return len(self.images)

    def pairs(self):
        """(k, image_k, H(1->k)) for k = 2..N"""
        return [(k + 1, self.images[k], self.homographies[k]) for k in range(1, len(self.images))]


@dataclass
class Correspondences:
    """One-to-one region correspondences between two feature sets"""
    pairs: List[tuple]
    overlap_errors: List[float]
    n_visible_a: int
    n_visible_b: int

    @property
    def count(self) -> int:
        return len(self.pairs)

    @property
    def denominator(self) -> int:
        return min(self.n_visible_a, self.n_visible_b)

    @property
    def repeatability(self) -> float:
        return self.count / self.denominator if self.denominator else 0.0


@dataclass
class PairReport:
    pair: str
    repeatability: float
    n_corr: int
    matching_score: float
    n_matches: int
    n_features_a: int = 0
    n_features_b: int = 0

    def to_dict(self):
        return {
            'pair': self.pair,
            'repeatability': self.repeatability,
            'n_corr': self.n_corr,
            'matching_score': self.matching_score,
            'n_matches': self.n_matches,
        }


@dataclass
class EvalReport:
    sequence: str = ""
    pairs: List[PairReport] = field(default_factory=list)

    def to_frame(self) -> pd.DataFrame:
        rows = [p.to_dict() for p in self.pairs]
        return pd.DataFrame(rows, columns=REPORT_COLUMNS)

    def to_dict(self):
        return {'sequence': self.sequence, 'pairs': [p.to_dict() for p in self.pairs]}
