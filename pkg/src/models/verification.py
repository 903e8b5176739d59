# src/models/verification.py
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np


@dataclass(frozen=True)
class LdrModel:
    """Histogram of log distance ratios against the outlier model.

    f: outlier probabilities per bin, h: observed counts, beta: outlier mass,
    d = h - beta * f: the outlier-normal residual that carries the inlier structure.
    """
    bins: int
    bounds: Tuple[float, float]
    f: np.ndarray
    h: np.ndarray
    beta: float
    d: np.ndarray

    @property
    def width(self) -> float:
        return (self.bounds[1] - self.bounds[0]) / self.bins

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(self.bounds[0], self.bounds[1], self.bins + 1)

    @property
    def n_pairs(self) -> int:
        return int(round(float(self.h.sum())))

    def to_dict(self):
        return {
            'bins': self.bins,
            'bounds': list(self.bounds),
            'f': self.f.tolist(),
            'h': self.h.tolist(),
            'beta': self.beta,
            'd': self.d.tolist(),
        }


@dataclass(frozen=True)
class GoodnessOfFit:
    """Pearson chi-square comparison of the LDR histogram with the outlier model"""
    statistic: float
    critical: float
    dof: int
    alpha: float

    @property
    def passed(self) -> bool:
        # above the quantile the histogram is not explained by outliers alone
        return self.statistic > self.critical

    @property
    def decision(self) -> str:
        return "pass" if self.passed else "reject"

    def to_dict(self):
        return {
            'chi2': self.statistic,
            'critical': self.critical,
            'dof': self.dof,
            'alpha': self.alpha,
            'decision': self.decision,
        }


@dataclass(frozen=True)
class InlierResult:
    m_hat: float
    eigenvalue: float
    eigenvector: np.ndarray
    inlier_indices: np.ndarray
    low_confidence: bool = False
    iterations: int = 0

    @property
    def count(self) -> int:
        return int(len(self.inlier_indices))

    def to_dict(self):
        return {
            'm_hat': self.m_hat,
            'eigenvalue': self.eigenvalue,
            'inliers': self.inlier_indices.tolist(),
            'low_confidence': self.low_confidence,
            'iterations': self.iterations,
        }


@dataclass(frozen=True)
class VerificationSummary:
    """Outcome of geometric verification for one image pair"""
    n_matches: int
    model: LdrModel
    fit: Optional[GoodnessOfFit]
    inliers: Optional[InlierResult] = None

    @property
    def decision(self) -> str:
        return "pass" if self.inliers is not None else "reject"

    @property
    def m_hat(self) -> float:
        return self.inliers.m_hat if self.inliers is not None else 0.0

    @property
    def chi2(self) -> float:
        return self.fit.statistic if self.fit is not None else float('nan')

    def summary_line(self) -> str:
        return f"{self.n_matches} {self.m_hat:.3f} {self.model.beta:.6f} {self.chi2:.6f} {self.decision}"

    def to_dict(self):
        return {
            'n_matches': self.n_matches,
            'decision': self.decision,
            'm_hat': self.m_hat,
            'beta': self.model.beta,
            'chi2': self.chi2,
            'inliers': self.inliers.inlier_indices.tolist() if self.inliers is not None else [],
        }
