# src/services/geomcheck.py
"""Statistical geometric verification of a set of putative matches.

Pairwise log distance ratios (LDR) between matched points are histogrammed and
compared against the distribution produced by outlier pairs. A chi-square test
rejects image pairs whose histogram is explained by outliers alone; otherwise the
residual over the outlier model defines an inlier matrix whose dominant eigenvector
ranks the matches.
"""
import logging
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.distance import pdist
from scipy.stats import chi2

from src.config import VerifyConfig
from src.errors import ModelError, NoInlierStructureError, NumericError, TooFewMatchesError
from src.models.features import Match
from src.models.verification import GoodnessOfFit, InlierResult, LdrModel, VerificationSummary

logger = logging.getLogger(__name__)

MIN_MATCHES = 5
MIN_SEPARATION = 1e-6
MIN_SAMPLES = 25
MIN_EXPECTED = 1e-9
ACCEPT_CHANGE = 1e-4

Bounds = Tuple[float, float]
DEFAULT_BOUNDS: Bounds = (-2.5, 2.5)


def _rms(points: np.ndarray) -> float:
    centered = points - points.mean(axis=0)
    rms = float(np.sqrt(np.mean(np.sum(centered ** 2, axis=1))))
    if rms <= 0:
        raise ModelError("All matched points coincide")
    return rms


def normalize_points(points: np.ndarray) -> np.ndarray:
    """Zero mean, unit RMS distance to the centroid"""
    return (points - points.mean(axis=0)) / _rms(points)


def compute_ldr(points_a, points_b, normalize: bool = False) -> np.ndarray:
    """N x N array holding ln(|Xi - Xj| / |Yi - Yj|) for i < j.

    The lower triangle, the diagonal and pairs closer than 1e-6 px in either image
    are NaN.
    """
    X = np.asarray(points_a, dtype=np.float64).reshape(-1, 2)
    Y = np.asarray(points_b, dtype=np.float64).reshape(-1, 2)
    if X.shape != Y.shape:
        raise ModelError(f"Point sets differ in size: {X.shape[0]} vs {Y.shape[0]}")
    n = X.shape[0]
    if n < MIN_MATCHES:
        raise TooFewMatchesError(f"Need at least {MIN_MATCHES} matches, got {n}")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
        raise ModelError("Matched coordinates must be finite")

    dx = pdist(X)
    dy = pdist(Y)
    valid = (dx >= MIN_SEPARATION) & (dy >= MIN_SEPARATION)
    values = np.full(dx.shape, np.nan)
    values[valid] = np.log(dx[valid] / dy[valid])
    if normalize:
        # the per-image RMS rescaling only shifts every LDR by a constant
        values -= np.log(_rms(X) / _rms(Y))

    out = np.full((n, n), np.nan)
    out[np.triu_indices(n, 1)] = values
    skipped = int((~valid).sum())
    if skipped:
        logger.debug(f"Excluded {skipped} near-coincident point pair(s) from the LDR table")
    return out


def _check_bins(bins: int):
    if bins < 5:
        raise ModelError(f"LDR histogram needs at least 5 bins, got {bins}")


def bin_index(values, bins: int = 25, bounds: Bounds = DEFAULT_BOUNDS) -> np.ndarray:
    """Equal-width bin of each value; values outside the range go to the end bins"""
    lo, hi = bounds
    width = (hi - lo) / bins
    idx = np.floor((np.asarray(values, dtype=np.float64) - lo) / width)
    return np.clip(idx, 0, bins - 1).astype(np.intp)


def ldr_histogram(ldrs, bins: int = 25, bounds: Bounds = DEFAULT_BOUNDS) -> np.ndarray:
    """Counts of the finite LDR values per bin"""
    _check_bins(bins)
    values = np.asarray(ldrs, dtype=np.float64).ravel()
    values = values[np.isfinite(values)]
    return np.bincount(bin_index(values, bins, bounds), minlength=bins).astype(np.float64)


def outlier_cdf(z):
    """CDF of the LDR of an outlier pair.

    With S = |Xi-Xj|^2 / |Yi-Yj|^2 ~ F(2, 2) the CDF of S is s / (1 + s); substituting
    s = exp(2z) gives (1 + tanh z) / 2.
    """
    return 0.5 * (1.0 + np.tanh(z))


def outlier_density(z):
    return 0.5 / np.cosh(z) ** 2


def outlier_pdf(bins: int = 25, bounds: Bounds = DEFAULT_BOUNDS) -> np.ndarray:
    """Probability mass of the outlier LDR distribution in each bin"""
    _check_bins(bins)
    edges = np.linspace(bounds[0], bounds[1], bins + 1)
    return 0.5 * np.diff(np.tanh(edges))


def estimate_beta(h, f) -> float:
    """Least-squares outlier mass: sum(h f) / sum(f^2)"""
    h = np.asarray(h, dtype=np.float64)
    f = np.asarray(f, dtype=np.float64)
    norm = float(np.dot(f, f))
    if not np.isfinite(norm) or norm <= 0:
        raise ModelError("Outlier model has no mass")
    return float(np.dot(h, f)) / norm


def outlier_normal(h, f, beta: float) -> np.ndarray:
    return np.asarray(h, dtype=np.float64) - beta * np.asarray(f, dtype=np.float64)


def fit_ldr_model(ldrs, bins: int = 25, bounds: Bounds = DEFAULT_BOUNDS) -> LdrModel:
    h = ldr_histogram(ldrs, bins, bounds)
    f = outlier_pdf(bins, bounds)
    beta = estimate_beta(h, f)
    return LdrModel(bins, tuple(bounds), f, h, beta, outlier_normal(h, f, beta))


def _merge_sparse_bins(observed: np.ndarray, expected: np.ndarray):
    """Fold bins whose expectation is negligible into the next bin (the last into its left neighbour)"""
    obs, exp = [], []
    acc_o = acc_e = 0.0
    for o, e in zip(observed, expected):
        acc_o += o
        acc_e += e
        if acc_e >= MIN_EXPECTED:
            obs.append(acc_o)
            exp.append(acc_e)
            acc_o = acc_e = 0.0
    if exp and (acc_o or acc_e):
        obs[-1] += acc_o
        exp[-1] += acc_e
    return np.array(obs), np.array(exp)


def goodness_of_fit_test(h, f, alpha: float = 0.01,
                         n_effective: Optional[float] = None) -> GoodnessOfFit:
    """Pearson chi-square test of h against the outlier model f renormalized over the range.

    n_effective rescales the counts to that sample size before testing; pairwise LDRs
    of N matches are far from independent, so the number of matches is the honest
    sample size there.
    """
    h = np.asarray(h, dtype=np.float64)
    f = np.asarray(f, dtype=np.float64)
    total = float(h.sum())
    if total < MIN_SAMPLES:
        raise ModelError(f"Chi-square test needs at least {MIN_SAMPLES} samples, got {total:g}")
    if n_effective is not None:
        h = h * (n_effective / total)
        total = float(n_effective)

    expected = total * f / f.sum()
    observed, expected = _merge_sparse_bins(h, expected)
    if len(expected) < 2:
        raise ModelError("Outlier model leaves fewer than two usable bins")
    if len(expected) < len(f):
        logger.debug(f"Merged {len(f) - len(expected)} empty-model bin(s) before the chi-square test")

    statistic = float(np.sum((observed - expected) ** 2 / expected))
    dof = len(expected) - 1
    critical = float(chi2.ppf(1.0 - alpha, dof))
    return GoodnessOfFit(statistic, critical, dof, alpha)


def inlier_matrix(ldrs: np.ndarray, model: LdrModel) -> np.ndarray:
    """Symmetric D with D_ij = d(q(ldr_ij)); zero diagonal and zero for excluded pairs"""
    n = ldrs.shape[0]
    D = np.zeros((n, n))
    iu = np.triu_indices(n, 1)
    values = ldrs[iu]
    valid = np.isfinite(values)
    upper = np.zeros(values.shape)
    upper[valid] = model.d[bin_index(values[valid], model.bins, model.bounds)]
    D[iu] = upper
    return D + D.T


def dominant_eigenpair(D: np.ndarray, max_iterations: int = 200, tolerance: float = 1e-10):
    """Largest algebraic eigenvalue and its unit eigenvector of a symmetric matrix.

    Power iteration from the all-ones vector on D + cI, where c is the Gershgorin
    bound, so that the most positive eigenvalue dominates. The eigenvector sign
    makes its largest-magnitude entry positive.
    """
    n = D.shape[0]
    shift = float(np.max(np.sum(np.abs(D), axis=1))) if n else 0.0
    M = D + shift * np.eye(n)

    v = np.ones(n) / np.sqrt(n)
    lam = prev = 0.0
    change = np.inf
    iterations = 0
    for iterations in range(1, max_iterations + 1):
        w = M @ v
        norm = np.linalg.norm(w)
        if not np.isfinite(norm) or norm == 0:
            raise NumericError("Power iteration collapsed to the zero vector")
        lam = float(v @ w)
        v = w / norm
        change = abs(lam - prev) / max(abs(lam), 1e-300)
        if change < tolerance:
            break
        prev = lam

    if not np.isfinite(lam) or change > ACCEPT_CHANGE:
        raise NumericError(f"Power iteration did not converge (relative change {change:.3e})")
    if change >= tolerance:
        logger.warning(f"Power iteration stopped after {iterations} iterations at relative change {change:.3e}")

    lead = int(np.argmax(np.abs(v)))
    if v[lead] < 0:
        v = -v
    return float(v @ D @ v), v, iterations


def extract_inliers(ldrs: np.ndarray, model: LdrModel, max_iterations: int = 200,
                    tolerance: float = 1e-10, confidence_floor: float = 6.0) -> InlierResult:
    """Inlier count m = 1 + mu / max d and the m matches with the largest eigenvector entries"""
    n = ldrs.shape[0]
    if n < MIN_MATCHES:
        raise TooFewMatchesError(f"Need at least {MIN_MATCHES} matches, got {n}")
    d_max = float(np.max(model.d))
    if d_max <= 0:
        raise NoInlierStructureError("LDR histogram has no excess over the outlier model")

    D = inlier_matrix(ldrs, model)
    mu, r, iterations = dominant_eigenpair(D, max_iterations, tolerance)
    m_hat = float(np.clip(1.0 + mu / d_max, 1.0, n))
    count = int(np.clip(np.floor(m_hat + 0.5), 1, n))
    order = np.argsort(-r, kind='stable')
    indices = np.sort(order[:count])
    low = m_hat < confidence_floor
    if low:
        logger.warning(f"Inlier estimate {m_hat:.2f} is below {confidence_floor:g}; result is low-confidence")
    return InlierResult(m_hat, mu, r, indices, low, iterations)


def matched_coordinates(points_a, points_b, matches: Sequence[Match]):
    """Coordinates of each match in image A and image B as two (N, 2) arrays"""
    pa = np.asarray(points_a, dtype=np.float64).reshape(-1, 2)
    pb = np.asarray(points_b, dtype=np.float64).reshape(-1, 2)
    ia = np.array([m.index_a for m in matches], dtype=np.intp)
    ib = np.array([m.index_b for m in matches], dtype=np.intp)
    return pa[ia], pb[ib]


def verify_matches(points_a, points_b, cfg: Optional[VerifyConfig] = None) -> VerificationSummary:
    """Goodness-of-fit gate followed by inlier extraction for one image pair.

    points_a[i] and points_b[i] are the two ends of match i.
    """
    cfg = cfg or VerifyConfig()
    bounds = (-cfg.ldr_range, cfg.ldr_range)
    ldrs = compute_ldr(points_a, points_b, normalize=cfg.normalize)
    n = ldrs.shape[0]
    model = fit_ldr_model(ldrs, cfg.bins, bounds)

    fit = None
    if model.h.sum() >= MIN_SAMPLES:
        fit = goodness_of_fit_test(model.h, model.f, cfg.alpha, n_effective=n)
        logger.info(f"LDR chi-square {fit.statistic:.3f} vs {fit.critical:.3f} ({fit.dof} dof): {fit.decision}")
        if not fit.passed:
            return VerificationSummary(n, model, fit)
    else:
        logger.warning(f"Only {model.n_pairs} valid LDR pair(s); skipping the chi-square gate")

    try:
        inliers = extract_inliers(ldrs, model, cfg.max_iterations, cfg.tolerance, cfg.confidence_floor)
    except NoInlierStructureError as e:
        logger.warning(f"Rejecting pair: {e}")
        return VerificationSummary(n, model, fit)
    if fit is None and not inliers.low_confidence:
        inliers = InlierResult(inliers.m_hat, inliers.eigenvalue, inliers.eigenvector,
                               inliers.inlier_indices, True, inliers.iterations)
    logger.info(f"Estimated {inliers.m_hat:.2f} inlier(s) among {n} match(es), beta={model.beta:.3f}")
    return VerificationSummary(n, model, fit, inliers)


__all__ = [
    'compute_ldr', 'normalize_points', 'bin_index', 'ldr_histogram', 'outlier_cdf',
    'outlier_density', 'outlier_pdf', 'estimate_beta', 'outlier_normal', 'fit_ldr_model',
    'goodness_of_fit_test', 'inlier_matrix', 'dominant_eigenpair', 'extract_inliers',
    'matched_coordinates', 'verify_matches',
]
