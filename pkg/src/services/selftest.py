# src/services/selftest.py
"""Built-in oracle checks run by `affina selftest`."""
import logging
import math
from dataclasses import dataclass
from typing import Callable, List, Tuple

import numpy as np
from scipy import integrate, stats

from src.errors import AffinaError
from src.models.features import AffineParams, ExtremumKind, LocalMatrices
from src.services.accel import convolve_direct
from src.services.detector import extremum_test
from src.services.geomcheck import (compute_ldr, extract_inliers, fit_ldr_model,
                                    goodness_of_fit_test, outlier_density, outlier_pdf,
                                    verify_matches)
from src.services.imagecore import anisotropic_gaussian_kernel, convolve_array
from src.services.scalespace import SCALES, build_pyramid, eval_poly_at, fit_poly
from src.services.synthetic import random_blobs, render_blobs, similarity_matches

logger = logging.getLogger(__name__)


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str

    def to_dict(self):
        return {'name': self.name, 'passed': self.passed, 'detail': self.detail}


def _blob_image(seed: int, shape=(96, 96)):
    return render_blobs(shape, random_blobs(shape, 12, seed=seed, margin=24.0))


def check_kernel_identity(seed: int) -> Tuple[bool, str]:
    rng = np.random.default_rng(seed)
    data = rng.uniform(0.0, 1.0, (40, 40))
    k = anisotropic_gaussian_kernel(AffineParams.from_tilt(2.0, math.radians(30.0), sigma=1.2))
    err = float(np.max(np.abs(convolve_array(data, k) - convolve_direct(data, k.weights))))
    total = abs(k.total() - 1.0)
    return err < 1e-10 and total < 1e-12, f"max|fast - direct| = {err:.2e}, |sum - 1| = {total:.2e}"


def check_semigroup(seed: int) -> Tuple[bool, str]:
    data = _blob_image(seed).data
    a = AffineParams.identity()
    s1, s2 = 1.6, 1.6 * math.sqrt(2.0)
    twice = convolve_array(convolve_array(data, anisotropic_gaussian_kernel(a.with_sigma(s1))),
                           anisotropic_gaussian_kernel(a.with_sigma(s2)))
    once = convolve_array(data, anisotropic_gaussian_kernel(a.with_sigma(math.hypot(s1, s2))))
    err = float(np.max(np.abs(twice - once)))
    return err < 1e-3, f"max abs difference {err:.2e}"


def check_poly_exactness(seed: int) -> Tuple[bool, str]:
    img = _blob_image(seed, (128, 128))
    pyr = build_pyramid(img, AffineParams.identity(), 2)
    worst = 0.0
    for octave in pyr.octaves:
        pf = fit_poly(octave.gauss)
        h, w = octave.shape
        ys, xs = np.mgrid[0:h, 0:w]
        for s, raster in zip(SCALES, octave.gauss):
            fitted = eval_poly_at(pf, xs.astype(float), ys.astype(float), np.full(xs.shape, s))
            worst = max(worst, float(np.max(np.abs(fitted - raster)) / max(np.max(np.abs(raster)), 1e-12)))
    return worst < 1e-6, f"max relative residual {worst:.2e}"


EXTREMUM_CASES = [
    ((-4.0, -4.0), (1.0, 1.0), ExtremumKind.MAX),
    ((2.0, 6.0), (0.5, 0.5), ExtremumKind.MIN),
    ((-1.0, -1.0), (3.0, 0.1), None),
    ((-2.0, -2.0), (1.0, 1.0), None),
    ((-6.0, -2.0), (0.5, 0.2), ExtremumKind.MAX),
    ((4.0, 4.0), (3.0, 3.0), ExtremumKind.MIN),
    ((-1.0, 3.0), (0.5, 0.5), None),
    ((0.0, 0.0), (0.0, 0.0), None),
    ((-8.0, -8.0), (16.0, 0.0), None),
]


def check_extremum_vectors(seed: int) -> Tuple[bool, str]:
    failures = []
    for psi, nu, expected in EXTREMUM_CASES:
        got = extremum_test(LocalMatrices(np.diag(psi), np.diag(nu)))
        if got != expected:
            failures.append(f"psi={psi} nu={nu}: {got} != {expected}")
    return not failures, "; ".join(failures) or f"{len(EXTREMUM_CASES)} cases"


def check_outlier_pdf(seed: int) -> Tuple[bool, str]:
    bins, bounds = 25, (-2.5, 2.5)
    f = outlier_pdf(bins, bounds)
    edges = np.linspace(bounds[0], bounds[1], bins + 1)
    numeric = np.array([integrate.quad(outlier_density, lo, hi, epsabs=1e-13)[0]
                        for lo, hi in zip(edges[:-1], edges[1:])])
    via_f22 = np.diff(stats.f.cdf(np.exp(2.0 * edges), 2, 2))
    err = float(max(np.max(np.abs(f - numeric)), np.max(np.abs(f - via_f22))))
    sym = float(np.max(np.abs(f - f[::-1])))
    return err < 1e-9 and sym < 1e-12, f"max bin error {err:.2e}, asymmetry {sym:.2e}"


def check_geometric_verification(seed: int, trials: int = 10) -> Tuple[bool, str]:
    errors, precisions, rejected = [], [], 0
    for t in range(trials):
        X, Y, truth = similarity_matches(50, 50, seed=seed + t)
        summary = verify_matches(X, Y)
        if summary.inliers is None:
            errors.append(50.0)
            precisions.append(0.0)
            continue
        errors.append(abs(summary.m_hat - 50.0))
        precisions.append(float(np.mean(truth[summary.inliers.inlier_indices])))
        X, Y, _ = similarity_matches(0, 100, seed=seed + 1000 + t)
        ldrs = compute_ldr(X, Y, normalize=True)
        model = fit_ldr_model(ldrs)
        if not goodness_of_fit_test(model.h, model.f, 0.01, n_effective=100).passed:
            rejected += 1
    mean_err, mean_prec = float(np.mean(errors)), float(np.mean(precisions))
    ok = mean_err <= 10.0 and mean_prec >= 0.9 and rejected >= int(0.9 * trials)
    return ok, f"mean |m-50| {mean_err:.2f}, precision {mean_prec:.3f}, outlier sets rejected {rejected}/{trials}"


def check_exact_similarity(seed: int) -> Tuple[bool, str]:
    X, Y, _ = similarity_matches(50, 0, seed=seed)
    ldrs = compute_ldr(X, Y, normalize=True)
    result = extract_inliers(ldrs, fit_ldr_model(ldrs))
    return 45.0 <= result.m_hat <= 50.0, f"m_hat {result.m_hat:.2f} for 50 exact inliers"


CHECKS: List[Tuple[str, Callable[[int], Tuple[bool, str]]]] = [
    ("kernel identity", check_kernel_identity),
    ("semi-group", check_semigroup),
    ("polynomial exactness", check_poly_exactness),
    ("extremum test vectors", check_extremum_vectors),
    ("outlier pdf", check_outlier_pdf),
    ("exact similarity inliers", check_exact_similarity),
    ("geometric verification", check_geometric_verification),
]


def run_selftest(seed: int = 0) -> List[CheckResult]:
    results = []
    for name, check in CHECKS:
        try:
            passed, detail = check(seed)
        except (AffinaError, ValueError, np.linalg.LinAlgError) as e:
            passed, detail = False, f"{type(e).__name__}: {e}"
        results.append(CheckResult(name, bool(passed), detail))
        log = logger.info if passed else logger.error
        log(f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}")
    return results


__all__ = ['CheckResult', 'CHECKS', 'run_selftest']
