# src/services/evaluation.py
"""Repeatability / matching-score evaluation on homography-annotated sequences.

A feature's region is the disk of radius 3 sigma pushed through its channel matrix A;
regions of image 1 are carried into image k with the local Jacobian of H(1->k) and
compared with the overlap error 1 - |A n B| / |A u B|.
"""
import logging
import math
import re
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
from PIL import Image, ImageDraw
from scipy.spatial import cKDTree

from src.config import RunConfig
from src.errors import DatasetError, InsufficientCandidatesError
from src.models.evaluation import Correspondences, EvalReport, PairReport, Sequence
from src.models.features import Feature, Match
from src.models.image import GrayImage
from src.paths import ensure_debug_dir, sequence_dir
from src.services.imagecore import load_image
from src.services.pipeline import AffinaPipeline

logger = logging.getLogger(__name__)

IMAGE_PATTERN = re.compile(r'^img(\d+)\.(ppm|pgm|png)$', re.IGNORECASE)
MIN_DET = 1e-12
GRID_SAMPLES = 64
MAX_GRID_SAMPLES = 512


# -------------------------------
# Dataset loading
# -------------------------------
def parse_homography(text: str, source: str = "homography") -> np.ndarray:
    """Nine whitespace-separated numbers, row-major"""
    try:
        values = np.array([float(tok) for tok in text.split()], dtype=np.float64)
    except ValueError as e:
        raise DatasetError(f"{source}: not numeric: {e}")
    if values.size != 9 or not np.all(np.isfinite(values)):
        raise DatasetError(f"{source}: expected 9 finite values, got {values.size}")
    H = values.reshape(3, 3)
    if abs(np.linalg.det(H)) <= MIN_DET:
        raise DatasetError(f"{source}: homography is singular")
    return H


def load_sequence(path) -> Sequence:
    """img1..imgN (.ppm/.pgm/.png) and H1to2p..H1toNp from an Oxford-layout directory"""
    path = Path(path)
    if not path.exists() and len(path.parts) == 1:
        # bare sequence name, e.g. "graf"
        path = sequence_dir(path.name)
    if not path.is_dir():
        raise DatasetError(f"{path}: not a directory")

    images = {}
    for entry in sorted(path.iterdir()):
        m = IMAGE_PATTERN.match(entry.name)
        if m:
            index = int(m.group(1))
            if index in images:
                raise DatasetError(f"{path}: more than one file for img{index}")
            images[index] = entry
    if len(images) < 2:
        raise DatasetError(f"{path}: need at least 2 images, found {len(images)}")
    if sorted(images) != list(range(1, len(images) + 1)):
        raise DatasetError(f"{path}: images must be numbered img1..img{len(images)}")

    homographies = [np.eye(3)]
    for k in range(2, len(images) + 1):
        hfile = path / f"H1to{k}p"
        if not hfile.is_file():
            raise DatasetError(f"{path}: missing {hfile.name}")
        homographies.append(parse_homography(hfile.read_text(), str(hfile)))

    loaded = [load_image(images[k]) for k in sorted(images)]
    logger.info(f"Loaded sequence {path.name}: {len(loaded)} image(s)")
    return Sequence(loaded, homographies, path.name)


# -------------------------------
# Geometry
# -------------------------------
def project_points(H: np.ndarray, points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    hom = np.hstack([pts, np.ones((len(pts), 1))]) @ np.asarray(H).T
    return hom[:, :2] / hom[:, 2:]


def homography_jacobian(H: np.ndarray, point) -> np.ndarray:
    """d(Hx)/dx at point"""
    H = np.asarray(H, dtype=np.float64)
    x, y = point
    w = H[2, 0] * x + H[2, 1] * y + H[2, 2]
    u = H[0, 0] * x + H[0, 1] * y + H[0, 2]
    v = H[1, 0] * x + H[1, 1] * y + H[1, 2]
    return np.array([
        [(H[0, 0] * w - u * H[2, 0]) / w ** 2, (H[0, 1] * w - u * H[2, 1]) / w ** 2],
        [(H[1, 0] * w - v * H[2, 0]) / w ** 2, (H[1, 1] * w - v * H[2, 1]) / w ** 2],
    ])


def region_matrix(f: Feature, region_scale: float = 3.0) -> np.ndarray:
    """M with x^T M x <= 1 describing the feature region around its centre"""
    a, b, c = f.ellipse(region_scale)
    return np.array([[a, b], [b, c]])


def map_region(M: np.ndarray, J: np.ndarray) -> np.ndarray:
    Jinv = np.linalg.inv(J)
    return Jinv.T @ M @ Jinv


def _half_extent(M: np.ndarray) -> np.ndarray:
    return np.sqrt(np.diag(np.linalg.inv(M)))


def _area(M: np.ndarray) -> float:
    return math.pi / math.sqrt(np.linalg.det(M))


def overlap_error(center_a, M_a: np.ndarray, center_b, M_b: np.ndarray) -> float:
    """1 - intersection / union of two ellipses, by counting samples on a common grid"""
    ca = np.asarray(center_a, dtype=np.float64)
    cb = np.asarray(center_b, dtype=np.float64)
    ea, eb = _half_extent(M_a), _half_extent(M_b)
    lo = np.minimum(ca - ea, cb - eb)
    hi = np.maximum(ca + ea, cb + eb)
    minor = min(1.0 / math.sqrt(np.linalg.eigvalsh(M_a)[-1]), 1.0 / math.sqrt(np.linalg.eigvalsh(M_b)[-1]))
    step = min(float(np.max(hi - lo)) / GRID_SAMPLES, minor / 8.0)
    n = np.minimum(np.ceil((hi - lo) / step).astype(int) + 1, MAX_GRID_SAMPLES)
    gx = np.linspace(lo[0], hi[0], n[0])
    gy = np.linspace(lo[1], hi[1], n[1])
    X, Y = np.meshgrid(gx, gy)

    def inside(c, M):
        dx, dy = X - c[0], Y - c[1]
        return M[0, 0] * dx * dx + 2 * M[0, 1] * dx * dy + M[1, 1] * dy * dy <= 1.0

    in_a, in_b = inside(ca, M_a), inside(cb, M_b)
    union = np.count_nonzero(in_a | in_b)
    if union == 0:
        return 1.0
    return 1.0 - np.count_nonzero(in_a & in_b) / union


def visible_mask(points: np.ndarray, shape: Optional[Tuple[int, int]]) -> np.ndarray:
    if shape is None:
        return np.ones(len(points), dtype=bool)
    h, w = shape
    return (points[:, 0] >= 0) & (points[:, 0] <= w - 1) & (points[:, 1] >= 0) & (points[:, 1] <= h - 1)


class RegionSet:
    """Feature regions of image 1 carried into image k next to the regions of image k"""

    def __init__(self, fa: List[Feature], fb: List[Feature], H: np.ndarray,
                 shape_a=None, shape_b=None, region_scale: float = 3.0):
        self.H = np.asarray(H, dtype=np.float64)
        pa = np.array([[f.x, f.y] for f in fa]).reshape(-1, 2)
        pb = np.array([[f.x, f.y] for f in fb]).reshape(-1, 2)
        self.centers_a = project_points(self.H, pa) if len(pa) else pa
        self.centers_b = pb
        back = project_points(np.linalg.inv(self.H), pb) if len(pb) else pb
        self.visible_a = visible_mask(pa, shape_a) & visible_mask(self.centers_a, shape_b)
        self.visible_b = visible_mask(pb, shape_b) & visible_mask(back, shape_a)
        self.regions_a = [map_region(region_matrix(f, region_scale), homography_jacobian(self.H, (f.x, f.y)))
                          for f in fa]
        self.regions_b = [region_matrix(f, region_scale) for f in fb]

    def error(self, i: int, j: int) -> float:
        return overlap_error(self.centers_a[i], self.regions_a[i], self.centers_b[j], self.regions_b[j])

    def candidates(self, overlap_max: float):
        """(error, i, j) for visible pairs below overlap_max"""
        ia = np.nonzero(self.visible_a)[0]
        ib = np.nonzero(self.visible_b)[0]
        if len(ia) == 0 or len(ib) == 0:
            return []
        reach_b = np.array([_half_extent(self.regions_b[j]).max() for j in ib])
        tree = cKDTree(self.centers_b[ib])
        out = []
        for i in ia:
            reach = _half_extent(self.regions_a[i]).max() + reach_b.max()
            area_i = _area(self.regions_a[i])
            for k in sorted(tree.query_ball_point(self.centers_a[i], r=reach)):
                j = int(ib[k])
                area_j = _area(self.regions_b[j])
                # intersection <= smaller area, union >= larger area
                if 1.0 - min(area_i, area_j) / max(area_i, area_j) >= overlap_max:
                    continue
                err = self.error(int(i), j)
                if err < overlap_max:
                    out.append((err, int(i), j))
        return out


def correspondences(fa: List[Feature], fb: List[Feature], H: np.ndarray, overlap_max: float = 0.4,
                    shape_a=None, shape_b=None, region_scale: float = 3.0) -> Correspondences:
    """Greedy one-to-one assignment by lowest overlap error among visible features"""
    return assign_regions(RegionSet(fa, fb, H, shape_a, shape_b, region_scale), overlap_max)


def assign_regions(regions: RegionSet, overlap_max: float = 0.4) -> Correspondences:
    used_a, used_b = set(), set()
    pairs, errors = [], []
    for err, i, j in sorted(regions.candidates(overlap_max)):
        if i in used_a or j in used_b:
            continue
        used_a.add(i)
        used_b.add(j)
        pairs.append((i, j))
        errors.append(err)
    return Correspondences(pairs, errors, int(regions.visible_a.sum()), int(regions.visible_b.sum()))


def correct_matches(regions: RegionSet, feature_a: np.ndarray, feature_b: np.ndarray,
                    matches: List[Match], overlap_max: float = 0.4) -> List[Tuple[int, int]]:
    """Feature pairs of matches whose regions overlap; one-to-one, closest descriptors first"""
    used_a, used_b = set(), set()
    out = []
    for m in sorted(matches, key=lambda m: (m.distance, m.index_a, m.index_b)):
        i, j = int(feature_a[m.index_a]), int(feature_b[m.index_b])
        if i in used_a or j in used_b:
            continue
        if not (regions.visible_a[i] and regions.visible_b[j]):
            continue
        if regions.error(i, j) < overlap_max:
            used_a.add(i)
            used_b.add(j)
            out.append((i, j))
    return out


# -------------------------------
# Sequence evaluation
# -------------------------------
def evaluate(seq: Sequence, cfg: Optional[RunConfig] = None) -> EvalReport:
    """Metrics for every pair (1, k) of the sequence, in pair order"""
    cfg = cfg or RunConfig()
    pipeline = AffinaPipeline(cfg)
    ref_image = seq.images[0]
    ref = pipeline.extract(ref_image)
    ref_index = ref.descriptor_feature_index()

    def run(item):
        k, image, H = item
        other = pipeline.extract(image)
        regions = RegionSet(ref.features, other.features, H, ref_image.shape, image.shape,
                            cfg.eval.region_scale)
        corr = assign_regions(regions, cfg.eval.overlap)
        try:
            matches = pipeline.match(ref.descriptors, other.descriptors)
        except InsufficientCandidatesError as e:
            logger.warning(f"Pair 1-{k}: {e}")
            matches = []
        correct = correct_matches(regions, ref_index, other.descriptor_feature_index(), matches,
                                  cfg.eval.overlap)
        denom = corr.denominator
        report = PairReport(
            pair=f"1-{k}",
            repeatability=corr.repeatability,
            n_corr=corr.count,
            matching_score=len(correct) / denom if denom else 0.0,
            n_matches=len(correct),
            n_features_a=len(ref.features),
            n_features_b=len(other.features),
        )
        logger.info(f"Pair {report.pair}: repeatability {report.repeatability:.3f} ({report.n_corr}), "
                    f"matching score {report.matching_score:.3f} ({report.n_matches})")
        if cfg.eval.debug:
            target = ensure_debug_dir(cfg.debug_dir) / f"{seq.name or 'seq'}_{report.pair}_matches.pgm"
            draw_matches(ref_image, image, ref.points, other.points, matches, target)
        return report

    with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
        pairs = list(pool.map(run, seq.pairs()))
    return EvalReport(seq.name, pairs)


def emit_report(rep: EvalReport, path) -> Path:
    """CSV with one row per pair, floats at 6 decimals"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rep.to_frame().to_csv(path, index=False, float_format='%.6f', lineterminator='\n')
    logger.info(f"Wrote {len(rep.pairs)} pair row(s) to {path}")
    return path


def draw_matches(img_a: GrayImage, img_b: GrayImage, points_a, points_b,
                 matches: List[Match], path) -> Path:
    """Side-by-side 8-bit PGM with one line per match"""
    h = max(img_a.height, img_b.height)
    canvas = np.zeros((h, img_a.width + img_b.width))
    for offset, img in ((0, img_a), (img_a.width, img_b)):
        data = img.data
        lo, hi = float(data.min()), float(data.max())
        canvas[:img.height, offset:offset + img.width] = (data - lo) / (hi - lo) if hi > lo else 0.0
    pil = Image.fromarray(np.round(canvas * 255.0).astype(np.uint8))
    draw = ImageDraw.Draw(pil)
    pa = np.asarray(points_a).reshape(-1, 2)
    pb = np.asarray(points_b).reshape(-1, 2)
    for m in matches:
        xa, ya = pa[m.index_a]
        xb, yb = pb[m.index_b]
        draw.line([(float(xa), float(ya)), (float(xb) + img_a.width, float(yb))], fill=255, width=1)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pil.save(path, format="PPM")
    logger.debug(f"Match drawing written to {path}")
    return path


__all__ = [
    'parse_homography', 'load_sequence', 'project_points', 'homography_jacobian', 'region_matrix',
    'map_region', 'overlap_error', 'visible_mask', 'RegionSet', 'correspondences', 'assign_regions',
    'correct_matches', 'evaluate', 'emit_report', 'draw_matches',
]
