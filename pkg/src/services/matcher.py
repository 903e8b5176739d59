# src/services/matcher.py
"""Nearest-neighbour descriptor matching with the distance ratio test."""
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import List, Sequence, Union

import numpy as np
from scipy.spatial.distance import cdist

from src.errors import InsufficientCandidatesError
from src.models.features import Descriptor128, Match

logger = logging.getLogger(__name__)

QUANTIZATION = 512.0
CHUNK_ROWS = 1024

DescriptorSet = Union[Sequence[Descriptor128], np.ndarray]


def descriptor_matrix(descriptors: DescriptorSet) -> np.ndarray:
    """N x 128 float matrix of dequantized values (byte / 512)"""
    if isinstance(descriptors, np.ndarray):
        values = descriptors
    else:
        values = np.array([d.values for d in descriptors]).reshape(-1, 128)
    return np.asarray(values, dtype=np.float64) / QUANTIZATION


def distance_matrix(a: np.ndarray, b: np.ndarray, threads: int = 1) -> np.ndarray:
    """Exhaustive Euclidean distances, filled by row blocks of the query set"""
    out = np.empty((a.shape[0], b.shape[0]))
    starts = list(range(0, a.shape[0], CHUNK_ROWS))

    def fill(start):
        stop = min(start + CHUNK_ROWS, a.shape[0])
        out[start:stop] = cdist(a[start:stop], b, metric='euclidean')

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        list(pool.map(fill, starts))
    return out


def _two_nearest(dist: np.ndarray):
    """Indices and distances of the nearest and second nearest per row; ties go to the lower index"""
    order = np.argsort(dist, axis=1, kind='stable')[:, :2]
    rows = np.arange(dist.shape[0])
    d1 = dist[rows, order[:, 0]]
    d2 = dist[rows, order[:, 1]] if dist.shape[1] > 1 else np.full(dist.shape[0], np.inf)
    with np.errstate(divide='ignore', invalid='ignore'):
        ratio = np.where(d2 > 0, d1 / d2, 1.0)
    return order[:, 0], d1, np.clip(ratio, 0.0, 1.0)


def match_descriptors(a: DescriptorSet, b: DescriptorSet, ratio_max: float = 0.8,
                      mutual: bool = False, threads: int = 1) -> List[Match]:
    """For each descriptor of a, its nearest neighbour in b if d1/d2 <= ratio_max.

    In mutual mode the pair must also be nearest from b's side and pass the ratio test
    there; the reported ratio is the larger of the two.
    """
    A = descriptor_matrix(a)
    B = descriptor_matrix(b)
    if A.shape[0] == 0:
        raise InsufficientCandidatesError("no query descriptors")
    if B.shape[0] < 2:
        raise InsufficientCandidatesError(f"need at least 2 reference descriptors, got {B.shape[0]}")

    dist = distance_matrix(A, B, threads)
    nearest, d1, ratio = _two_nearest(dist)
    keep = ratio <= ratio_max

    if mutual:
        back, _, back_ratio = _two_nearest(dist.T)
        if A.shape[0] < 2:
            back_ratio = np.zeros_like(back_ratio)
        reciprocal = back[nearest] == np.arange(A.shape[0])
        keep &= reciprocal & (back_ratio[nearest] <= ratio_max)
        ratio = np.maximum(ratio, back_ratio[nearest])

    matches = [
        Match(int(i), int(nearest[i]), float(d1[i]), float(ratio[i]))
        for i in np.nonzero(keep)[0]
    ]
    logger.info(f"Matched {len(matches)} of {A.shape[0]} descriptor(s) against {B.shape[0]} "
                f"(ratio <= {ratio_max}{', mutual' if mutual else ''})")
    return matches


__all__ = ['descriptor_matrix', 'distance_matrix', 'match_descriptors']
