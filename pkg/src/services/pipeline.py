# src/services/pipeline.py
"""AffinaPipeline: detect -> describe -> match -> verify with one pyramid per channel.

    pipeline = AffinaPipeline(load_run_config("affina.cfg"))
    a = pipeline.extract(load_image("img1.ppm"))
    b = pipeline.extract(load_image("img2.ppm"))
    result = pipeline.run_pair(a, b)
    print(result.summary.summary_line())
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.config import RunConfig
from src.errors import InsufficientCandidatesError, SizeError, TooFewMatchesError
from src.models.features import AffineParams, Descriptor128, Feature, Match
from src.models.image import GrayImage
from src.models.scale_space import Pyramid
from src.models.verification import VerificationSummary
from src.services.descriptor import DroppedFeature, describe
from src.services.detector import deduplicate, detect_in_pyramid, octave_count
from src.services.geomcheck import verify_matches
from src.services.matcher import match_descriptors
from src.services.scalespace import build_pyramid

logger = logging.getLogger(__name__)


def channel_key(a: AffineParams) -> Tuple[float, ...]:
    return tuple(np.round(a.A.ravel(), 9))


@dataclass
class ImageFeatures:
    """Features of one image and the descriptors computed for them"""
    features: List[Feature]
    descriptors: List[Descriptor128] = field(default_factory=list)
    dropped: List[DroppedFeature] = field(default_factory=list)

    @property
    def points(self) -> np.ndarray:
        return np.array([[d.x, d.y] for d in self.descriptors]).reshape(-1, 2)

    def descriptor_feature_index(self) -> np.ndarray:
        """Index into features for each descriptor"""
        index = {id(f): i for i, f in enumerate(self.features)}
        return np.array([index[id(d.feature)] for d in self.descriptors], dtype=np.intp)


@dataclass
class PairResult:
    matches: List[Match]
    summary: Optional[VerificationSummary]

    @property
    def decision(self) -> str:
        return self.summary.decision if self.summary is not None else "reject"


class AffinaPipeline:
    def __init__(self, cfg: Optional[RunConfig] = None):
        self.cfg = cfg or RunConfig()
        self.channels = self.cfg.detector.channel_list()
        logger.info(f"Pipeline with {len(self.channels)} channel(s), {self.cfg.threads} thread(s)")

    # -------------------------------
    # Pyramids
    # -------------------------------
    def build_pyramids(self, img: GrayImage,
                       channels: Optional[Sequence[AffineParams]] = None) -> Dict[tuple, Pyramid]:
        """One pyramid per channel; channels the image is too small for are skipped with a warning"""
        channels = list(channels if channels is not None else self.channels)

        def build(a):
            try:
                return build_pyramid(img, a, octave_count(img.shape, a, self.cfg.detector.n_octaves))
            except SizeError as e:
                logger.warning(f"Skipping channel [{a.label}]: {e}")
                return None

        with ThreadPoolExecutor(max_workers=self.cfg.threads) as pool:
            pyramids = [p for p in pool.map(build, channels) if p is not None]
        if channels and not pyramids:
            raise SizeError(f"{img.shape[1]}x{img.shape[0]} image is too small for every channel")
        return {channel_key(p.channel): p for p in pyramids}

    # -------------------------------
    # Stages
    # -------------------------------
    def detect(self, img: GrayImage, pyramids: Optional[Dict[tuple, Pyramid]] = None) -> List[Feature]:
        pyramids = pyramids or self.build_pyramids(img)
        cfg = self.cfg.detector
        with ThreadPoolExecutor(max_workers=self.cfg.threads) as pool:
            per_channel = list(pool.map(lambda p: detect_in_pyramid(p, cfg), pyramids.values()))
        merged = [f for feats in per_channel for f in feats]
        features = deduplicate(merged, cfg.dedup_distance, cfg.dedup_scale)
        features.sort(key=Feature.sort_key)
        logger.info(f"Detected {len(features)} feature(s) over {len(pyramids)} channel(s)")
        return features

    def describe(self, img: GrayImage, features: Sequence[Feature],
                 pyramids: Optional[Dict[tuple, Pyramid]] = None):
        """Descriptors in feature order (then orientation order) and the dropped features"""
        groups: Dict[tuple, List[Feature]] = {}
        for f in features:
            groups.setdefault(channel_key(f.channel), []).append(f)
        pyramids = dict(pyramids or {})
        missing = [grp[0].channel for key, grp in groups.items() if key not in pyramids]
        if missing:
            try:
                pyramids.update(self.build_pyramids(img, missing))
            except SizeError as e:
                logger.warning(f"No pyramid for {len(missing)} channel(s): {e}")

        by_feature: Dict[int, List[Descriptor128]] = {}
        dropped: List[DroppedFeature] = []
        for key, grp in groups.items():
            if key not in pyramids:
                dropped.extend(DroppedFeature(f, "size") for f in grp)
                continue
            descs, lost = describe(grp, pyramids[key], cfg=self.cfg.descriptor, threads=self.cfg.threads)
            for d in descs:
                by_feature.setdefault(id(d.feature), []).append(d)
            dropped.extend(lost)

        ordered = [d for f in features for d in by_feature.get(id(f), [])]
        return ordered, dropped

    def extract(self, img: GrayImage) -> ImageFeatures:
        pyramids = self.build_pyramids(img)
        features = self.detect(img, pyramids)
        descriptors, dropped = self.describe(img, features, pyramids)
        kept = {id(d.feature) for d in descriptors}
        return ImageFeatures([f for f in features if id(f) in kept], descriptors, dropped)

    def match(self, a, b) -> List[Match]:
        cfg = self.cfg.matcher
        return match_descriptors(a, b, cfg.ratio, cfg.mutual, self.cfg.threads)

    def verify(self, points_a, points_b, matches: Sequence[Match]) -> VerificationSummary:
        ia = np.array([m.index_a for m in matches], dtype=np.intp)
        ib = np.array([m.index_b for m in matches], dtype=np.intp)
        pa = np.asarray(points_a, dtype=np.float64).reshape(-1, 2)
        pb = np.asarray(points_b, dtype=np.float64).reshape(-1, 2)
        return verify_matches(pa[ia], pb[ib], self.cfg.verify)

    def run_pair(self, a: ImageFeatures, b: ImageFeatures) -> PairResult:
        try:
            matches = self.match(a.descriptors, b.descriptors)
        except InsufficientCandidatesError as e:
            logger.warning(f"No matching possible: {e}")
            return PairResult([], None)
        try:
            summary = self.verify(a.points, b.points, matches)
        except TooFewMatchesError as e:
            logger.warning(f"Skipping verification: {e}")
            summary = None
        return PairResult(matches, summary)


__all__ = ['AffinaPipeline', 'ImageFeatures', 'PairResult', 'channel_key']
