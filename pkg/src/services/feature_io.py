# src/services/feature_io.py
"""Text interchange between the command-line stages.

features  CSV via pandas: x,y,sigma,kind,octave,response,a11,a12,a21,a22,orientations
descriptors  Oxford layout: "128", N, then "x y a b c v1 .. v128" per line
matches  "idx_a idx_b distance ratio" per line
inliers  summary line "N m_hat beta chi2 pass|reject", then one match index per line
"""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence

import numpy as np
import pandas as pd

from src.errors import AffinaError, InterchangeError
from src.models.features import AffineParams, Descriptor128, ExtremumKind, Feature, Match
from src.models.verification import VerificationSummary

logger = logging.getLogger(__name__)

FEATURE_COLUMNS = ['x', 'y', 'sigma', 'kind', 'octave', 'response',
                   'a11', 'a12', 'a21', 'a22', 'orientations']
DESCRIPTOR_DIM = 128


def _prepare(path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


# -------------------------------
# Features
# -------------------------------
def write_features(features: Sequence[Feature], path) -> Path:
    path = _prepare(path)
    df = pd.DataFrame([f.to_dict() for f in features], columns=FEATURE_COLUMNS)
    df.to_csv(path, index=False, lineterminator='\n')
    logger.info(f"Wrote {len(df)} feature(s) to {path}")
    return path


def _parse_orientations(text) -> List[float]:
    return [float(tok) for tok in str(text).split()] if text else []


def read_features(path) -> List[Feature]:
    path = Path(path)
    try:
        df = pd.read_csv(path, dtype={'kind': str, 'orientations': str}, keep_default_na=False)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise InterchangeError(f"{path}: cannot read features: {e}")
    missing = [c for c in FEATURE_COLUMNS if c not in df.columns]
    if missing:
        raise InterchangeError(f"{path}: missing column(s) {', '.join(missing)}")

    features = []
    for row in df.itertuples(index=False):
        try:
            channel = AffineParams(np.array([[row.a11, row.a12], [row.a21, row.a22]], dtype=np.float64))
            features.append(Feature(
                x=float(row.x), y=float(row.y), sigma=float(row.sigma),
                kind=ExtremumKind(row.kind), octave=int(row.octave), response=float(row.response),
                channel=channel, orientations=_parse_orientations(row.orientations),
            ))
        except (ValueError, TypeError, AffinaError) as e:
            raise InterchangeError(f"{path}: bad feature row {len(features) + 1}: {e}")
    logger.info(f"Read {len(features)} feature(s) from {path}")
    return features


# -------------------------------
# Descriptors
# -------------------------------
@dataclass
class DescriptorTable:
    """Descriptor file contents: positions, region ellipses (a, b, c) and byte vectors"""
    points: np.ndarray
    ellipses: np.ndarray
    values: np.ndarray

    def __len__(self):
        return len(self.values)


def write_descriptors(descriptors: Sequence[Descriptor128], path) -> Path:
    path = _prepare(path)
    lines = [str(DESCRIPTOR_DIM), str(len(descriptors))]
    for d in descriptors:
        if d.feature is None:
            raise InterchangeError("descriptor without a feature cannot be written")
        a, b, c = d.feature.ellipse()
        head = f"{d.x:.6f} {d.y:.6f} {a:.8g} {b:.8g} {c:.8g}"
        lines.append(head + " " + " ".join(str(int(v)) for v in d.values))
    path.write_text("\n".join(lines) + "\n")
    logger.info(f"Wrote {len(descriptors)} descriptor(s) to {path}")
    return path


def read_descriptors(path) -> DescriptorTable:
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as e:
        raise InterchangeError(f"{path}: cannot read descriptors: {e}")
    if len(lines) < 2:
        raise InterchangeError(f"{path}: missing descriptor header")
    try:
        dim, count = int(lines[0]), int(lines[1])
    except ValueError:
        raise InterchangeError(f"{path}: header must be the dimension and the count")
    if dim != DESCRIPTOR_DIM:
        raise InterchangeError(f"{path}: expected {DESCRIPTOR_DIM}-d descriptors, got {dim}")

    rows = [line.split() for line in lines[2:] if line.strip()]
    if len(rows) != count:
        raise InterchangeError(f"{path}: header announces {count} descriptor(s), found {len(rows)}")
    if any(len(r) != 5 + dim for r in rows):
        raise InterchangeError(f"{path}: every row needs {5 + dim} values")
    try:
        table = np.array(rows, dtype=np.float64).reshape(count, 5 + dim)
    except ValueError as e:
        raise InterchangeError(f"{path}: not numeric: {e}")
    values = table[:, 5:]
    if np.any(values < 0) or np.any(values > 255) or np.any(values != np.round(values)):
        raise InterchangeError(f"{path}: descriptor entries must be bytes")
    return DescriptorTable(table[:, :2].copy(), table[:, 2:5].copy(), values.astype(np.uint8))


# -------------------------------
# Matches and inliers
# -------------------------------
def write_matches(matches: Sequence[Match], path) -> Path:
    path = _prepare(path)
    path.write_text("".join(f"{m.index_a} {m.index_b} {m.distance:.6f} {m.ratio:.6f}\n" for m in matches))
    logger.info(f"Wrote {len(matches)} match(es) to {path}")
    return path


def read_matches(path) -> List[Match]:
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as e:
        raise InterchangeError(f"{path}: cannot read matches: {e}")
    matches = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        parts = line.split()
        try:
            if len(parts) != 4:
                raise ValueError(f"expected 4 fields, got {len(parts)}")
            matches.append(Match(int(parts[0]), int(parts[1]), float(parts[2]), float(parts[3])))
        except ValueError as e:
            raise InterchangeError(f"{path}:{lineno}: {e}")
    return matches


def write_inliers(summary: VerificationSummary, path) -> Path:
    path = _prepare(path)
    lines = [summary.summary_line()]
    if summary.inliers is not None:
        lines += [str(int(i)) for i in summary.inliers.inlier_indices]
    path.write_text("\n".join(lines) + "\n")
    logger.info(f"Wrote verification result ({summary.decision}) to {path}")
    return path


def read_inliers(path):
    """(summary fields, inlier match indices)"""
    path = Path(path)
    try:
        lines = [line for line in path.read_text().splitlines() if line.strip()]
    except OSError as e:
        raise InterchangeError(f"{path}: cannot read inliers: {e}")
    if not lines:
        raise InterchangeError(f"{path}: empty inlier file")
    head = lines[0].split()
    if len(head) != 5:
        raise InterchangeError(f"{path}: summary line needs 5 fields")
    try:
        summary = {
            'n_matches': int(head[0]),
            'm_hat': float(head[1]),
            'beta': float(head[2]),
            'chi2': float(head[3]),
            'decision': head[4],
        }
        indices = [int(line) for line in lines[1:]]
    except ValueError as e:
        raise InterchangeError(f"{path}: {e}")
    return summary, indices


__all__ = [
    'FEATURE_COLUMNS', 'write_features', 'read_features', 'DescriptorTable', 'write_descriptors',
    'read_descriptors', 'write_matches', 'read_matches', 'write_inliers', 'read_inliers',
]
