import math

import numpy as np
import pytest

from src.errors import InterchangeError
from src.models.features import AffineParams, Descriptor128, ExtremumKind, Feature, Match
from src.services.feature_io import (FEATURE_COLUMNS, read_descriptors, read_features, read_inliers,
                                     read_matches, write_descriptors, write_features, write_inliers,
                                     write_matches)
from src.services.geomcheck import verify_matches
from src.services.synthetic import similarity_matches


def _feature(x=12.25, y=7.5, sigma=2.0, channel=None, orientations=None):
    return Feature(x, y, sigma, ExtremumKind.MIN, 1, -0.3, channel or AffineParams.identity(),
                   list(orientations or []))


class TestFeatures:
    def test_header_only_when_empty(self, tmp_path):
        path = write_features([], tmp_path / "f.csv")
        assert path.read_text() == ",".join(FEATURE_COLUMNS) + "\n"
        assert read_features(path) == []

    def test_fields_survive(self, tmp_path):
        channel = AffineParams.from_tilt(2.0, math.radians(45))
        f = _feature(channel=channel, orientations=[0.5, 3.0])
        (g,) = read_features(write_features([f, _feature()], tmp_path / "f.csv"))[:1]
        assert (g.x, g.y, g.sigma, g.kind, g.octave, g.response) == (f.x, f.y, f.sigma, f.kind, 1, -0.3)
        assert np.allclose(g.channel.A, channel.A)
        assert g.orientations == pytest.approx([0.5, 3.0], abs=1e-6)

    def test_missing_column(self, tmp_path):
        path = tmp_path / "f.csv"
        path.write_text("x,y\n1,2\n")
        with pytest.raises(InterchangeError):
            read_features(path)

    def test_bad_kind(self, tmp_path):
        path = write_features([_feature()], tmp_path / "f.csv")
        path.write_text(path.read_text().replace(",min,", ",peak,"))
        with pytest.raises(InterchangeError):
            read_features(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(InterchangeError):
            read_features(tmp_path / "none.csv")


class TestDescriptors:
    def test_layout(self, tmp_path):
        values = np.arange(128) % 256
        d = Descriptor128(values, _feature(sigma=2.0))
        path = write_descriptors([d], tmp_path / "d.txt")
        lines = path.read_text().splitlines()
        assert lines[:2] == ["128", "1"]
        fields = lines[2].split()
        assert len(fields) == 133
        assert fields[:2] == ["12.250000", "7.500000"]
        assert float(fields[2]) == pytest.approx(0.25)
        table = read_descriptors(path)
        assert len(table) == 1
        assert table.values[0].tolist() == values.tolist()
        assert table.points.tolist() == [[12.25, 7.5]]

    def test_count_mismatch(self, tmp_path):
        path = tmp_path / "d.txt"
        path.write_text("128\n2\n" + " ".join(["0"] * 133) + "\n")
        with pytest.raises(InterchangeError):
            read_descriptors(path)

    def test_values_must_be_bytes(self, tmp_path):
        path = tmp_path / "d.txt"
        path.write_text("128\n1\n" + " ".join(["0"] * 132 + ["300"]) + "\n")
        with pytest.raises(InterchangeError):
            read_descriptors(path)

    def test_needs_feature(self, tmp_path):
        with pytest.raises(InterchangeError):
            write_descriptors([Descriptor128(np.zeros(128))], tmp_path / "d.txt")


class TestMatchesAndInliers:
    def test_match_lines(self, tmp_path):
        path = write_matches([Match(0, 3, 0.125, 0.5), Match(2, 1, 0.0, 0.0)], tmp_path / "m.txt")
        assert path.read_text() == "0 3 0.125000 0.500000\n2 1 0.000000 0.000000\n"
        assert [(m.index_a, m.index_b) for m in read_matches(path)] == [(0, 3), (2, 1)]

    def test_malformed_match(self, tmp_path):
        path = tmp_path / "m.txt"
        path.write_text("0 3 0.1\n")
        with pytest.raises(InterchangeError):
            read_matches(path)

    def test_inlier_file(self, tmp_path):
        X, Y, _ = similarity_matches(20, 0, seed=1)
        summary = verify_matches(X, Y)
        path = write_inliers(summary, tmp_path / "inliers.txt")
        head, indices = read_inliers(path)
        assert head['n_matches'] == 20
        assert head['decision'] == summary.decision
        assert indices == summary.inliers.inlier_indices.tolist()
        assert path.read_text().splitlines()[0] == summary.summary_line()

    def test_empty_inlier_file(self, tmp_path):
        path = tmp_path / "inliers.txt"
        path.write_text("")
        with pytest.raises(InterchangeError):
            read_inliers(path)
