import numpy as np
import pytest

from src.errors import InsufficientCandidatesError
from src.models.features import Descriptor128
from src.services.matcher import distance_matrix, match_descriptors


def _bytes(rows):
    return np.asarray(rows, dtype=np.uint8).reshape(-1, 128)


def _one_hot(index, value=200):
    v = np.zeros(128, dtype=np.uint8)
    v[index] = value
    return v


class TestMatch:
    def test_identical_sets(self, rng):
        values = rng.integers(0, 256, (20, 128)).astype(np.uint8)
        matches = match_descriptors(values, values)
        assert [(m.index_a, m.index_b) for m in matches] == [(i, i) for i in range(20)]
        assert all(m.ratio == 0.0 and m.distance == 0.0 for m in matches)

    def test_equidistant_neighbours_rejected(self):
        a = _bytes([np.zeros(128)])
        b = _bytes([_one_hot(0), _one_hot(1)])
        assert match_descriptors(a, b) == []

    def test_ratio_threshold(self):
        a = _bytes([_one_hot(0, 100)])
        b = _bytes([_one_hot(0, 110), _one_hot(0, 200)])
        (m,) = match_descriptors(a, b)
        assert m.index_b == 0
        assert m.ratio == pytest.approx(10.0 / 100.0)
        assert m.distance == pytest.approx(10.0 / 512.0)
        assert match_descriptors(a, b, ratio_max=0.05) == []

    def test_ties_go_to_lower_index(self):
        a = _bytes([_one_hot(3)])
        b = _bytes([_one_hot(3), _one_hot(3), _one_hot(9)])
        (m,) = match_descriptors(a, b, ratio_max=1.0)
        assert m.index_b == 0
        assert m.ratio == 1.0

    def test_accepts_descriptor_objects(self, rng):
        values = rng.integers(0, 256, (5, 128))
        descs = [Descriptor128(v) for v in values]
        assert len(match_descriptors(descs, descs)) == 5

    def test_needs_two_references(self):
        with pytest.raises(InsufficientCandidatesError):
            match_descriptors(_bytes([_one_hot(0)]), _bytes([_one_hot(0)]))

    def test_needs_queries(self):
        with pytest.raises(InsufficientCandidatesError):
            match_descriptors(_bytes([]), _bytes([_one_hot(0), _one_hot(1)]))


class TestMutual:
    def test_symmetric(self, rng):
        a = rng.integers(0, 256, (40, 128)).astype(np.uint8)
        b = np.clip(a[rng.permutation(40)].astype(int) + rng.integers(-3, 4, (40, 128)), 0, 255).astype(np.uint8)
        ab = {(m.index_a, m.index_b) for m in match_descriptors(a, b, mutual=True)}
        ba = {(m.index_b, m.index_a) for m in match_descriptors(b, a, mutual=True)}
        assert ab == ba
        assert len(ab) == 40

    def test_non_reciprocal_dropped(self):
        # both queries prefer reference 0, which prefers query 1
        a = _bytes([_one_hot(0, 150), _one_hot(0, 200)])
        b = _bytes([_one_hot(0, 210), _one_hot(5)])
        plain = match_descriptors(a, b, ratio_max=1.0)
        mutual = match_descriptors(a, b, ratio_max=1.0, mutual=True)
        assert {(m.index_a, m.index_b) for m in plain} == {(0, 0), (1, 0)}
        assert [(m.index_a, m.index_b) for m in mutual] == [(1, 0)]


class TestDistances:
    def test_threads_do_not_change_distances(self, rng):
        a = rng.integers(0, 256, (1100, 128)).astype(np.float64) / 512.0
        b = rng.integers(0, 256, (30, 128)).astype(np.float64) / 512.0
        assert np.array_equal(distance_matrix(a, b, threads=1), distance_matrix(a, b, threads=4))
