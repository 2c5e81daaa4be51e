import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from viewguided.core import merge, random_halves
from viewguided.partfilter import (
    Partition,
    build_coarse,
    estimate_density_threshold,
    partial_distances,
    partition_fine_coarse,
)


def clouds(min_n=1, max_n=40):
    return st.integers(min_n, max_n).flatmap(
        lambda n: arrays(np.float64, (n, 3), elements=st.floats(-3, 3, allow_nan=False))
    )


class TestThreshold:
    def test_collinear_example(self):
        pts = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0], [3, 0, 0]], dtype=float)
        # find a seed realising the split {0,2} | {1,3}
        for seed in range(500):
            a, b = random_halves(pts, seed)
            if {tuple(a), tuple(b)} == {(0, 2), (1, 3)}:
                break
        else:
            pytest.skip("no seed produced the split")
        assert estimate_density_threshold(pts, seed) == 1.0

    def test_coincident(self):
        assert estimate_density_threshold(np.ones((2, 3)), 0) == 0.0

    def test_too_small(self):
        with pytest.raises(ValueError):
            estimate_density_threshold(np.zeros((1, 3)))

    @given(clouds(2), st.floats(0.1, 10), st.integers(0, 1000))
    def test_scaling(self, pts, s, seed):
        a = estimate_density_threshold(pts, seed)
        b = estimate_density_threshold(pts * s, seed)
        assert b == pytest.approx(a * s * s, rel=1e-9, abs=1e-12)

    def test_seeded(self, rng):
        pts = rng.normal(size=(100, 3))
        assert estimate_density_threshold(pts, 4) == estimate_density_threshold(pts, 4)


class TestCoarse:
    def test_full_is_permutation(self, rng):
        pts = rng.normal(size=(30, 3))
        out = build_coarse(pts, 30).points
        assert sorted(map(tuple, out)) == sorted(map(tuple, pts))
        assert build_coarse(pts, 30).tag == "coarse"

    def test_default_sizes(self, rng):
        merged = merge(rng.normal(size=(2048, 3)), rng.normal(size=(784, 3)))
        assert len(build_coarse(merged)) == 1024

    def test_too_many(self):
        with pytest.raises(ValueError):
            build_coarse(np.zeros((3, 3)), 4)

    def test_min_spacing_monotone(self, rng):
        pts = rng.normal(size=(200, 3))

        def min_gap(x):
            d = ((x[:, None] - x[None]) ** 2).sum(-1)
            return d[np.triu_indices(len(x), 1)].min()

        gaps = [min_gap(build_coarse(pts, k).points) for k in (5, 10, 20, 40)]
        assert all(g1 >= g2 for g1, g2 in zip(gaps, gaps[1:]))


class TestPartition:
    def test_zero_threshold(self, rng):
        c = rng.normal(size=(10, 3))
        p = partition_fine_coarse(c, c, 0.0)
        assert p.fine.size == 0 and p.coarse.size == 10

    def test_hand_example(self):
        p = partition_fine_coarse([[0, 0, 0], [0.05, 0, 0], [5, 0, 0]], [[0, 0, 0]], 0.01)
        assert p.fine.tolist() == [0, 1] and p.coarse.tolist() == [2]

    def test_superset_all_fine(self, rng):
        c = rng.normal(size=(10, 3))
        p = partition_fine_coarse(c, np.concatenate([c, rng.normal(size=(5, 3))]), 1e-6)
        assert p.fine.size == 10

    def test_negative_threshold(self):
        with pytest.raises(ValueError):
            partition_fine_coarse([[0, 0, 0]], [[0, 0, 0]], -1.0)

    def test_force_count(self, rng):
        c = rng.normal(size=(50, 3))
        partial = rng.normal(size=(20, 3))
        p = partition_fine_coarse(c, partial, 0.1, force_coarse_count=30)
        assert p.coarse.size == 30
        d = partial_distances(c, partial)
        assert d[p.coarse].min() >= d[p.fine].max()

    def test_dict_roundtrip(self, rng):
        p = partition_fine_coarse(rng.normal(size=(20, 3)), rng.normal(size=(5, 3)), 0.5)
        q = Partition.from_dict(p.to_dict())
        np.testing.assert_array_equal(p.fine, q.fine)
        np.testing.assert_array_equal(p.coarse, q.coarse)
        assert p.d_thr == q.d_thr

    @given(clouds(), clouds(), st.floats(0, 5))
    def test_set_partition_and_rule(self, c, partial, thr):
        p = partition_fine_coarse(c, partial, thr)
        assert np.intersect1d(p.fine, p.coarse).size == 0
        assert sorted(np.concatenate([p.fine, p.coarse]).tolist()) == list(range(len(c)))
        d = partial_distances(c, partial)
        assert np.all(d[p.fine] < thr)
        assert np.all(d[p.coarse] >= thr)

    def test_default_total(self, rng):
        partial = rng.normal(size=(2048, 3))
        coarse = build_coarse(merge(partial, rng.normal(size=(784, 3))))
        p = partition_fine_coarse(coarse, partial, estimate_density_threshold(coarse))
        assert p.size == 1024
