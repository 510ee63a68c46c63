"""Bucket-pair hashing: determinism, range, seed sensitivity, uniformity."""
import numpy as np
import pytest
from scipy import stats

from simsketch import Carbonyl4Sketch, SketchParams, hash_pair


class TestHashPair:
    def test_deterministic(self):
        for key in (0, 1, 12345, 2**32 - 1, 2**64 - 1):
            a = hash_pair(key, 64, seed=9)
            b = hash_pair(key, 64, seed=9)
            assert a == b

    def test_range(self):
        w = 37  # non power of two on purpose
        for key in range(2000):
            i1, i2 = hash_pair(key, w, seed=5)
            assert 0 <= i1 < w
            assert 0 <= i2 < w

    def test_seed_changes_layout(self):
        keys = range(256)
        layout_a = [hash_pair(k, 1024, seed=1) for k in keys]
        layout_b = [hash_pair(k, 1024, seed=2) for k in keys]
        assert layout_a != layout_b

    def test_hashes_may_collide_but_not_always(self):
        pairs = [hash_pair(k, 8, seed=3) for k in range(4000)]
        same = sum(i1 == i2 for i1, i2 in pairs)
        assert 0 < same < len(pairs)  # collisions happen at rate ~1/w

    def test_matches_sketch_placement_candidates(self):
        params = SketchParams(w=64, seed=42)
        sketch = Carbonyl4Sketch(params)
        for key in range(512):
            assert sketch.hash_pair(key) == hash_pair(key, 64, seed=42)

    def test_first_hash_uniform_chi_square(self):
        w = 64
        n = 100_000
        counts = np.zeros(w, dtype=np.int64)
        for key in range(n):
            i1, _ = hash_pair(key, w, seed=11)
            counts[i1] += 1
        _, p = stats.chisquare(counts)
        assert p > 0.001

    def test_second_hash_uniform_chi_square(self):
        w = 64
        n = 100_000
        counts = np.zeros(w, dtype=np.int64)
        for key in range(n):
            _, i2 = hash_pair(key, w, seed=11)
            counts[i2] += 1
        _, p = stats.chisquare(counts)
        assert p > 0.001

    def test_pair_joint_spread(self):
        # the two indices should not be correlated: bin the joint
        # distribution over a small table and chi-square it
        w = 16
        n = 80_000
        counts = np.zeros(w * w, dtype=np.int64)
        for key in range(n):
            i1, i2 = hash_pair(key, w, seed=23)
            counts[i1 * w + i2] += 1
        _, p = stats.chisquare(counts)
        assert p > 0.001
