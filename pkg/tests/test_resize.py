"""Resizing strategies: rebuilding into a new geometry, and the two
in-place halving folds (resampling and smallest-pair coalescing)."""
import numpy as np
import pytest

from simsketch import (BalanceBucket, Carbonyl4Sketch, Entry, RebuildPolicy,
                       ShrinkMode, SimStream, SketchParams, SplitMix64,
                       merge_pair_heuristic, merge_pair_resample, rebuild,
                       shrink_halve)


def make_pair(d=2):
    a = BalanceBucket.from_entries([(1, -10.0), (2, 5.0)], d=d)
    b = BalanceBucket.from_entries([(3, -3.0), (4, 2.0)], d=d)
    return a, b


def values_by_key(bucket_or_sketch):
    if isinstance(bucket_or_sketch, BalanceBucket):
        return {e.key: e.value for e in bucket_or_sketch.entries()}
    return {e.key: e.value for e in bucket_or_sketch.stored_entries()}


def mixed_stream(rs, n_updates, n_keys):
    kinds = (rs.random(n_updates) < 0.5).astype(np.uint8)
    keys = rs.integers(0, n_keys, n_updates).astype(np.uint64)
    values = np.where(kinds == 0, rs.exponential(10.0, n_updates),
                      rs.normal(0.0, 10.0, n_updates))
    return SimStream(kinds, keys, values)


class TestMergePairResample:
    def test_two_entries_fit_losslessly(self):
        a = BalanceBucket.from_entries([(1, 4.0)], d=4)
        b = BalanceBucket.from_entries([(2, -6.0)], d=4)
        rng = SplitMix64(1)
        before = int(rng.state[0])
        out = merge_pair_resample(a, b, rng)
        assert values_by_key(out) == {1: 4.0, 2: -6.0}
        assert int(rng.state[0]) == before  # no draws needed

    def test_threshold_sampling_hand_example(self):
        # magnitudes [10, 5, 3, 2] into d=2: the 10 is a certain survivor
        # kept verbatim; exactly one of the rest survives with the whole
        # residual mass of 10, chosen proportionally to size
        a, b = make_pair()
        rng = SplitMix64(7)
        trials = 100_000
        counts = {2: 0, 3: 0, 4: 0}
        value_sums = {2: 0.0, 3: 0.0, 4: 0.0}
        for _ in range(trials):
            out = merge_pair_resample(a, b, rng)
            got = values_by_key(out)
            assert got.pop(1) == -10.0
            ((key, value),) = got.items()
            assert abs(value) == pytest.approx(10.0)
            counts[key] += 1
            value_sums[key] += value
        for key, prob in ((2, 0.5), (3, 0.3), (4, 0.2)):
            se = (prob * (1 - prob) / trials) ** 0.5
            assert abs(counts[key] / trials - prob) < 4 * se
        # inclusion-probability unbiasedness: mean stored value equals the
        # original signed value for every tail entry
        for key, orig in ((2, 5.0), (3, -3.0), (4, 2.0)):
            mean = value_sums[key] / trials
            p = abs(orig) / 10.0
            se = (p * (1 - p)) ** 0.5 * 10.0 / trials ** 0.5
            assert abs(mean - orig) < 4 * se

    def test_sampled_survivor_keeps_own_sign(self):
        a, b = make_pair()
        rng = SplitMix64(3)
        for _ in range(500):
            out = merge_pair_resample(a, b, rng)
            for e in out.entries():
                if e.key == 3:
                    assert e.value == pytest.approx(-10.0)
                elif e.key in (2, 4):
                    assert e.value == pytest.approx(10.0)

    def test_fuzzed_counts_and_mass(self):
        rs = np.random.default_rng(10)
        rng = SplitMix64(11)
        for _ in range(300):
            d = int(rs.integers(2, 6))
            na, nb = int(rs.integers(0, d + 1)), int(rs.integers(0, d + 1))
            key = 1
            buckets = []
            for n in (na, nb):
                entries = []
                for _ in range(n):
                    sign = -1.0 if rs.random() < 0.5 else 1.0
                    entries.append((key, sign * float(rs.exponential(5.0))))
                    key += 1
                buckets.append(BalanceBucket.from_entries(entries, d=d))
            a, b = buckets
            mass = a.total_abs_mass() + b.total_abs_mass()
            out = merge_pair_resample(a, b, rng)
            assert out.occupied_count() == min(na + nb, d)
            assert out.total_abs_mass() == pytest.approx(mass, rel=1e-9)

    def test_certain_survivors_keep_exact_values(self):
        # with descending magnitudes, any prefix entry passing the
        # remaining-slots threshold must come through untouched
        rng = SplitMix64(9)
        a = BalanceBucket.from_entries([(1, 100.0), (2, -50.0), (3, 1.0)],
                                       d=3)
        b = BalanceBucket.from_entries([(4, 0.5), (5, 0.25)], d=3)
        for _ in range(200):
            got = values_by_key(merge_pair_resample(a, b, rng))
            # 3 slots, sum 151.75: 3*100/151.75 > 1 and 2*50/51.75 > 1
            assert got[1] == 100.0
            assert got[2] == -50.0


class TestMergePairHeuristic:
    def test_two_entries_fit_losslessly(self):
        a = BalanceBucket.from_entries([(1, 4.0)], d=4)
        b = BalanceBucket.from_entries([(2, -6.0)], d=4)
        rng = SplitMix64(2)
        before = int(rng.state[0])
        out = merge_pair_heuristic(a, b, rng)
        assert values_by_key(out) == {1: 4.0, 2: -6.0}
        assert int(rng.state[0]) == before

    def test_smallest_pair_hand_example(self):
        # [10, 5, 3, 2] into d=2: (3,2) coalesce to 5', then (5,5') to 10',
        # leaving magnitudes {10, 10}
        a, b = make_pair()
        rng = SplitMix64(5)
        for _ in range(400):
            out = merge_pair_heuristic(a, b, rng)
            got = values_by_key(out)
            assert got.pop(1) == -10.0
            ((key, value),) = got.items()
            assert key in (2, 3, 4)
            assert abs(value) == pytest.approx(10.0)
            assert out.occupied_count() == 2

    def test_mean_values_preserved(self):
        a, b = make_pair()
        rng = SplitMix64(6)
        trials = 40_000
        sums = {1: 0.0, 2: 0.0, 3: 0.0, 4: 0.0}
        sq = {1: 0.0, 2: 0.0, 3: 0.0, 4: 0.0}
        for _ in range(trials):
            got = values_by_key(merge_pair_heuristic(a, b, rng))
            for key in sums:
                v = got.get(key, 0.0)
                sums[key] += v
                sq[key] += v * v
        for key, orig in ((1, -10.0), (2, 5.0), (3, -3.0), (4, 2.0)):
            mean = sums[key] / trials
            var = sq[key] / trials - mean * mean
            se = (max(var, 1e-12) / trials) ** 0.5
            assert abs(mean - orig) < 4 * se + 1e-12

    def test_fuzzed_counts_and_mass(self):
        rs = np.random.default_rng(20)
        rng = SplitMix64(21)
        for _ in range(300):
            d = int(rs.integers(2, 6))
            na, nb = int(rs.integers(0, d + 1)), int(rs.integers(0, d + 1))
            key = 1
            buckets = []
            for n in (na, nb):
                entries = []
                for _ in range(n):
                    entries.append((key, float(rs.normal(0.0, 8.0))))
                    key += 1
                buckets.append(BalanceBucket.from_entries(entries, d=d))
            a, b = buckets
            mass = a.total_abs_mass() + b.total_abs_mass()
            out = merge_pair_heuristic(a, b, rng)
            assert out.occupied_count() == min(na + nb, d)
            assert out.total_abs_mass() == pytest.approx(mass, rel=1e-9)

    def test_geometry_mismatch_rejected(self):
        a = BalanceBucket(2)
        b = BalanceBucket(3)
        with pytest.raises(ValueError):
            merge_pair_heuristic(a, b, SplitMix64(1))
        with pytest.raises(ValueError):
            merge_pair_resample(a, b, SplitMix64(1))


class TestFoldVarianceOrdering:
    def test_resampling_beats_smallest_pair_on_average(self):
        # squared deviation from the pre-fold values, averaged over many
        # random full pairs: the proportional sampler should not lose
        rs = np.random.default_rng(30)
        rng_r = SplitMix64(31)
        rng_h = SplitMix64(32)
        d = 4
        total_r = total_h = 0.0
        pairs = 2_000
        for _ in range(pairs):
            key = 1
            buckets = []
            for _ in range(2):
                entries = []
                for _ in range(d):
                    sign = -1.0 if rs.random() < 0.5 else 1.0
                    entries.append((key, sign * float(rs.exponential(10.0))))
                    key += 1
                buckets.append(BalanceBucket.from_entries(entries, d=d))
            a, b = buckets
            orig = {**values_by_key(a), **values_by_key(b)}
            got_r = values_by_key(merge_pair_resample(a, b, rng_r))
            got_h = values_by_key(merge_pair_heuristic(a, b, rng_h))
            total_r += sum((got_r.get(k, 0.0) - v) ** 2
                           for k, v in orig.items())
            total_h += sum((got_h.get(k, 0.0) - v) ** 2
                           for k, v in orig.items())
        assert total_r / pairs <= total_h / pairs


class TestRebuild:
    def test_growing_preserves_every_value(self):
        sk = Carbonyl4Sketch(SketchParams(w=8, d=4, seed=40))
        rs = np.random.default_rng(41)
        sk.apply_stream(mixed_stream(rs, 60, 20))
        before = values_by_key(sk)
        grown = rebuild(sk, 16)
        assert grown.w == 16
        assert values_by_key(grown) == before
        for key, value in before.items():
            assert grown.point_query(key) == value
        assert grown.point_query(10**9) == 0.0

    def test_same_width_sparse_table_is_exact(self):
        sk = Carbonyl4Sketch(SketchParams(w=16, d=4, seed=42))
        for k, v in ((1, 2.0), (2, -3.0), (3, 4.5), (4, 1.25)):
            sk.set(k, v)
        before = values_by_key(sk)
        out = rebuild(sk, 16)
        assert values_by_key(out) == before

    def test_halving_is_unbiased(self):
        sk = Carbonyl4Sketch(SketchParams(w=8, d=4, seed=43))
        rs = np.random.default_rng(44)
        sk.apply_stream(mixed_stream(rs, 300, 40))
        entries = sk.stored_entries()
        keys = np.array([e.key for e in entries], dtype=np.uint64)
        before = np.array([e.value for e in entries])
        mass = sk.total_abs_mass()
        trials = 10_000
        policy = RebuildPolicy(p_eps_rebuild=0.1)
        sums = np.zeros(keys.size)
        sq = np.zeros(keys.size)
        for t in range(trials):
            small = rebuild(sk, 4, policy, seed=t)
            assert small.total_abs_mass() == pytest.approx(mass, rel=1e-9)
            est = small.point_query_batch(keys)
            sums += est
            sq += est * est
        mean = sums / trials
        var = np.maximum(sq / trials - mean**2, 0.0)
        se = np.sqrt(var / trials)
        bad = np.abs(mean - before) >= 4 * se + 1e-9
        assert not bad.any(), f"biased keys: {keys[bad]}"

    def test_explicit_seed_is_deterministic(self):
        sk = Carbonyl4Sketch(SketchParams(w=8, d=4, seed=45))
        rs = np.random.default_rng(46)
        sk.apply_stream(mixed_stream(rs, 200, 30))
        a = rebuild(sk, 4, seed=123)
        b = rebuild(sk, 4, seed=123)
        assert a.state_digest() == b.state_digest()

    def test_default_seed_draws_from_source(self):
        sk = Carbonyl4Sketch(SketchParams(w=8, d=4, seed=47))
        state = int(sk.rng.state[0])
        rebuild(sk, 16)
        assert int(sk.rng.state[0]) != state

    def test_rejects_tiny_width(self):
        sk = Carbonyl4Sketch(SketchParams(w=8, d=4, seed=48))
        with pytest.raises(ValueError):
            rebuild(sk, 1)

    def test_policy_validation(self):
        with pytest.raises(ValueError):
            RebuildPolicy(alpha=0.0)
        with pytest.raises(ValueError):
            RebuildPolicy(alpha=1.0)
        with pytest.raises(ValueError):
            RebuildPolicy(kick_cap=-1)


class TestShrinkHalve:
    def shrinkable(self, w=8, seed=50, n_updates=400, n_keys=60):
        sk = Carbonyl4Sketch(SketchParams(w=w, d=4, seed=seed,
                                          shrinkable=True))
        rs = np.random.default_rng(seed + 1)
        sk.apply_stream(mixed_stream(rs, n_updates, n_keys))
        return sk

    def test_fold_pairs_bucket_k_with_k_plus_half(self):
        sk = Carbonyl4Sketch(SketchParams(w=4, d=2, seed=51,
                                          shrinkable=True))
        sk.bucket(0).set_slot(0, 101, 1.0)
        sk.bucket(2).set_slot(0, 102, 2.0)
        sk.bucket(1).set_slot(0, 103, 3.0)
        sk.bucket(3).set_slot(0, 104, 4.0)
        shrink_halve(sk, ShrinkMode.RESAMPLE)
        assert sk.w == 2
        assert values_by_key(sk.bucket(0)) == {101: 1.0, 102: 2.0}
        assert values_by_key(sk.bucket(1)) == {103: 3.0, 104: 4.0}

    @pytest.mark.parametrize("mode",
                             [ShrinkMode.RESAMPLE, ShrinkMode.HEURISTIC])
    def test_survivors_remain_queryable(self, mode):
        sk = self.shrinkable()
        shrink_halve(sk, mode)
        assert sk.w == 4
        seen = set()
        for b in range(sk.w):
            for s in range(sk.d):
                entry = sk.bucket(b).slot(s)
                if entry is None:
                    continue
                assert entry.key not in seen
                seen.add(entry.key)
                assert b in sk.hash_pair(entry.key)
                assert sk.point_query(entry.key) == entry.value
        assert seen

    @pytest.mark.parametrize("mode",
                             [ShrinkMode.RESAMPLE, ShrinkMode.HEURISTIC])
    def test_mass_conserved(self, mode):
        sk = self.shrinkable(seed=52)
        mass = sk.total_abs_mass()
        shrink_halve(sk, mode)
        assert sk.total_abs_mass() == pytest.approx(mass, rel=1e-9)
        assert sk.memory_bytes() == sk.params.memory_bytes()

    def test_empty_sketch_halves_to_empty(self):
        sk = Carbonyl4Sketch(SketchParams(w=8, d=4, seed=53,
                                          shrinkable=True))
        shrink_halve(sk, ShrinkMode.HEURISTIC)
        assert sk.w == 4
        assert sk.occupied_count() == 0
        assert sk.total_abs_mass() == 0.0

    def test_repeated_halving_stops_at_two_buckets(self):
        sk = self.shrinkable()
        shrink_halve(sk, ShrinkMode.RESAMPLE)
        shrink_halve(sk, ShrinkMode.RESAMPLE)
        assert sk.w == 2
        with pytest.raises(ValueError):
            shrink_halve(sk, ShrinkMode.RESAMPLE)

    def test_rejects_odd_width_and_rebuild_mode(self):
        odd = Carbonyl4Sketch(SketchParams(w=5, d=2, seed=54))
        with pytest.raises(ValueError):
            shrink_halve(odd, ShrinkMode.RESAMPLE)
        sk = self.shrinkable()
        with pytest.raises(ValueError):
            shrink_halve(sk, ShrinkMode.REBUILD)
