"""Ten desk-scale end-to-end checks, one test per numbered property.

Each check replays frozen workloads and generator seeds, so every
statistical verdict here is a deterministic re-evaluation of an effect
that was sized to clear its tolerance with a wide margin.  Tolerances:
4 standard errors for unbiasedness checks, a pinned 1% band for the
merge-cost identity, and strict orderings for the comparative trends.
"""
import itertools
import time

import numpy as np
import pytest

from simsketch import (BalanceBucket, Carbonyl4Sketch, CocoStar, CuckooTable,
                       ExactOracle, ShrinkMode, SimStream, SketchParams,
                       SplitMix64, SyntheticSpec, gen_synthetic,
                       merge_pair_heuristic, merge_pair_resample, rebuild,
                       shrink_halve)
from simsketch._kernels import _merge_pm_trials
from simsketch.metrics import compute_errors, compute_recall


def mixed_stream(rs: np.random.Generator, n_updates: int,
                 n_keys: int) -> SimStream:
    """Half overwrites (positive, heavy-tailed), half signed increments."""
    kinds = (rs.random(n_updates) < 0.5).astype(np.uint8)
    keys = rs.integers(0, n_keys, n_updates).astype(np.uint64)
    values = np.where(kinds == 0, rs.exponential(10.0, n_updates),
                      rs.normal(0.0, 10.0, n_updates))
    return SimStream(kinds, keys, values)


def values_by_key(bucket: BalanceBucket) -> dict[int, float]:
    return {e.key: e.value for e in bucket.entries()}


def test_01_pair_merge_variance_equals_twice_magnitude_product():
    # coalescing magnitudes (3, 4) must inject variance 2*3*4 = 24;
    # the Monte-Carlo estimate over 1e6 draws is held to a 1% band
    n = 1_000_000
    rng = SplitMix64(4242)
    _, _, pair_sqerr_sum, _ = _merge_pm_trials(3.0, 4.0, n, rng.state)
    pair_variance = pair_sqerr_sum / n
    assert 24.0 * 0.99 <= pair_variance <= 24.0 * 1.01


@pytest.fixture(scope="module")
def bucket_replay():
    """One fixed 500-update stream over 32 keys pushed through a d=4
    bucket 20000 times; returns per-key moments and the error mass."""
    rs = np.random.default_rng(2024)
    n_keys, trials = 32, 20_000
    stream = mixed_stream(rs, 500, n_keys)
    oracle = ExactOracle()
    oracle.apply_stream(stream)
    truth = oracle.point_query_batch(np.arange(n_keys, dtype=np.uint64))
    rng = SplitMix64(77)
    sums = np.zeros(n_keys)
    sq = np.zeros(n_keys)
    sqdev_total = 0.0
    for _ in range(trials):
        bucket = BalanceBucket(4)
        bucket.apply_stream(stream, rng)
        est = np.array([bucket.point_query(k) for k in range(n_keys)])
        sums += est
        sq += est * est
        sqdev_total += float(((est - truth) ** 2).sum())
    return {"trials": trials, "truth": truth, "mean": sums / trials,
            "var": sq / trials - (sums / trials) ** 2,
            "mean_sqdev": sqdev_total / trials, "l1": oracle.l1_norm}


def test_02_bucket_point_estimates_unbiased_for_every_key(bucket_replay):
    r = bucket_replay
    se = np.sqrt(np.maximum(r["var"], 1e-12) / r["trials"])
    gap = np.abs(r["mean"] - r["truth"])
    assert (gap <= 4.0 * se + 1e-9).all(), \
        f"worst key off by {float((gap - 4 * se).max()):.4f}"


def test_03_bucket_total_squared_error_within_variance_bound(bucket_replay):
    r = bucket_replay
    assert r["mean_sqdev"] <= 2.0 * r["l1"] ** 2 / 4.0


def test_04_sketch_subset_sums_unbiased():
    # w=64, d=4 table under a 1e5-update zipfian stream; 1000 random
    # 10-key subsets, 1000 independent table seeds
    stream = gen_synthetic(SyntheticSpec(n_items=100_000,
                                         key_universe=1 << 12, seed=11))
    oracle = ExactOracle()
    oracle.apply_stream(stream)
    okeys = np.array(oracle.keys(), dtype=np.uint64)
    truth = oracle.point_query_batch(okeys)
    rs = np.random.default_rng(404)
    n_subsets, size, trials = 1000, 10, 1000
    idx = np.stack([rs.choice(okeys.size, size, replace=False)
                    for _ in range(n_subsets)])
    flat = okeys[idx.ravel()]
    subset_truth = truth[idx].sum(axis=1)
    sums = np.zeros(n_subsets)
    sq = np.zeros(n_subsets)
    for t in range(trials):
        sk = Carbonyl4Sketch(SketchParams(w=64, d=4, seed=1000 + t))
        sk.apply_stream(stream)
        est = sk.point_query_batch(flat).reshape(n_subsets, size).sum(axis=1)
        sums += est
        sq += est * est
    mean = sums / trials
    se = np.sqrt(np.maximum(sq / trials - mean ** 2, 1e-12) / trials)
    within = np.abs(mean - subset_truth) <= 4.0 * se + 1e-9
    assert within.mean() >= 0.95, f"only {within.mean():.3f} within 4 SE"


def test_05_overflow_walk_short_on_average_and_ordered():
    stream = gen_synthetic(SyntheticSpec(n_items=200_000,
                                         key_universe=1 << 14, seed=5))

    def mean_steps(cap: int, stop: float, seeds=(0, 1, 2)) -> float:
        vals = []
        for s in seeds:
            sk = Carbonyl4Sketch(SketchParams(w=64, d=4, stop_prob=stop,
                                              max_search_steps=cap, seed=s))
            sk.apply_stream(stream)
            vals.append(sk.avg_search_steps())
        return sum(vals) / len(vals)

    # stop probability 0.1 with an effectively unbounded cap: the mean
    # walk must stay under the pinned ceiling 2/0.0577 ~ 34.66 steps
    sk = Carbonyl4Sketch(SketchParams(w=64, d=4, stop_prob=0.1,
                                      max_search_steps=1000, seed=0))
    sk.apply_stream(stream)
    assert sk.overflow_count >= 100_000
    assert sk.avg_search_steps() <= 2.0 / 0.0577

    by_cap = [mean_steps(m, 0.1) for m in (0, 1, 2, 4, 10, 20, 30)]
    assert all(a <= b for a, b in zip(by_cap, by_cap[1:])), by_cap
    by_stop = [mean_steps(10, p) for p in (0.05, 0.1, 0.2, 0.5)]
    assert all(a >= b for a, b in zip(by_stop, by_stop[1:])), by_stop


def test_06_lower_error_than_baselines_at_equal_memory():
    # 1e6 mixed updates; table sized so stored keys outnumber slots 3:2,
    # which pushes the cuckoo baseline past its capacity
    stream = gen_synthetic(SyntheticSpec(n_items=1_000_000,
                                         key_universe=1 << 16, seed=6))
    oracle = ExactOracle()
    oracle.apply_stream(stream)
    keys = np.array(oracle.keys(), dtype=np.uint64)
    truth = oracle.point_query_batch(keys)
    d = 4
    w = int(round(len(oracle) / 1.5 / d))

    builders = {
        "carbonyl4": lambda s: Carbonyl4Sketch(SketchParams(w=w, d=d,
                                                            seed=s)),
        "coco": lambda s: CocoStar(w, d=d, seed=s),
        "cuckoo": lambda s: CuckooTable(w, d=d, seed=s),
    }
    mean = {}
    for name, build in builders.items():
        rows = []
        for t in range(10):
            est = build(t)
            est.apply_stream(stream)
            rows.append(compute_errors(truth, est.point_query_batch(keys)))
        mean[name] = {m: sum(r[m] for r in rows) / len(rows)
                      for m in ("aae", "mse")}
    for metric in ("aae", "mse"):
        assert mean["carbonyl4"][metric] < mean["coco"][metric], mean
        assert mean["carbonyl4"][metric] < mean["cuckoo"][metric], mean


def test_07_cuckoo_is_exact_up_to_94_percent_load():
    # 480 distinct keys in 128*4 = 512 slots: 93.75% full, zero error
    stream = gen_synthetic(SyntheticSpec(n_items=100_000, key_universe=480,
                                         seed=7))
    oracle = ExactOracle()
    oracle.apply_stream(stream)
    keys = np.array(oracle.keys(), dtype=np.uint64)
    assert len(oracle) / 512 <= 0.94
    table = CuckooTable(128, d=4, seed=7)
    table.apply_stream(stream)
    scores = compute_errors(oracle.point_query_batch(keys),
                            table.point_query_batch(keys))
    assert table.dropped == 0
    assert scores["mse"] == 0.0


def test_08_topk_recall_high_and_ahead_of_baseline_at_third_memory():
    # value-accumulating workload (pure increments with positive drift)
    # so the heaviest 1000 keys carry most of the mass; memory is one
    # third of the point-query sizing used above
    spec = SyntheticSpec(n_items=1_000_000, key_universe=1 << 16,
                         zipf_alpha=1.1, set_ratio=0.0,
                         inc_normal_mean=10.0, inc_normal_sd=1.0, seed=8)
    stream = gen_synthetic(spec)
    oracle = ExactOracle()
    oracle.apply_stream(stream)
    w = int(round(len(oracle) / 1.5 / 4)) // 3
    top_truth = [e.key for e in oracle.topk_query(1000)]
    carb_recalls, coco_recalls = [], []
    for t in range(10):
        carb = Carbonyl4Sketch(SketchParams(w=w, d=4, seed=200 + t))
        coco = CocoStar(w, d=4, seed=200 + t)
        carb.apply_stream(stream)
        coco.apply_stream(stream)
        carb_recalls.append(compute_recall(
            top_truth, (e.key for e in carb.topk_query(1000))))
        coco_recalls.append(compute_recall(
            top_truth, (e.key for e in coco.topk_query(1000))))
    carb_mean = np.mean(carb_recalls)
    assert carb_mean >= 0.95
    assert carb_mean >= np.mean(coco_recalls)


def test_09_shrink_unbiased_variance_optimal_and_fast():
    # (a) per-entry unbiasedness of the proportional pair merge across
    # 1e5 fresh generator seeds on a fixed two-bucket instance
    truth = {1: -10.0, 2: 5.0, 3: -3.0, 4: 2.0}
    n = 100_000
    sums = dict.fromkeys(truth, 0.0)
    sqs = dict.fromkeys(truth, 0.0)
    for s in range(n):
        a = BalanceBucket.from_entries([(1, -10.0), (2, 5.0)], d=2)
        b = BalanceBucket.from_entries([(3, -3.0), (4, 2.0)], d=2)
        got = values_by_key(merge_pair_resample(a, b, SplitMix64(s)))
        for k in truth:
            v = got.get(k, 0.0)
            sums[k] += v
            sqs[k] += v * v
    for k, v in truth.items():
        mean = sums[k] / n
        se = np.sqrt(max(sqs[k] / n - mean ** 2, 0.0) / n)
        assert abs(mean - v) <= 4.0 * se + 1e-9, f"key {k}: {mean} vs {v}"

    # (b) squared deviation averaged over 1000 random full pairs: the
    # proportional sampler must not lose to the smallest-pair heuristic
    rs = np.random.default_rng(90)
    rng_r, rng_h = SplitMix64(91), SplitMix64(92)
    d = 4
    total_r = total_h = 0.0
    for _ in range(1000):
        key, buckets = 1, []
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
        total_r += sum((got_r.get(k, 0.0) - v) ** 2 for k, v in orig.items())
        total_h += sum((got_h.get(k, 0.0) - v) ** 2 for k, v in orig.items())
    assert total_r / 1000 <= total_h / 1000

    # (c) after halving a heavily overloaded table, the heuristic's
    # inflated survivors shield heavy keys: its top-100 recall must be
    # at least the resampler's in the mean over ten table seeds
    stream = gen_synthetic(SyntheticSpec(n_items=100_000,
                                         key_universe=1 << 14, seed=3))
    oracle = ExactOracle()
    oracle.apply_stream(stream)
    top_truth = [e.key for e in oracle.topk_query(100)]
    recalls = {ShrinkMode.RESAMPLE: [], ShrinkMode.HEURISTIC: []}
    for mode, runs in recalls.items():
        for seed in range(10):
            sk = Carbonyl4Sketch(SketchParams(w=1024, d=4, seed=seed))
            sk.apply_stream(stream)
            shrink_halve(sk, mode)
            runs.append(compute_recall(
                top_truth, (e.key for e in sk.topk_query(100))))
    assert (np.mean(recalls[ShrinkMode.HEURISTIC])
            >= np.mean(recalls[ShrinkMode.RESAMPLE]))

    # (d) both in-place halvings must beat a halving rebuild on the
    # same instance (best of three runs each, to absorb timer jitter)
    def best_time(op) -> float:
        best = float("inf")
        for _ in range(3):
            sk = Carbonyl4Sketch(SketchParams(w=4096, d=4, seed=0,
                                              shrinkable=True))
            sk.apply_stream(stream)
            t0 = time.perf_counter()
            op(sk)
            best = min(best, time.perf_counter() - t0)
        return best

    t_resample = best_time(lambda sk: shrink_halve(sk, ShrinkMode.RESAMPLE))
    t_heuristic = best_time(lambda sk: shrink_halve(sk,
                                                    ShrinkMode.HEURISTIC))
    t_rebuild = best_time(lambda sk: rebuild(sk, sk.w // 2))
    assert t_resample < t_rebuild
    assert t_heuristic < t_rebuild


def check_structure(sk: Carbonyl4Sketch) -> None:
    """Global uniqueness, two-choice placement, and mass bookkeeping."""
    seen = set()
    total = 0.0
    for i in range(sk.w):
        for e in sk.bucket(i).entries():
            assert e.key not in seen, f"key {e.key} stored twice"
            seen.add(e.key)
            assert i in sk.hash_pair(e.key), f"key {e.key} misplaced"
            total += abs(e.value)
    assert len(seen) == sk.occupied_count()
    assert sk.total_abs_mass() == pytest.approx(total, rel=1e-9)


def test_10_structure_survives_mixed_updates_and_repeated_halving():
    def run_once() -> str:
        sk = Carbonyl4Sketch(SketchParams(w=256, d=4, seed=123,
                                          shrinkable=True))
        rs = np.random.default_rng(321)
        modes = itertools.cycle((ShrinkMode.RESAMPLE, ShrinkMode.HEURISTIC))
        for chunk in range(20):
            kinds = (rs.random(5000) < 0.5).astype(np.uint8)
            keys = rs.integers(0, 1 << 16, 5000).astype(np.uint64)
            values = rs.normal(0.0, 10.0, 5000)
            sk.apply_stream(SimStream(kinds, keys, values))
            check_structure(sk)
            digest = sk.state_digest()
            sample = keys[:64]
            sk.point_query_batch(sample)
            sk.subset_query(sample[:8])
            sk.topk_query(50)
            assert sk.state_digest() == digest  # queries never mutate
            if chunk % 4 == 3 and sk.w >= 8:
                mass = sk.total_abs_mass()
                shrink_halve(sk, next(modes))
                assert sk.total_abs_mass() == pytest.approx(mass, rel=1e-9)
                check_structure(sk)
        assert sk.w == 8  # five halvings from 256
        return sk.state_digest()

    first = run_once()
    assert run_once() == first  # same seeds, same final table
