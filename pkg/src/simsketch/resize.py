"""Geometry changes: full rebuilds and in-place halving.

Rebuilding re-inserts every stored entry into a fresh table. In-place
halving folds bucket k + w/2 into bucket k, which stays consistent with
two-choice hashing because any index mod w reduces to the same index mod
w/2. Two pair-downsizing flavors exist: an inclusion-probability resampler
that keeps per-key expectations exact with provably minimal total variance,
and a greedy smallest-pair coalescer that biases survival toward heavy
entries (better top-k retention, more variance).
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import _kernels as K
from .core import BalanceBucket, Carbonyl4Sketch, SketchParams, SplitMix64


class ShrinkMode(Enum):
    REBUILD = "rebuild"
    RESAMPLE = "resample"
    HEURISTIC = "heuristic"


@dataclass(frozen=True)
class RebuildPolicy:
    """Insertion discipline during a rebuild.

    When the bucket-count ratio old_w / new_w falls below ``alpha`` the
    table is growing enough that every entry should find a slot, so the
    displacement walk runs exhaustively (no early stop) up to ``kick_cap``
    buckets and coalesces only when no empty slot is reachable. At or above
    ``alpha`` the normal early-stopping walk applies with probability
    ``p_eps_rebuild``.
    """

    alpha: float = 0.94
    p_eps_rebuild: float = 0.1
    kick_cap: int = 500

    def __post_init__(self) -> None:
        if not (0.0 < self.alpha < 1.0):
            raise ValueError("alpha must lie strictly between 0 and 1")
        if not (0.0 <= self.p_eps_rebuild <= 1.0):
            raise ValueError("p_eps_rebuild must lie in [0, 1]")
        if self.kick_cap < 0:
            raise ValueError("kick_cap must be >= 0")


def rebuild(sketch: Carbonyl4Sketch, new_w: int,
            policy: RebuildPolicy = RebuildPolicy(),
            seed: int | None = None) -> Carbonyl4Sketch:
    """Re-insert every entry of ``sketch`` into a fresh ``new_w``-bucket table.

    Entries are re-inserted bucket-major as overwrites, so per-key values
    are preserved exactly whenever the walk finds room. The new table draws
    its hash salts and coins from ``seed``; by default one draw from the
    source generator picks it (advancing the source).
    """
    if seed is None:
        seed = sketch.rng.next_u64()
    params = sketch.params.replace(w=int(new_w), seed=seed)
    target = Carbonyl4Sketch(params)
    gk = sketch._keys[sketch._occ]
    gv = sketch._vals[sketch._occ]
    stop = 0.0 if sketch.w / new_w < policy.alpha else policy.p_eps_rebuild
    stats = np.zeros(2, dtype=np.int64)
    K._apply_batch(target._keys, target._vals, target._occ,
                   target._salt_a, target._salt_b, float(stop),
                   int(policy.kick_cap), np.zeros(gk.size, np.uint8),
                   gk, gv, target.rng.state, stats)
    return target


def _gathered(a: BalanceBucket, b: BalanceBucket):
    if a.d != b.d:
        raise ValueError(f"bucket widths differ: {a.d} vs {b.d}")
    gk = np.concatenate([a._keys[0][a._occ[0]], b._keys[0][b._occ[0]]])
    gv = np.concatenate([a._vals[0][a._occ[0]], b._vals[0][b._occ[0]]])
    return gk, gv


def _bucket_from(ok: np.ndarray, ov: np.ndarray, n: int,
                 d: int) -> BalanceBucket:
    out = BalanceBucket(d)
    for s in range(n):
        out.set_slot(s, int(ok[s]), float(ov[s]))
    return out


def merge_pair_resample(a: BalanceBucket, b: BalanceBucket,
                        rng: SplitMix64) -> BalanceBucket:
    """Fold two buckets into one, keeping every key's expectation exact.

    Entries large enough to be certain survivors keep their exact values;
    the rest are thinned by one systematic proportional-to-size draw, each
    survivor storing an equal share of the residual mass under its own
    sign. With at most d occupied entries overall the copy is lossless and
    no randomness is consumed.
    """
    gk, gv = _gathered(a, b)
    d = a.d
    ok = np.empty(d, np.uint64)
    ov = np.empty(d, np.float64)
    n = K._resample_entries(gk, gv, gk.size, d, rng.state, ok, ov)
    return _bucket_from(ok, ov, int(n), d)


def merge_pair_heuristic(a: BalanceBucket, b: BalanceBucket,
                         rng: SplitMix64) -> BalanceBucket:
    """Fold two buckets into one by repeatedly coalescing the two smallest
    magnitudes, performing exactly max(0, occupied - d) pairwise draws.
    Heavy entries almost always survive with exact values, at higher total
    variance than resampling."""
    gk, gv = _gathered(a, b)
    d = a.d
    ok = np.empty(d, np.uint64)
    ov = np.empty(d, np.float64)
    n = K._heuristic_entries(gk, gv, gk.size, d, rng.state, ok, ov)
    return _bucket_from(ok, ov, int(n), d)


_HALVE_MODES = {
    ShrinkMode.RESAMPLE: K.MODE_RESAMPLE,
    ShrinkMode.HEURISTIC: K.MODE_HEURISTIC,
}


def shrink_halve(sketch: Carbonyl4Sketch, mode: ShrinkMode,
                 rng: SplitMix64 | None = None) -> None:
    """Halve the bucket count in place by folding bucket k + w/2 into
    bucket k for every k below the midpoint.

    Supports the two in-place pair-downsizing modes; a halving rebuild is
    spelled ``rebuild(sketch, sketch.w // 2)``. Coins come from the sketch
    generator unless ``rng`` is given.
    """
    kernel_mode = _HALVE_MODES.get(mode)
    if kernel_mode is None:
        raise ValueError(
            f"in-place halving supports {[m.value for m in _HALVE_MODES]}, "
            f"got {mode!r}")
    w = sketch.w
    if w % 2:
        raise ValueError(f"cannot halve an odd bucket count w={w}")
    if w // 2 < 2:
        raise ValueError(f"halving w={w} would drop below two buckets")
    if rng is None:
        rng = sketch.rng
    K._halve(sketch._keys, sketch._vals, sketch._occ, kernel_mode, rng.state)
    w2 = w // 2
    sketch._replace_table(sketch.params.replace(w=w2), sketch._keys[:w2],
                          sketch._vals[:w2], sketch._occ[:w2])
