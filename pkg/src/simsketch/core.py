"""Core data structures: keyed entries, balance buckets, and the sketch.

The sketch tracks one real value per key under two update kinds: overwrite
(``:=``) and additive (``+=``). Point queries are unbiased for every key, at
the price of randomized mass coalescing when space runs out. All coin flips
come from a single splitmix64 generator owned by the structure, so runs are
reproducible bit-for-bit from the seed.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, replace as _dc_replace
from enum import Enum, IntEnum
from typing import Iterable, Sequence

import numpy as np

from . import _kernels as K

_MASK64 = (1 << 64) - 1


class UpdateKind(IntEnum):
    """Update operator: SET overwrites the tracked value, INC adds to it."""

    SET = K.KIND_SET
    INC = K.KIND_INC


@dataclass(frozen=True)
class SimUpdate:
    """One stream record: apply ``kind`` with ``value`` to ``key``."""

    kind: UpdateKind
    key: int
    value: float

    @classmethod
    def set(cls, key: int, value: float) -> "SimUpdate":
        return cls(UpdateKind.SET, key, value)

    @classmethod
    def inc(cls, key: int, value: float) -> "SimUpdate":
        return cls(UpdateKind.INC, key, value)


@dataclass(frozen=True)
class Entry:
    """A stored (key, value) pair. Empty slots surface as None, not Entry."""

    key: int
    value: float


class MergeAction(Enum):
    FILL_EMPTY = "fill_empty"
    MERGE_INCOMING_WITH_SMALLEST = "merge_incoming_with_smallest"
    MERGE_TWO_SMALLEST = "merge_two_smallest"


@dataclass(frozen=True)
class MergePlan:
    """Cheapest way to make room for an incoming magnitude in one bucket.

    ``slot_a`` is the acted-on slot: the empty slot for FILL_EMPTY, the
    smallest-magnitude slot for MERGE_INCOMING_WITH_SMALLEST, and the
    second-smallest slot (which receives the coalesced pair) for
    MERGE_TWO_SMALLEST, where ``slot_b`` is the smallest slot that the
    incoming entry would then occupy. ``cost`` is the variance added if the
    plan executes: twice the product of the two coalesced magnitudes.
    """

    action: MergeAction
    slot_a: int
    slot_b: int | None
    cost: float


@dataclass(frozen=True)
class SearchOutcome:
    """Result of a read-only displacement walk.

    ``path`` holds one (bucket, slot) pair per visited bucket: the slot the
    walk would displace there. ``opt_prefix_len`` is the 1-based path index
    of the cheapest bucket found; executing the walk replays exactly that
    prefix. ``steps_taken`` counts moves beyond the start bucket.
    """

    path: tuple[tuple[int, int], ...]
    opt_prefix_len: int
    min_cost: float
    steps_taken: int


@dataclass(frozen=True)
class SketchParams:
    """Geometry and policy knobs for the sketch.

    ``w`` buckets of ``d`` slots each; a displacement walk visits at most
    ``max_search_steps`` buckets beyond its start and stops early at a
    non-improving bucket with probability ``stop_prob``. ``key_bytes`` and
    ``value_bytes`` enter only the memory accounting used to size
    equal-footprint comparisons. ``shrinkable`` demands a power-of-two ``w``
    so repeated halving stays well-defined.
    """

    w: int
    d: int = 4
    max_search_steps: int = 10
    stop_prob: float = 0.1
    key_bytes: int = 4
    value_bytes: int = 4
    seed: int = 0
    shrinkable: bool = False

    def __post_init__(self) -> None:
        if not isinstance(self.w, int) or self.w < 2:
            raise ValueError(f"w must be an int >= 2, got {self.w!r}")
        if not isinstance(self.d, int) or self.d < 2:
            raise ValueError(f"d must be an int >= 2, got {self.d!r}")
        if not isinstance(self.max_search_steps, int) or self.max_search_steps < 0:
            raise ValueError("max_search_steps must be an int >= 0")
        if not (0.0 <= float(self.stop_prob) <= 1.0):
            raise ValueError("stop_prob must lie in [0, 1]")
        if self.key_bytes < 1 or self.value_bytes < 1:
            raise ValueError("key_bytes and value_bytes must be positive")
        if not isinstance(self.seed, int) or not (0 <= self.seed < 1 << 64):
            raise ValueError("seed must be an int in [0, 2**64)")
        if self.shrinkable and self.w & (self.w - 1):
            raise ValueError("shrinkable sketches need a power-of-two w")

    @property
    def entry_bytes(self) -> int:
        return self.key_bytes + self.value_bytes

    def memory_bytes(self) -> int:
        return self.w * self.d * self.entry_bytes

    @classmethod
    def from_memory(cls, memory_bytes: int, *, d: int = 4,
                    key_bytes: int = 4, value_bytes: int = 4,
                    shrinkable: bool = False, **kwargs) -> "SketchParams":
        """Largest geometry fitting the budget; power-of-two w if shrinkable."""
        w = int(memory_bytes) // (d * (key_bytes + value_bytes))
        if shrinkable and w >= 2:
            w = 1 << (w.bit_length() - 1)
        if w < 2:
            raise ValueError(
                f"memory budget {memory_bytes} B holds fewer than two "
                f"{d}-slot buckets at {key_bytes + value_bytes} B per entry")
        return cls(w=w, d=d, key_bytes=key_bytes, value_bytes=value_bytes,
                   shrinkable=shrinkable, **kwargs)

    def replace(self, **kwargs) -> "SketchParams":
        return _dc_replace(self, **kwargs)


class SplitMix64:
    """Counter-based 64-bit generator with full avalanche per draw.

    The state is a one-element uint64 array shared directly with the
    compiled kernels, so draws made from Python and draws made inside batch
    loops interleave into one deterministic sequence.
    """

    __slots__ = ("_state",)

    def __init__(self, seed: int) -> None:
        self._state = np.array([seed & _MASK64], dtype=np.uint64)

    @property
    def state(self) -> np.ndarray:
        return self._state

    def next_u64(self) -> int:
        return int(K.rng_next(self._state))

    def uniform(self) -> float:
        return float(K.rng_uniform(self._state))

    def clone(self) -> "SplitMix64":
        other = SplitMix64(0)
        other._state[0] = self._state[0]
        return other

    def __repr__(self) -> str:
        return f"SplitMix64(state={int(self._state[0]):#018x})"


def _check_key(key: int) -> int:
    if not isinstance(key, (int, np.integer)) or not (0 <= key < 1 << 64):
        raise ValueError(f"key must be an int in [0, 2**64), got {key!r}")
    return int(key)


def _check_value(value: float) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise ValueError(f"value must be finite, got {value!r}")
    return value


def merge_pm(a: Entry, b: Entry, rng: SplitMix64) -> Entry:
    """Coalesce two entries into one, conserving total magnitude.

    The survivor is drawn with probability proportional to its magnitude and
    carries the combined magnitude under its own sign, which makes the
    attributed value of each input key exactly unbiased. A zero-mass pair
    collapses to ``a``'s key deterministically without consuming a draw.
    """
    _check_key(a.key)
    _check_key(b.key)
    _check_value(a.value)
    _check_value(b.value)
    k, v = K._merge_pm(np.uint64(a.key), float(a.value),
                       np.uint64(b.key), float(b.value), rng.state)
    return Entry(int(k), float(v))


def derive_salts(seed: int) -> tuple[np.uint64, np.uint64]:
    """The two keyed-hash salts a structure derives from its seed.

    Returned as numpy scalars because kernel arguments must stay typed
    uint64; a plain Python int above 2**63 would be rejected.
    """
    sa, sb = K.derive_salts(np.uint64(seed))
    return np.uint64(sa), np.uint64(sb)


def hash_pair(key: int, w: int, seed: int) -> tuple[int, int]:
    """The two candidate buckets for ``key`` in a table of width ``w``."""
    _check_key(key)
    sa, sb = derive_salts(seed)
    return (int(K.hash_slot(np.uint64(key), sa, w)),
            int(K.hash_slot(np.uint64(key), sb, w)))


def topk_entries(gk: np.ndarray, gv: np.ndarray, k: int) -> list[Entry]:
    """The min(k, len) entries of largest |value|; magnitude ties break by
    ascending key. Shared by every structure so rankings are comparable."""
    if k < 0:
        raise ValueError(f"k must be >= 0, got {k}")
    if k == 0:
        return []
    order = np.lexsort((gk, -np.abs(gv)))[:k]
    return [Entry(int(gk[i]), float(gv[i])) for i in order]


_PLAN_ACTIONS = {
    K.PLAN_FILL: MergeAction.FILL_EMPTY,
    K.PLAN_MERGE_INCOMING: MergeAction.MERGE_INCOMING_WITH_SMALLEST,
    K.PLAN_MERGE_TWO: MergeAction.MERGE_TWO_SMALLEST,
}


class BalanceBucket:
    """Fixed-capacity slot array with unbiased displacement semantics.

    Overwrites of stored keys are exact. An absent key fills an empty slot
    when one exists; in a full bucket it either coalesces with the
    smallest-magnitude entry (small incoming) or displaces it after the two
    smallest entries coalesce (large incoming). Among equal magnitudes the
    higher slot index counts as smaller.
    """

    __slots__ = ("_keys", "_vals", "_occ")

    def __init__(self, d: int = 4) -> None:
        if d < 2:
            raise ValueError(f"bucket needs d >= 2 slots, got {d}")
        self._keys = np.zeros((1, d), dtype=np.uint64)
        self._vals = np.zeros((1, d), dtype=np.float64)
        self._occ = np.zeros((1, d), dtype=np.bool_)

    @classmethod
    def _from_views(cls, keys: np.ndarray, vals: np.ndarray,
                    occ: np.ndarray) -> "BalanceBucket":
        bucket = object.__new__(cls)
        bucket._keys = keys
        bucket._vals = vals
        bucket._occ = occ
        return bucket

    @classmethod
    def from_entries(cls, entries: Sequence[Entry | tuple[int, float]],
                     d: int | None = None) -> "BalanceBucket":
        pairs = [(e.key, e.value) if isinstance(e, Entry) else e
                 for e in entries]
        if d is None:
            d = max(len(pairs), 2)
        if len(pairs) > d:
            raise ValueError(f"{len(pairs)} entries exceed d={d} slots")
        if len({k for k, _ in pairs}) != len(pairs):
            raise ValueError("bucket keys must be unique")
        bucket = cls(d)
        for s, (k, v) in enumerate(pairs):
            bucket.set_slot(s, k, v)
        return bucket

    @property
    def d(self) -> int:
        return self._keys.shape[1]

    def slot(self, s: int) -> Entry | None:
        if self._occ[0, s]:
            return Entry(int(self._keys[0, s]), float(self._vals[0, s]))
        return None

    def entries(self) -> list[Entry]:
        return [e for s in range(self.d) if (e := self.slot(s)) is not None]

    def occupied_count(self) -> int:
        return int(self._occ.sum())

    def is_full(self) -> bool:
        return bool(self._occ.all())

    def set_slot(self, s: int, key: int, value: float) -> None:
        """Plant an entry directly (state construction, not stream logic)."""
        self._keys[0, s] = _check_key(key)
        self._vals[0, s] = _check_value(value)
        self._occ[0, s] = True

    def clear_slot(self, s: int) -> None:
        self._keys[0, s] = 0
        self._vals[0, s] = 0.0
        self._occ[0, s] = False

    def contains(self, key: int) -> bool:
        return K._find_key(self._keys, self._occ, 0, np.uint64(_check_key(key))) >= 0

    def point_query(self, key: int) -> float:
        s = K._find_key(self._keys, self._occ, 0, np.uint64(_check_key(key)))
        return float(self._vals[0, s]) if s >= 0 else 0.0

    def total_abs_mass(self) -> float:
        return float(np.abs(self._vals[0][self._occ[0]]).sum())

    def min_merge_plan(self, incoming_abs: float) -> MergePlan:
        """Cheapest room-making action for an incoming |value|."""
        incoming_abs = float(incoming_abs)
        if not math.isfinite(incoming_abs) or incoming_abs < 0.0:
            raise ValueError("incoming magnitude must be finite and >= 0")
        case, sa, sb, cost = K._local_plan(self._vals, self._occ, 0, incoming_abs)
        return MergePlan(_PLAN_ACTIONS[int(case)], int(sa),
                         int(sb) if case == K.PLAN_MERGE_TWO else None,
                         float(cost))

    def set(self, key: int, value: float, rng: SplitMix64) -> None:
        K._bucket_set(self._keys, self._vals, self._occ, 0,
                      np.uint64(_check_key(key)), _check_value(value),
                      rng.state)

    def inc(self, key: int, value: float, rng: SplitMix64) -> None:
        K._bucket_inc(self._keys, self._vals, self._occ, 0,
                      np.uint64(_check_key(key)), _check_value(value),
                      rng.state)

    def apply(self, update: SimUpdate, rng: SplitMix64) -> None:
        if update.kind == UpdateKind.INC:
            self.inc(update.key, update.value, rng)
        else:
            self.set(update.key, update.value, rng)

    def apply_stream(self, stream, rng: SplitMix64) -> None:
        kinds, keys, values = _stream_arrays(stream)
        K._bucket_apply_batch(self._keys, self._vals, self._occ,
                              kinds, keys, values, rng.state)

    def __repr__(self) -> str:
        return f"BalanceBucket(d={self.d}, entries={self.entries()!r})"


def _stream_arrays(stream) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    kinds = np.ascontiguousarray(stream.kinds, dtype=np.uint8)
    keys = np.ascontiguousarray(stream.keys, dtype=np.uint64)
    values = np.ascontiguousarray(stream.values, dtype=np.float64)
    if not (kinds.shape == keys.shape == values.shape) or kinds.ndim != 1:
        raise ValueError("stream columns must be equal-length 1-D arrays")
    if not np.isfinite(values).all():
        raise ValueError("stream values must be finite")
    return kinds, keys, values


class Carbonyl4Sketch:
    """Two-choice table of balance buckets with cascading displacement.

    Each key hashes to two candidate buckets. Updates to stored keys are
    exact; new keys fill empty slots when possible and otherwise trigger a
    read-only walk that looks for the cheapest place to coalesce mass,
    displacing the smallest entry of each bucket along the way. Point,
    subset, and top-k queries never mutate state and draw no randomness.
    """

    def __init__(self, params: SketchParams) -> None:
        self._params = params
        w, d = params.w, params.d
        self._keys = np.zeros((w, d), dtype=np.uint64)
        self._vals = np.zeros((w, d), dtype=np.float64)
        self._occ = np.zeros((w, d), dtype=np.bool_)
        self.rng = SplitMix64(params.seed)
        self._salt_a, self._salt_b = derive_salts(params.seed)
        self._stats = np.zeros(2, dtype=np.int64)
        self._path_b = np.empty(params.max_search_steps + 1, dtype=np.int64)
        self._path_s = np.empty(params.max_search_steps + 1, dtype=np.int64)

    @classmethod
    def from_memory(cls, memory_bytes: int, **kwargs) -> "Carbonyl4Sketch":
        return cls(SketchParams.from_memory(memory_bytes, **kwargs))

    @property
    def params(self) -> SketchParams:
        return self._params

    @property
    def w(self) -> int:
        return self._params.w

    @property
    def d(self) -> int:
        return self._params.d

    @property
    def name(self) -> str:
        return "carbonyl4"

    def memory_bytes(self) -> int:
        return self._params.memory_bytes()

    def hash_pair(self, key: int) -> tuple[int, int]:
        k = np.uint64(_check_key(key))
        return (int(K.hash_slot(k, self._salt_a, self.w)),
                int(K.hash_slot(k, self._salt_b, self.w)))

    def bucket(self, i: int) -> BalanceBucket:
        """Live view of bucket ``i``; mutations write through to the sketch."""
        if not (0 <= i < self.w):
            raise IndexError(f"bucket index {i} out of range [0, {self.w})")
        return BalanceBucket._from_views(self._keys[i:i + 1],
                                         self._vals[i:i + 1],
                                         self._occ[i:i + 1])

    # -- updates ---------------------------------------------------------

    def set(self, key: int, value: float) -> None:
        self._apply_kind(K.KIND_SET, key, value)

    def inc(self, key: int, value: float) -> None:
        self._apply_kind(K.KIND_INC, key, value)

    def apply(self, update: SimUpdate) -> None:
        self._apply_kind(int(update.kind), update.key, update.value)

    def _apply_kind(self, kind: int, key: int, value: float) -> None:
        K._apply_one(self._keys, self._vals, self._occ,
                     self._salt_a, self._salt_b,
                     float(self._params.stop_prob),
                     int(self._params.max_search_steps),
                     np.uint8(kind), np.uint64(_check_key(key)),
                     _check_value(value), self.rng.state,
                     self._path_b, self._path_s, self._stats)

    def apply_stream(self, stream) -> None:
        kinds, keys, values = _stream_arrays(stream)
        K._apply_batch(self._keys, self._vals, self._occ,
                       self._salt_a, self._salt_b,
                       float(self._params.stop_prob),
                       int(self._params.max_search_steps),
                       kinds, keys, values, self.rng.state, self._stats)

    # -- displacement walk, exposed for diagnostics and tests -------------

    def cascade_search(self, key: int, value: float,
                       start_bucket: int) -> SearchOutcome:
        """Plan (without mutating buckets) where an overflowing update lands.

        Requires the overflow precondition: ``key`` absent from both its
        hashed buckets and both of them full, with ``start_bucket`` one of
        the two. Consumes stop coins from the sketch generator.
        """
        key = _check_key(key)
        value = _check_value(value)
        i1, i2 = self.hash_pair(key)
        if start_bucket not in (i1, i2):
            raise ValueError(
                f"start bucket {start_bucket} is not a hashed bucket of "
                f"key {key} (candidates {i1}, {i2})")
        if self.contains(key):
            raise ValueError(f"key {key} is already stored")
        if not (self._occ[i1].all() and self._occ[i2].all()):
            raise ValueError("both hashed buckets must be full to overflow")
        n, opt_len, min_cost, steps = K._cascade_search(
            self._keys, self._vals, self._occ, self._salt_a, self._salt_b,
            start_bucket, abs(value), float(self._params.stop_prob),
            int(self._params.max_search_steps), self.rng.state,
            self._path_b, self._path_s)
        path = tuple((int(self._path_b[i]), int(self._path_s[i]))
                     for i in range(n))
        return SearchOutcome(path, int(opt_len), float(min_cost), int(steps))

    def cascade_kick(self, key: int, value: float,
                     outcome: SearchOutcome) -> None:
        """Execute a planned walk: shift displaced entries one bucket forward
        along the optimal prefix, landing the final entry at the cheapest
        bucket found."""
        key = _check_key(key)
        value = _check_value(value)
        if not (1 <= outcome.opt_prefix_len <= len(outcome.path)):
            raise ValueError("outcome optimal prefix out of range")
        n = len(outcome.path)
        pb = np.fromiter((b for b, _ in outcome.path), np.int64, n)
        ps = np.fromiter((s for _, s in outcome.path), np.int64, n)
        K._cascade_kick(self._keys, self._vals, self._occ, pb, ps,
                        outcome.opt_prefix_len, np.uint64(key), value,
                        self.rng.state)

    # -- queries (pure) ----------------------------------------------------

    def contains(self, key: int) -> bool:
        return bool(K._contains(self._keys, self._occ, self._salt_a,
                                self._salt_b, np.uint64(_check_key(key))))

    def point_query(self, key: int) -> float:
        return float(K._point_query(self._keys, self._vals, self._occ,
                                    self._salt_a, self._salt_b,
                                    np.uint64(_check_key(key))))

    def point_query_batch(self, keys) -> np.ndarray:
        qkeys = np.ascontiguousarray(keys, dtype=np.uint64)
        out = np.empty(qkeys.shape[0], dtype=np.float64)
        K._point_query_batch(self._keys, self._vals, self._occ,
                             self._salt_a, self._salt_b, qkeys, out)
        return out

    def subset_query(self, keys) -> float:
        return float(self.point_query_batch(keys).sum())

    def subset_query_scan(self, keys) -> float:
        """Full-scan variant of subset_query used for cross-validation."""
        qkeys = np.unique(np.ascontiguousarray(keys, dtype=np.uint64))
        stored = self._keys[self._occ]
        vals = self._vals[self._occ]
        return float(vals[np.isin(stored, qkeys)].sum())

    def topk_query(self, k: int) -> list[Entry]:
        """The min(k, occupied) stored entries of largest magnitude,
        magnitude ties broken by ascending key."""
        return topk_entries(self._keys[self._occ], self._vals[self._occ], k)

    # -- inspection --------------------------------------------------------

    def stored_entries(self) -> list[Entry]:
        gk = self._keys[self._occ]
        gv = self._vals[self._occ]
        return [Entry(int(k), float(v)) for k, v in zip(gk.tolist(), gv.tolist())]

    def occupied_count(self) -> int:
        return int(self._occ.sum())

    def load_factor(self) -> float:
        return self.occupied_count() / (self.w * self.d)

    def total_abs_mass(self) -> float:
        return float(np.abs(self._vals[self._occ]).sum())

    @property
    def overflow_count(self) -> int:
        return int(self._stats[1])

    @property
    def search_steps_total(self) -> int:
        return int(self._stats[0])

    def avg_search_steps(self) -> float:
        return self.search_steps_total / self.overflow_count \
            if self.overflow_count else 0.0

    def state_digest(self) -> str:
        """Hash of buckets plus generator state; diagnostics counters are
        excluded."""
        h = hashlib.blake2b(digest_size=16)
        h.update(np.int64([self.w, self.d]).tobytes())
        h.update(self._keys.tobytes())
        h.update(self._vals.tobytes())
        h.update(self._occ.tobytes())
        h.update(self.rng.state.tobytes())
        return h.hexdigest()

    # -- geometry mutation used by the resizing module ---------------------

    def _replace_table(self, params: SketchParams, keys: np.ndarray,
                       vals: np.ndarray, occ: np.ndarray) -> None:
        self._params = params
        self._keys = np.ascontiguousarray(keys)
        self._vals = np.ascontiguousarray(vals)
        self._occ = np.ascontiguousarray(occ)

    def __repr__(self) -> str:
        return (f"Carbonyl4Sketch(w={self.w}, d={self.d}, "
                f"occupied={self.occupied_count()}, "
                f"mass={self.total_abs_mass():.6g})")
