"""Reference structures the sketch is benchmarked against.

All three expose the same surface as the sketch where it makes sense
(apply, apply_stream, point_query, point_query_batch, subset_query,
topk_query, memory_bytes), so experiment harnesses can treat them
uniformly. The oracle is exact and unbounded; the cuckoo table is exact
until it runs out of room and then drops displaced entries; the
competitive-coalescing array keeps a bounded footprint by letting absent
keys gamble against the lightest hashed cell.
"""
from __future__ import annotations

from typing import Iterable

import numpy as np

from . import _kernels as K
from .core import (Entry, SimUpdate, SplitMix64, UpdateKind, _check_key,
                   _check_value, _stream_arrays, derive_salts, topk_entries)

_MASK64 = (1 << 64) - 1


class ExactOracle:
    """Plain hash-map ground truth with unbounded memory."""

    __slots__ = ("_map", "_l1")

    def __init__(self) -> None:
        self._map: dict[int, float] = {}
        self._l1 = 0.0

    @property
    def name(self) -> str:
        return "oracle"

    def set(self, key: int, value: float) -> None:
        self._map[_check_key(key)] = _check_value(value)
        self._l1 += abs(value)

    def inc(self, key: int, value: float) -> None:
        key = _check_key(key)
        self._map[key] = self._map.get(key, 0.0) + _check_value(value)
        self._l1 += abs(value)

    def apply(self, update: SimUpdate) -> None:
        if update.kind == UpdateKind.INC:
            self.inc(update.key, update.value)
        else:
            self.set(update.key, update.value)

    def apply_stream(self, stream) -> None:
        kinds, keys, values = _stream_arrays(stream)
        table = self._map
        inc = int(UpdateKind.INC)
        for kind, key, value in zip(kinds.tolist(), keys.tolist(),
                                    values.tolist()):
            if kind == inc:
                table[key] = table.get(key, 0.0) + value
            else:
                table[key] = value
        self._l1 += float(np.abs(values).sum())

    def point_query(self, key: int) -> float:
        return self._map.get(_check_key(key), 0.0)

    def point_query_batch(self, keys) -> np.ndarray:
        table = self._map
        qkeys = np.ascontiguousarray(keys, dtype=np.uint64)
        return np.fromiter((table.get(k, 0.0) for k in qkeys.tolist()),
                           np.float64, qkeys.size)

    def subset_query(self, keys) -> float:
        return float(self.point_query_batch(keys).sum())

    def topk_query(self, k: int) -> list[Entry]:
        gk = np.fromiter(self._map.keys(), np.uint64, len(self._map))
        gv = np.fromiter(self._map.values(), np.float64, len(self._map))
        return topk_entries(gk, gv, k)

    @property
    def l1_norm(self) -> float:
        """Total absolute update mass processed so far (never decreases)."""
        return self._l1

    def keys(self) -> list[int]:
        return list(self._map.keys())

    def items(self) -> Iterable[tuple[int, float]]:
        return self._map.items()

    def __len__(self) -> int:
        return len(self._map)

    def __contains__(self, key: int) -> bool:
        return _check_key(key) in self._map

    def memory_bytes(self) -> int:
        return 0  # unbounded by design; excluded from footprint comparisons

    def __repr__(self) -> str:
        return f"ExactOracle(keys={len(self._map)})"


class CuckooTable:
    """Exact-valued two-choice table with random-walk displacement.

    Every stored value is exact. When an insertion's displacement walk
    exceeds the kick limit the carried entry is dropped on the floor and
    counted, which is the failure mode the sketch exists to avoid.
    """

    def __init__(self, w: int, d: int = 4, kick_limit: int = 500,
                 key_bytes: int = 4, value_bytes: int = 4,
                 seed: int = 0) -> None:
        if w < 2 or d < 1:
            raise ValueError(f"need w >= 2 and d >= 1, got w={w} d={d}")
        if kick_limit < 0:
            raise ValueError("kick_limit must be >= 0")
        self.w = w
        self.d = d
        self.kick_limit = kick_limit
        self.key_bytes = key_bytes
        self.value_bytes = value_bytes
        self.seed = seed
        self._keys = np.zeros((w, d), dtype=np.uint64)
        self._vals = np.zeros((w, d), dtype=np.float64)
        self._occ = np.zeros((w, d), dtype=np.bool_)
        self.rng = SplitMix64(seed)
        self._salt_a, self._salt_b = derive_salts(seed)
        self._dropped = 0

    @classmethod
    def from_memory(cls, memory_bytes: int, *, d: int = 4,
                    key_bytes: int = 4, value_bytes: int = 4,
                    **kwargs) -> "CuckooTable":
        w = int(memory_bytes) // (d * (key_bytes + value_bytes))
        if w < 2:
            raise ValueError(f"memory budget {memory_bytes} B is below two "
                             f"{d}-slot buckets")
        return cls(w, d=d, key_bytes=key_bytes, value_bytes=value_bytes,
                   **kwargs)

    @property
    def name(self) -> str:
        return "cuckoo"

    @property
    def dropped(self) -> int:
        return self._dropped

    def memory_bytes(self) -> int:
        return self.w * self.d * (self.key_bytes + self.value_bytes)

    def set(self, key: int, value: float) -> None:
        self._apply_kind(K.KIND_SET, key, value)

    def inc(self, key: int, value: float) -> None:
        self._apply_kind(K.KIND_INC, key, value)

    def apply(self, update: SimUpdate) -> None:
        self._apply_kind(int(update.kind), update.key, update.value)

    def _apply_kind(self, kind: int, key: int, value: float) -> None:
        self._dropped += int(K._cuckoo_apply_one(
            self._keys, self._vals, self._occ, self._salt_a, self._salt_b,
            int(self.kick_limit), np.uint8(kind),
            np.uint64(_check_key(key)), _check_value(value), self.rng.state))

    def apply_stream(self, stream) -> None:
        kinds, keys, values = _stream_arrays(stream)
        self._dropped += int(K._cuckoo_apply_batch(
            self._keys, self._vals, self._occ, self._salt_a, self._salt_b,
            int(self.kick_limit), kinds, keys, values, self.rng.state))

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

    def topk_query(self, k: int) -> list[Entry]:
        return topk_entries(self._keys[self._occ], self._vals[self._occ], k)

    def occupied_count(self) -> int:
        return int(self._occ.sum())

    def load_factor(self) -> float:
        return self.occupied_count() / (self.w * self.d)

    def total_abs_mass(self) -> float:
        return float(np.abs(self._vals[self._occ]).sum())

    def __repr__(self) -> str:
        return (f"CuckooTable(w={self.w}, d={self.d}, "
                f"occupied={self.occupied_count()}, dropped={self._dropped})")


class CocoStar:
    """Competitive-coalescing array: d rows, one hashed cell per row.

    Stored keys update exactly. An absent key first takes any empty hashed
    cell; once all d candidates are taken it coalesces with the
    lightest-valued one (ties to the lowest row), winning survival with
    probability proportional to magnitude. There is no displacement walk,
    which is the structural difference the sketch's walk exists to beat.
    """

    def __init__(self, w: int, d: int = 4, key_bytes: int = 4,
                 value_bytes: int = 4, seed: int = 0) -> None:
        if w < 1 or d < 1:
            raise ValueError(f"need w >= 1 and d >= 1, got w={w} d={d}")
        self.w = w
        self.d = d
        self.key_bytes = key_bytes
        self.value_bytes = value_bytes
        self.seed = seed
        self._keys = np.zeros((d, w), dtype=np.uint64)
        self._vals = np.zeros((d, w), dtype=np.float64)
        self._occ = np.zeros((d, w), dtype=np.bool_)
        self.rng = SplitMix64(seed)
        base = int(K.ROW_SALT_BASE)
        golden = 0x9E3779B97F4A7C15
        self._salts = np.array(
            [int(K.mix64(np.uint64((seed ^ (base + r * golden)) & _MASK64)))
             for r in range(d)], dtype=np.uint64)

    @classmethod
    def from_memory(cls, memory_bytes: int, *, d: int = 4,
                    key_bytes: int = 4, value_bytes: int = 4,
                    **kwargs) -> "CocoStar":
        w = int(memory_bytes) // (d * (key_bytes + value_bytes))
        if w < 1:
            raise ValueError(f"memory budget {memory_bytes} B is below one "
                             f"{d}-row column")
        return cls(w, d=d, key_bytes=key_bytes, value_bytes=value_bytes,
                   **kwargs)

    @property
    def name(self) -> str:
        return "coco"

    def memory_bytes(self) -> int:
        return self.w * self.d * (self.key_bytes + self.value_bytes)

    def set(self, key: int, value: float) -> None:
        self._apply_kind(K.KIND_SET, key, value)

    def inc(self, key: int, value: float) -> None:
        self._apply_kind(K.KIND_INC, key, value)

    def apply(self, update: SimUpdate) -> None:
        self._apply_kind(int(update.kind), update.key, update.value)

    def _apply_kind(self, kind: int, key: int, value: float) -> None:
        K._coco_apply_one(self._keys, self._vals, self._occ, self._salts,
                          np.uint8(kind), np.uint64(_check_key(key)),
                          _check_value(value), self.rng.state)

    def apply_stream(self, stream) -> None:
        kinds, keys, values = _stream_arrays(stream)
        K._coco_apply_batch(self._keys, self._vals, self._occ, self._salts,
                            kinds, keys, values, self.rng.state)

    def point_query(self, key: int) -> float:
        return float(K._coco_point_query(self._keys, self._vals, self._occ,
                                         self._salts,
                                         np.uint64(_check_key(key))))

    def point_query_batch(self, keys) -> np.ndarray:
        qkeys = np.ascontiguousarray(keys, dtype=np.uint64)
        out = np.empty(qkeys.shape[0], dtype=np.float64)
        K._coco_point_query_batch(self._keys, self._vals, self._occ,
                                  self._salts, qkeys, out)
        return out

    def subset_query(self, keys) -> float:
        return float(self.point_query_batch(keys).sum())

    def topk_query(self, k: int) -> list[Entry]:
        return topk_entries(self._keys[self._occ], self._vals[self._occ], k)

    def occupied_count(self) -> int:
        return int(self._occ.sum())

    def total_abs_mass(self) -> float:
        return float(np.abs(self._vals[self._occ]).sum())

    def __repr__(self) -> str:
        return (f"CocoStar(w={self.w}, d={self.d}, "
                f"occupied={self.occupied_count()})")
