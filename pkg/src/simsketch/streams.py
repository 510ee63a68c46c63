"""Workload containers, synthetic generation, and trace file IO.

A stream is a sequence of (kind, key, value) records; kind 0 overwrites the
key's tracked value and kind 1 adds to it. Traces serialize one record per
CSV row as ``op,key,value`` with op in {set, inc}; timestamped traces hold
``key,timestamp_ns,size`` rows and convert to update streams through a
per-key inactivity-gap rule. Paths ending in ``.gz`` are compressed
transparently in both directions.
"""
from __future__ import annotations

import csv
import gzip
import math
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import numpy as np

from .core import SimUpdate, UpdateKind


class TraceParseError(ValueError):
    """Malformed trace row; message carries the 1-based line number."""

    def __init__(self, path, line_no: int, message: str) -> None:
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = str(path)
        self.line_no = line_no


class SimStream:
    """Columnar update stream: kind, key, and value arrays of equal length."""

    __slots__ = ("kinds", "keys", "values")

    def __init__(self, kinds, keys, values) -> None:
        self.kinds = np.ascontiguousarray(kinds, dtype=np.uint8)
        self.keys = np.ascontiguousarray(keys, dtype=np.uint64)
        self.values = np.ascontiguousarray(values, dtype=np.float64)
        n = self.kinds.shape[0]
        if self.kinds.ndim != 1 or self.keys.shape != (n,) \
                or self.values.shape != (n,):
            raise ValueError("stream columns must be equal-length 1-D arrays")
        if n and self.kinds.max() > 1:
            raise ValueError("stream kinds must be 0 (set) or 1 (inc)")
        if not np.isfinite(self.values).all():
            raise ValueError("stream values must be finite")

    @classmethod
    def from_updates(cls, updates: Iterable[SimUpdate]) -> "SimStream":
        ups = list(updates)
        return cls(np.fromiter((int(u.kind) for u in ups), np.uint8, len(ups)),
                   np.fromiter((u.key for u in ups), np.uint64, len(ups)),
                   np.fromiter((u.value for u in ups), np.float64, len(ups)))

    def __len__(self) -> int:
        return self.kinds.shape[0]

    def __getitem__(self, i: int) -> SimUpdate:
        return SimUpdate(UpdateKind(int(self.kinds[i])), int(self.keys[i]),
                         float(self.values[i]))

    def __iter__(self) -> Iterator[SimUpdate]:
        for i in range(len(self)):
            yield self[i]

    def distinct_key_count(self) -> int:
        return int(np.unique(self.keys).size)

    def __repr__(self) -> str:
        return f"SimStream(n={len(self)}, distinct={self.distinct_key_count()})"


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for a synthetic workload.

    Keys are Zipf-distributed ranks over a finite universe (rank 0 is the
    heaviest). Each record is an overwrite with probability ``set_ratio``,
    drawing its value from Exponential(``set_exp_mean``); otherwise it is an
    increment drawing from Normal(``inc_normal_mean``, ``inc_normal_sd``).
    """

    n_items: int
    key_universe: int = 1 << 20
    zipf_alpha: float = 0.9
    set_ratio: float = 0.5
    set_exp_mean: float = 10.0
    inc_normal_mean: float = 0.0
    inc_normal_sd: float = 10.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_items < 0:
            raise ValueError("n_items must be >= 0")
        if self.key_universe < 1:
            raise ValueError("key_universe must be >= 1")
        if self.zipf_alpha < 0.0 or not math.isfinite(self.zipf_alpha):
            raise ValueError("zipf_alpha must be finite and >= 0")
        if not (0.0 <= self.set_ratio <= 1.0):
            raise ValueError("set_ratio must lie in [0, 1]")
        if self.set_exp_mean <= 0.0:
            raise ValueError("set_exp_mean must be > 0")
        if self.inc_normal_sd < 0.0:
            raise ValueError("inc_normal_sd must be >= 0")


def gen_synthetic(spec: SyntheticSpec) -> SimStream:
    """Deterministically generate the workload described by ``spec``."""
    rng = np.random.default_rng(spec.seed)
    ranks = np.arange(1, spec.key_universe + 1, dtype=np.float64)
    cum = np.cumsum(ranks ** -spec.zipf_alpha)
    cum /= cum[-1]
    keys = np.searchsorted(cum, rng.random(spec.n_items),
                           side="right").astype(np.uint64)
    kinds = (rng.random(spec.n_items) >= spec.set_ratio).astype(np.uint8)
    set_vals = rng.exponential(spec.set_exp_mean, spec.n_items)
    inc_vals = rng.normal(spec.inc_normal_mean, spec.inc_normal_sd,
                          spec.n_items)
    return SimStream(kinds, keys, np.where(kinds == 0, set_vals, inc_vals))


@dataclass(frozen=True)
class TimestampedRecord:
    """One sized event at a point in time, before update-kind derivation."""

    key: int
    timestamp_ns: int
    size: float


def derive_sim(records: Iterable[TimestampedRecord], gap_ns: int) -> SimStream:
    """Turn timestamped sized events into set/inc updates.

    A record whose key was idle for more than ``gap_ns`` (or never seen)
    starts a fresh burst and becomes an overwrite of its size; records
    inside a burst add their size. Records must be sorted by timestamp.
    """
    if gap_ns < 0:
        raise ValueError("gap_ns must be >= 0")
    kinds: list[int] = []
    keys: list[int] = []
    values: list[float] = []
    last_seen: dict[int, int] = {}
    prev_ts: int | None = None
    for i, rec in enumerate(records):
        if prev_ts is not None and rec.timestamp_ns < prev_ts:
            raise ValueError(
                f"record {i} timestamp {rec.timestamp_ns} precedes "
                f"predecessor {prev_ts}; records must be time-sorted")
        prev_ts = rec.timestamp_ns
        last = last_seen.get(rec.key)
        fresh = last is None or rec.timestamp_ns - last > gap_ns
        kinds.append(int(UpdateKind.SET if fresh else UpdateKind.INC))
        keys.append(rec.key)
        values.append(rec.size)
        last_seen[rec.key] = rec.timestamp_ns
    return SimStream(np.array(kinds, np.uint8), np.array(keys, np.uint64),
                     np.array(values, np.float64))


def _open_text(path, mode: str):
    path = str(path)
    if path.endswith(".gz"):
        return gzip.open(path, mode + "t", newline="")
    return open(path, mode, newline="")


_OP_NAMES = {int(UpdateKind.SET): "set", int(UpdateKind.INC): "inc"}
_OP_CODES = {"set": int(UpdateKind.SET), "inc": int(UpdateKind.INC)}


def write_trace(stream: SimStream, path) -> None:
    """Serialize a stream as headerless ``op,key,value`` CSV rows."""
    with _open_text(path, "w") as fh:
        writer = csv.writer(fh)
        for kind, key, value in zip(stream.kinds.tolist(),
                                    stream.keys.tolist(),
                                    stream.values.tolist()):
            writer.writerow((_OP_NAMES[kind], key, repr(value)))


def read_trace(path) -> SimStream:
    """Parse an ``op,key,value`` trace; raises TraceParseError with the
    offending line number on malformed rows."""
    kinds: list[int] = []
    keys: list[int] = []
    values: list[float] = []
    with _open_text(path, "r") as fh:
        for line_no, row in enumerate(csv.reader(fh), 1):
            if not row:
                continue
            if len(row) != 3:
                raise TraceParseError(path, line_no,
                                      f"expected 3 fields, got {len(row)}")
            op, key_s, val_s = row
            code = _OP_CODES.get(op.strip().lower())
            if code is None:
                raise TraceParseError(path, line_no,
                                      f"unknown op {op!r} (want set or inc)")
            try:
                key = int(key_s)
            except ValueError:
                raise TraceParseError(path, line_no,
                                      f"bad key {key_s!r}") from None
            if not (0 <= key < 1 << 64):
                raise TraceParseError(path, line_no,
                                      f"key {key} outside [0, 2**64)")
            try:
                value = float(val_s)
            except ValueError:
                raise TraceParseError(path, line_no,
                                      f"bad value {val_s!r}") from None
            if not math.isfinite(value):
                raise TraceParseError(path, line_no,
                                      f"non-finite value {val_s!r}")
            kinds.append(code)
            keys.append(key)
            values.append(value)
    return SimStream(np.array(kinds, np.uint8), np.array(keys, np.uint64),
                     np.array(values, np.float64))


def write_timestamped_trace(records: Sequence[TimestampedRecord], path) -> None:
    """Serialize timestamped records as ``key,timestamp_ns,size`` CSV rows."""
    with _open_text(path, "w") as fh:
        writer = csv.writer(fh)
        for rec in records:
            writer.writerow((rec.key, rec.timestamp_ns, repr(rec.size)))


def read_timestamped_trace(path) -> list[TimestampedRecord]:
    """Parse ``key,timestamp_ns,size`` rows into timestamped records."""
    out: list[TimestampedRecord] = []
    with _open_text(path, "r") as fh:
        for line_no, row in enumerate(csv.reader(fh), 1):
            if not row:
                continue
            if len(row) != 3:
                raise TraceParseError(path, line_no,
                                      f"expected 3 fields, got {len(row)}")
            key_s, ts_s, size_s = row
            try:
                key = int(key_s)
                ts = int(ts_s)
                size = float(size_s)
            except ValueError:
                raise TraceParseError(path, line_no,
                                      f"bad row {row!r}") from None
            if not (0 <= key < 1 << 64):
                raise TraceParseError(path, line_no,
                                      f"key {key} outside [0, 2**64)")
            if not math.isfinite(size):
                raise TraceParseError(path, line_no,
                                      f"non-finite size {size_s!r}")
            out.append(TimestampedRecord(key, ts, size))
    return out
