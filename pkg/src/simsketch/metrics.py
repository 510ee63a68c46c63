"""Error metrics, recall, throughput measurement, and report serialization.

Reports are flat mappings with a pinned column order so JSON files and CSV
rows line up across runs and tools. Timing fields (``*_mops``,
``wall_seconds``) are measured wall-clock values and are the only report
fields excluded from the bit-identical determinism contract.
"""
from __future__ import annotations

import csv
import json
import math
import os
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

SCHEMA_VERSION = 1

REPORT_COLUMNS = [
    "schema_version", "sketch", "w", "d", "memory_bytes", "items",
    "distinct_keys", "seed", "trials", "query_plan",
    "are", "are_sd", "aae", "aae_sd", "mse", "mse_sd",
    "recall", "recall_sd", "avg_search_steps", "avg_search_steps_sd",
    "dropped", "dropped_sd", "l1_norm",
    "insert_mops", "insert_mops_sd", "query_mops", "query_mops_sd",
    "wall_seconds",
]

#: report fields allowed to differ between identically-seeded runs
TIMING_COLUMNS = frozenset({"insert_mops", "insert_mops_sd", "query_mops",
                            "query_mops_sd", "wall_seconds"})


def compute_errors(truth, estimates) -> dict[str, float]:
    """Average relative error, average absolute error, and mean squared
    error of ``estimates`` against ``truth``.

    Relative error is undefined at zero truth, so exact-zero truths are
    excluded from ARE only; with no nonzero truth at all ARE reports 0.0.
    """
    t = np.asarray(truth, dtype=np.float64)
    e = np.asarray(estimates, dtype=np.float64)
    if t.shape != e.shape or t.ndim != 1:
        raise ValueError("truth and estimates must be equal-length 1-D")
    if t.size == 0:
        raise ValueError("cannot score an empty query set")
    err = np.abs(e - t)
    nz = t != 0.0
    are = float((err[nz] / np.abs(t[nz])).mean()) if nz.any() else 0.0
    return {"are": are,
            "aae": float(err.mean()),
            "mse": float((err * err).mean())}


def compute_recall(true_keys: Iterable[int], est_keys: Iterable[int]) -> float:
    """Fraction of the true key set recovered by the estimated key set."""
    truth = set(true_keys)
    if not truth:
        raise ValueError("recall needs a nonempty true key set")
    return len(truth & set(est_keys)) / len(truth)


def measure_throughput(op: Callable[[], None], n_ops: int,
                       repeats: int = 1) -> float:
    """Million operations per second of ``op``, best of ``repeats`` runs.

    The callable owns its state; pass a closure that builds fresh state
    inside if re-running must not accumulate.
    """
    if n_ops < 1 or repeats < 1:
        raise ValueError("n_ops and repeats must be >= 1")
    best = math.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        op()
        best = min(best, time.perf_counter() - t0)
    return n_ops / best / 1e6


@dataclass
class MetricsReport:
    """One experiment's scores in the pinned REPORT_COLUMNS order.

    ``recall`` is None for query plans that do not rank keys. ``*_sd``
    fields are sample standard deviations across trials (0.0 for a single
    trial; None where the metric itself is None).
    """

    sketch: str = ""
    w: int = 0
    d: int = 0
    memory_bytes: int = 0
    items: int = 0
    distinct_keys: int = 0
    seed: int = 0
    trials: int = 1
    query_plan: str = "point"
    are: float = 0.0
    are_sd: float = 0.0
    aae: float = 0.0
    aae_sd: float = 0.0
    mse: float = 0.0
    mse_sd: float = 0.0
    recall: float | None = None
    recall_sd: float | None = None
    avg_search_steps: float = 0.0
    avg_search_steps_sd: float = 0.0
    dropped: float = 0.0
    dropped_sd: float = 0.0
    l1_norm: float = 0.0
    insert_mops: float = 0.0
    insert_mops_sd: float = 0.0
    query_mops: float = 0.0
    query_mops_sd: float = 0.0
    wall_seconds: float = 0.0
    schema_version: int = SCHEMA_VERSION

    def to_dict(self) -> dict:
        raw = {c: getattr(self, c) for c in REPORT_COLUMNS}
        return raw

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent)

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json() + "\n")

    def csv_row(self) -> list:
        return ["" if (v := getattr(self, c)) is None else v
                for c in REPORT_COLUMNS]

    @classmethod
    def from_dict(cls, data: dict) -> "MetricsReport":
        known = {c: data[c] for c in REPORT_COLUMNS if c in data}
        return cls(**known)

    def append_csv(self, path) -> None:
        """Append this report as one CSV row, writing the header first when
        the file is new or empty."""
        fresh = not os.path.exists(path) or os.path.getsize(path) == 0
        with open(path, "a", newline="") as fh:
            writer = csv.writer(fh)
            if fresh:
                writer.writerow(REPORT_COLUMNS)
            writer.writerow(self.csv_row())


def mean_sd(values: Sequence[float]) -> tuple[float, float]:
    """Mean and sample standard deviation (0.0 for fewer than two values)."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("need at least one value")
    mean = float(arr.mean())
    sd = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return mean, sd
