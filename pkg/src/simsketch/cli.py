"""Benchmark command line: generate workloads, run sketches against the
exact oracle, shrink tables, and sweep parameter axes.

Every command is deterministic given ``--seed`` in all metric fields;
wall-clock fields (``*_mops``, ``*_seconds``) necessarily vary between
runs. The ``SIMSKETCH_THREADS`` environment variable caps worker processes
for multi-trial runs (default 1, serial). Exit codes: 0 success, 2 for
usage or configuration errors, 1 for I/O and data failures.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace as _dc_replace

import numpy as np

from . import warmup
from .baselines import CocoStar, CuckooTable, ExactOracle
from .core import Carbonyl4Sketch, SketchParams
from .metrics import (REPORT_COLUMNS, SCHEMA_VERSION, MetricsReport,
                      compute_errors, compute_recall, mean_sd)
from .resize import ShrinkMode, rebuild, shrink_halve
from .streams import (SimStream, SyntheticSpec, TraceParseError, derive_sim,
                      gen_synthetic, read_timestamped_trace, read_trace,
                      write_trace)

SKETCH_NAMES = ("carbonyl4", "coco", "cuckoo", "oracle")
DEFAULT_TOPK = 1000


class UsageError(ValueError):
    """Configuration problem that maps to exit code 2."""


@dataclass(frozen=True)
class ExperimentConfig:
    """Picklable description of one experiment cell."""

    sketch: str = "carbonyl4"
    memory_bytes: int | None = None
    w: int | None = None
    d: int = 4
    M: int = 10
    p_eps: float = 0.1
    kick_limit: int = 500
    key_bytes: int = 4
    value_bytes: int = 4
    shrinkable: bool = False
    trace: str | None = None
    synth: SyntheticSpec | None = None
    query: str = "point"
    seed: int = 0
    trials: int = 1

    def replace(self, **kwargs) -> "ExperimentConfig":
        return _dc_replace(self, **kwargs)


# ---------------------------------------------------------------------------
# flag parsing helpers


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _nonneg_int(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {value}")
    return value


def _ratio_float(text: str) -> float:
    value = float(text)
    if not (0.0 <= value <= 1.0):
        raise argparse.ArgumentTypeError(f"must lie in [0, 1], got {value}")
    return value


def _nonneg_float(text: str) -> float:
    value = float(text)
    if value < 0.0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {value}")
    return value


def _parse_set_dist(text: str) -> float:
    """``exp:MEAN`` -> exponential mean for overwrite values."""
    kind, _, rest = text.partition(":")
    if kind.strip().lower() != "exp":
        raise argparse.ArgumentTypeError(
            f"unsupported set-value distribution {text!r} (want exp:MEAN)")
    try:
        mean = float(rest)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad exp mean in {text!r}") from None
    if mean <= 0:
        raise argparse.ArgumentTypeError("exp mean must be > 0")
    return mean


def _parse_inc_dist(text: str) -> tuple[float, float]:
    """``normal:MEAN,SD`` -> parameters for increment values."""
    kind, _, rest = text.partition(":")
    if kind.strip().lower() != "normal":
        raise argparse.ArgumentTypeError(
            f"unsupported inc-value distribution {text!r} "
            f"(want normal:MEAN,SD)")
    parts = rest.split(",")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"want normal:MEAN,SD, got {text!r}")
    try:
        mean, sd = float(parts[0]), float(parts[1])
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad normal params in {text!r}") \
            from None
    if sd < 0:
        raise argparse.ArgumentTypeError("normal sd must be >= 0")
    return mean, sd


def _parse_query_plan(text: str) -> tuple:
    """point | subset:COUNTxSIZE | topk[:K] -> normalized plan tuple."""
    text = text.strip().lower()
    if text == "point":
        return ("point",)
    if text.startswith("subset:"):
        body = text[len("subset:"):]
        count_s, sep, size_s = body.partition("x")
        if not sep:
            raise UsageError(f"subset plan wants subset:COUNTxSIZE, "
                             f"got {text!r}")
        try:
            count, size = int(count_s), int(size_s)
        except ValueError:
            raise UsageError(f"bad subset plan {text!r}") from None
        if count < 1 or size < 1:
            raise UsageError("subset count and size must be >= 1")
        return ("subset", count, size)
    if text == "topk" or text.startswith("topk:"):
        body = text[len("topk:"):] if ":" in text else str(DEFAULT_TOPK)
        try:
            k = int(body)
        except ValueError:
            raise UsageError(f"bad topk plan {text!r}") from None
        if k < 1:
            raise UsageError("topk K must be >= 1")
        return ("topk", k)
    raise UsageError(f"unknown query plan {text!r} "
                     f"(want point, subset:COUNTxSIZE, or topk:K)")


def _add_synth_flags(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--items", type=_positive_int, default=100_000,
                    help="stream length (default 100000)")
    sp.add_argument("--universe", type=_positive_int, default=1 << 20,
                    help="key universe size (default 2**20)")
    sp.add_argument("--zipf-alpha", type=_nonneg_float, default=0.9,
                    help="key skew exponent (default 0.9)")
    sp.add_argument("--set-ratio", type=_ratio_float, default=0.5,
                    help="probability a record overwrites (default 0.5)")
    sp.add_argument("--set-dist", type=_parse_set_dist, default="exp:10",
                    metavar="exp:MEAN",
                    help="overwrite value distribution (default exp:10)")
    sp.add_argument("--inc-dist", type=_parse_inc_dist, default="normal:0,10",
                    metavar="normal:MEAN,SD",
                    help="increment value distribution (default normal:0,10)")


def _add_build_flags(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--sketch", choices=SKETCH_NAMES, default="carbonyl4")
    sp.add_argument("--trace", help="read updates from this trace instead of "
                                    "generating synthetically")
    sp.add_argument("--memory-bytes", type=_positive_int,
                    help="table budget; w = memory // (d * entry_bytes)")
    sp.add_argument("--w", type=_positive_int,
                    help="bucket count, overrides --memory-bytes")
    sp.add_argument("--d", type=_positive_int, default=4,
                    help="slots per bucket / rows (default 4)")
    sp.add_argument("--M", type=_nonneg_int, default=10,
                    help="max displacement-walk steps (default 10)")
    sp.add_argument("--p-eps", type=_ratio_float, default=0.1,
                    help="walk stop probability (default 0.1)")
    sp.add_argument("--kick-limit", type=_nonneg_int, default=500,
                    help="cuckoo kick limit (default 500)")
    sp.add_argument("--key-bytes", type=_positive_int, default=4)
    sp.add_argument("--value-bytes", type=_positive_int, default=4)
    sp.add_argument("--shrinkable", action="store_true",
                    help="round w down to a power of two to support halving")
    sp.add_argument("--query", default="point", metavar="PLAN",
                    help="point | subset:COUNTxSIZE | topk:K "
                         "(default point; topk K defaults to 1000)")
    sp.add_argument("--trials", type=_positive_int, default=1,
                    help="independent repetitions on seeds seed, seed+1, ...")
    sp.add_argument("--seed", type=_nonneg_int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="simsketch",
        description="Benchmark unbiased key-value sketches on "
                    "set/increment update streams.")
    sub = parser.add_subparsers(dest="command", metavar="command")

    gen = sub.add_parser("generate", help="write a synthetic or derived "
                                          "update trace")
    _add_synth_flags(gen)
    gen.add_argument("--seed", type=_nonneg_int, default=0)
    gen.add_argument("--from-timestamped", metavar="PATH",
                     help="derive updates from a key,timestamp_ns,size trace")
    gen.add_argument("--gap-ns", type=_nonneg_int, default=1_000_000,
                     help="inactivity gap that starts a fresh burst "
                          "(default 1e6)")
    gen.add_argument("-o", "--out", required=True, help="output trace path "
                                                        "(.gz supported)")
    gen.set_defaults(func=cmd_generate)

    run = sub.add_parser("run", help="stream updates into one structure and "
                                     "score it against the exact oracle")
    _add_build_flags(run)
    _add_synth_flags(run)
    run.add_argument("-o", "--out", help="JSON report path (default stdout)")
    run.add_argument("--csv", help="append one CSV report row here")
    run.set_defaults(func=cmd_run)

    shr = sub.add_parser("shrink", help="halve a sketch in place (or by "
                                        "rebuild) and report quality deltas")
    _add_build_flags(shr)
    _add_synth_flags(shr)
    shr.add_argument("--mode", required=True,
                     choices=[m.value for m in ShrinkMode])
    shr.add_argument("-o", "--out", help="JSON report path (default stdout)")
    shr.set_defaults(func=cmd_shrink)

    swp = sub.add_parser("sweep", help="run one config across an axis of "
                                       "values, one CSV row per cell")
    _add_build_flags(swp)
    _add_synth_flags(swp)
    swp.add_argument("--axis", required=True, metavar="NAME=V1,V2,...",
                     help="axis over M, p_eps, memory_bytes, w, d, "
                          "set_ratio, zipf_alpha, or items")
    swp.add_argument("-o", "--out", required=True, help="output CSV path")
    swp.set_defaults(func=cmd_sweep)
    return parser


def _synth_from_args(args) -> SyntheticSpec:
    mean, sd = args.inc_dist if isinstance(args.inc_dist, tuple) \
        else _parse_inc_dist(args.inc_dist)
    set_mean = args.set_dist if isinstance(args.set_dist, float) \
        else _parse_set_dist(args.set_dist)
    return SyntheticSpec(n_items=args.items, key_universe=args.universe,
                         zipf_alpha=args.zipf_alpha, set_ratio=args.set_ratio,
                         set_exp_mean=set_mean, inc_normal_mean=mean,
                         inc_normal_sd=sd, seed=args.seed)


def _config_from_args(args) -> ExperimentConfig:
    if args.sketch != "oracle" and args.memory_bytes is None and args.w is None:
        raise UsageError("need --memory-bytes or --w for a bounded structure")
    _parse_query_plan(args.query)  # validate early
    return ExperimentConfig(
        sketch=args.sketch, memory_bytes=args.memory_bytes, w=args.w,
        d=args.d, M=args.M, p_eps=args.p_eps, kick_limit=args.kick_limit,
        key_bytes=args.key_bytes, value_bytes=args.value_bytes,
        shrinkable=args.shrinkable, trace=args.trace,
        synth=None if args.trace else _synth_from_args(args),
        query=args.query, seed=args.seed, trials=args.trials)


# ---------------------------------------------------------------------------
# experiment engine


def _table_width(cfg: ExperimentConfig) -> int:
    if cfg.w is not None:
        return cfg.w
    entry = cfg.key_bytes + cfg.value_bytes
    w = cfg.memory_bytes // (cfg.d * entry)
    if cfg.sketch == "carbonyl4" and cfg.shrinkable and w >= 2:
        w = 1 << (w.bit_length() - 1)
    if w < 2:
        raise UsageError(
            f"memory budget {cfg.memory_bytes} B holds fewer than two "
            f"{cfg.d}-entry buckets at {entry} B per entry")
    return w


def build_estimator(cfg: ExperimentConfig, seed: int):
    """Construct the structure named by ``cfg.sketch`` with its own seed."""
    if cfg.sketch == "oracle":
        return ExactOracle()
    w = _table_width(cfg)
    if cfg.sketch == "carbonyl4":
        return Carbonyl4Sketch(SketchParams(
            w=w, d=cfg.d, max_search_steps=cfg.M, stop_prob=cfg.p_eps,
            key_bytes=cfg.key_bytes, value_bytes=cfg.value_bytes,
            seed=seed, shrinkable=cfg.shrinkable))
    if cfg.sketch == "coco":
        return CocoStar(w, d=cfg.d, key_bytes=cfg.key_bytes,
                        value_bytes=cfg.value_bytes, seed=seed)
    if cfg.sketch == "cuckoo":
        return CuckooTable(w, d=cfg.d, kick_limit=cfg.kick_limit,
                           key_bytes=cfg.key_bytes,
                           value_bytes=cfg.value_bytes, seed=seed)
    raise UsageError(f"unknown sketch {cfg.sketch!r}")


def _load_stream(cfg: ExperimentConfig) -> SimStream:
    if cfg.trace is not None:
        return read_trace(cfg.trace)
    return gen_synthetic(cfg.synth)


class _Shared:
    """Per-experiment state computed once and reused across trials."""

    def __init__(self, cfg: ExperimentConfig) -> None:
        self.cfg = cfg
        self.stream = _load_stream(cfg)
        self.oracle = ExactOracle()
        self.oracle.apply_stream(self.stream)
        self.plan = _parse_query_plan(cfg.query)
        self.qkeys = np.array(self.oracle.keys(), dtype=np.uint64)
        self.truth = self.oracle.point_query_batch(self.qkeys)
        self.l1_norm = self.oracle.l1_norm
        if self.plan[0] == "subset":
            count, size = self.plan[1], self.plan[2]
            if size > self.qkeys.size:
                raise UsageError(
                    f"subset size {size} exceeds {self.qkeys.size} "
                    f"distinct keys")
            rs = np.random.default_rng(cfg.seed ^ 0x5EED5EED)
            idx = np.stack([rs.choice(self.qkeys.size, size, replace=False)
                            for _ in range(count)])
            self.subset_flat = self.qkeys[idx.ravel()]
            self.subset_truth = self.truth[idx].sum(axis=1)
        elif self.plan[0] == "topk":
            k = self.plan[1]
            top = self.oracle.topk_query(k)
            if not top:
                raise UsageError("top-k plan needs a nonempty stream")
            self.topk_keys = [e.key for e in top]
            self.topk_arr = np.array(self.topk_keys, dtype=np.uint64)
            self.topk_truth = np.array([e.value for e in top])


def _score_estimator(shared: _Shared, est) -> dict:
    """Run the shared query plan against one loaded structure."""
    plan = shared.plan
    if plan[0] == "point":
        if shared.qkeys.size == 0:  # empty workload scores perfectly
            return {"are": 0.0, "aae": 0.0, "mse": 0.0, "recall": None,
                    "query_mops": 0.0}
        t0 = time.perf_counter()
        est_vals = est.point_query_batch(shared.qkeys)
        q_elapsed = time.perf_counter() - t0
        scores = compute_errors(shared.truth, est_vals)
        scores["recall"] = None
        n_queries = shared.qkeys.size
    elif plan[0] == "subset":
        count, size = plan[1], plan[2]
        t0 = time.perf_counter()
        flat = est.point_query_batch(shared.subset_flat)
        q_elapsed = time.perf_counter() - t0
        scores = compute_errors(shared.subset_truth,
                                flat.reshape(count, size).sum(axis=1))
        scores["recall"] = None
        n_queries = count * size
    else:
        k = plan[1]
        t0 = time.perf_counter()
        est_vals = est.point_query_batch(shared.topk_arr)
        q_elapsed = time.perf_counter() - t0
        scores = compute_errors(shared.topk_truth, est_vals)
        est_top = est.topk_query(k)
        scores["recall"] = compute_recall(shared.topk_keys,
                                          (e.key for e in est_top))
        n_queries = len(shared.topk_keys)
    scores["query_mops"] = n_queries / max(q_elapsed, 1e-9) / 1e6
    return scores


def _run_trial(shared: _Shared, trial: int) -> dict:
    cfg = shared.cfg
    est = build_estimator(cfg, cfg.seed + trial)
    t0 = time.perf_counter()
    est.apply_stream(shared.stream)
    insert_elapsed = time.perf_counter() - t0
    row = _score_estimator(shared, est)
    row["insert_mops"] = len(shared.stream) / max(insert_elapsed, 1e-9) / 1e6
    row["avg_search_steps"] = est.avg_search_steps() \
        if isinstance(est, Carbonyl4Sketch) else 0.0
    row["dropped"] = float(est.dropped) \
        if isinstance(est, CuckooTable) else 0.0
    return row


_WORKER_SHARED: _Shared | None = None


def _worker_init(cfg: ExperimentConfig) -> None:
    global _WORKER_SHARED
    warmup()
    _WORKER_SHARED = _Shared(cfg)


def _worker_trial(trial: int) -> dict:
    return _run_trial(_WORKER_SHARED, trial)


def _worker_count() -> int:
    raw = os.environ.get("SIMSKETCH_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def run_experiment(cfg: ExperimentConfig,
                   shared: _Shared | None = None) -> MetricsReport:
    """Stream, query, and aggregate ``cfg.trials`` repetitions into one
    report (mean and sample sd per metric)."""
    t_start = time.perf_counter()
    warmup()  # keep first-use compilation out of the timed regions
    if shared is None:
        shared = _Shared(cfg)
    workers = min(_worker_count(), cfg.trials)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers,
                                 initializer=_worker_init,
                                 initargs=(cfg,)) as pool:
            rows = list(pool.map(_worker_trial, range(cfg.trials)))
    else:
        rows = [_run_trial(shared, t) for t in range(cfg.trials)]

    report = MetricsReport(
        sketch=cfg.sketch,
        w=0 if cfg.sketch == "oracle" else _table_width(cfg),
        d=0 if cfg.sketch == "oracle" else cfg.d,
        memory_bytes=0 if cfg.sketch == "oracle" else
        _table_width(cfg) * cfg.d * (cfg.key_bytes + cfg.value_bytes),
        items=len(shared.stream),
        distinct_keys=len(shared.oracle),
        seed=cfg.seed, trials=cfg.trials,
        query_plan=_plan_label(shared.plan),
        l1_norm=shared.l1_norm)
    for name in ("are", "aae", "mse", "avg_search_steps", "dropped",
                 "insert_mops", "query_mops"):
        mean, sd = mean_sd([row[name] for row in rows])
        setattr(report, name, mean)
        setattr(report, name + "_sd", sd)
    if shared.plan[0] == "topk":
        mean, sd = mean_sd([row["recall"] for row in rows])
        report.recall, report.recall_sd = mean, sd
    report.wall_seconds = time.perf_counter() - t_start
    return report


def _plan_label(plan: tuple) -> str:
    if plan[0] == "point":
        return "point"
    if plan[0] == "subset":
        return f"subset:{plan[1]}x{plan[2]}"
    return f"topk:{plan[1]}"


# ---------------------------------------------------------------------------
# subcommands


def cmd_generate(args) -> int:
    if args.from_timestamped is not None:
        records = read_timestamped_trace(args.from_timestamped)
        stream = derive_sim(records, args.gap_ns)
    else:
        stream = gen_synthetic(_synth_from_args(args))
    write_trace(stream, args.out)
    return 0


def cmd_run(args) -> int:
    cfg = _config_from_args(args)
    report = run_experiment(cfg)
    payload = report.to_json()
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(payload + "\n")
    else:
        print(payload)
    if args.csv:
        report.append_csv(args.csv)
    return 0


def cmd_shrink(args) -> int:
    if args.sketch != "carbonyl4":
        raise UsageError("shrink applies to --sketch carbonyl4")
    mode = ShrinkMode(args.mode)
    cfg = _config_from_args(args)
    shared = _Shared(cfg)
    warmup()  # keep first-use compilation out of the timed region
    sketch = build_estimator(cfg, cfg.seed)
    if mode is not ShrinkMode.REBUILD and sketch.w % 2:
        raise UsageError(f"cannot halve odd bucket count w={sketch.w} "
                         f"in place")
    sketch.apply_stream(shared.stream)
    before = _score_estimator(shared, sketch)
    w_before = sketch.w
    t0 = time.perf_counter()
    if mode is ShrinkMode.REBUILD:
        sketch = rebuild(sketch, sketch.w // 2)
    else:
        shrink_halve(sketch, mode)
    shrink_seconds = time.perf_counter() - t0
    after = _score_estimator(shared, sketch)

    def _quality(scores: dict) -> dict:
        return {k: scores[k] for k in ("are", "aae", "mse", "recall")}

    before_q, after_q = _quality(before), _quality(after)
    delta = {k: (None if before_q[k] is None else after_q[k] - before_q[k])
             for k in before_q}
    payload = json.dumps({
        "schema_version": SCHEMA_VERSION,
        "mode": mode.value,
        "sketch": cfg.sketch,
        "items": len(shared.stream),
        "distinct_keys": len(shared.oracle),
        "seed": cfg.seed,
        "query_plan": _plan_label(shared.plan),
        "w_before": w_before,
        "w_after": sketch.w,
        "memory_bytes_before": w_before * cfg.d * (cfg.key_bytes +
                                                   cfg.value_bytes),
        "memory_bytes_after": sketch.memory_bytes(),
        "before": before_q,
        "after": after_q,
        "delta": delta,
        "shrink_seconds": shrink_seconds,
    }, indent=2)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(payload + "\n")
    else:
        print(payload)
    return 0


_CONFIG_AXES = {"m": ("M", int), "p_eps": ("p_eps", float),
                "memory_bytes": ("memory_bytes", int), "w": ("w", int),
                "d": ("d", int)}
_SYNTH_AXES = {"set_ratio": ("set_ratio", float),
               "zipf_alpha": ("zipf_alpha", float),
               "items": ("n_items", int)}


def _parse_axis(text: str) -> tuple[str, str, list]:
    name, sep, body = text.partition("=")
    if not sep or not body:
        raise UsageError(f"axis wants NAME=V1,V2,..., got {text!r}")
    norm = name.strip().lower().replace("-", "_")
    if norm in _CONFIG_AXES:
        field, cast = _CONFIG_AXES[norm]
        kind = "config"
    elif norm in _SYNTH_AXES:
        field, cast = _SYNTH_AXES[norm]
        kind = "synth"
    else:
        known = sorted(set(_CONFIG_AXES) | set(_SYNTH_AXES))
        raise UsageError(f"unknown axis {name!r}; known axes: "
                         f"{', '.join(known)}")
    try:
        values = [cast(v) for v in body.split(",")]
    except ValueError:
        raise UsageError(f"bad axis values in {text!r}") from None
    if not values:
        raise UsageError(f"axis {name!r} needs at least one value")
    return kind, field, values


def cmd_sweep(args) -> int:
    import csv as _csv

    base = _config_from_args(args)
    kind, field, values = _parse_axis(args.axis)
    if kind == "synth" and base.synth is None:
        raise UsageError(f"axis {field} varies the synthetic workload and "
                         f"cannot be combined with --trace")
    rows = []
    for value in values:
        if kind == "config":
            cfg = base.replace(**{field: value})
        else:
            cfg = base.replace(synth=_dc_replace(base.synth,
                                                 **{field: value}))
        rows.append((value, run_experiment(cfg)))
    with open(args.out, "w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["axis", "axis_value"] + REPORT_COLUMNS)
        for value, report in rows:
            writer.writerow([field, value] + report.csv_row())
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not hasattr(args, "func"):
        parser.print_help(file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except TraceParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
