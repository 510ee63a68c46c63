"""Compiled hot-path kernels shared by every structure in the package.

All randomness flows through a splitmix64 state held in a one-element
uint64 array, so the Python wrappers and the batch loops consume one
deterministic draw sequence. Draw order per applied update: start-bucket
coin (overflow only), one stop coin per non-improving searched bucket,
then at most one merge coin.
"""
from __future__ import annotations

import numpy as np
from numba import njit
from numba import float64, int64, uint64

# splitmix64 increment and finalizer multipliers
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MUL1 = np.uint64(0xBF58476D1CE4E5B9)
_MUL2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = float(2.0 ** -53)

# salts feeding the two bucket hashes (hex digits of pi)
HASH_SALT_A = np.uint64(0x243F6A8885A308D3)
HASH_SALT_B = np.uint64(0x13198A2E03707344)
ROW_SALT_BASE = np.uint64(0xA4093822299F31D0)

KIND_SET = 0
KIND_INC = 1

PLAN_FILL = 0
PLAN_MERGE_INCOMING = 1
PLAN_MERGE_TWO = 2

MODE_RESAMPLE = 0
MODE_HEURISTIC = 1


@njit(cache=True)
def mix64(z):
    z = (z ^ (z >> _S30)) * _MUL1
    z = (z ^ (z >> _S27)) * _MUL2
    return z ^ (z >> _S31)


@njit(cache=True)
def rng_next(state):
    state[0] += _GOLDEN
    return mix64(state[0])


@njit(cache=True)
def rng_uniform(state):
    # 53-bit mantissa draw in [0, 1)
    return float64(rng_next(state) >> _S11) * _INV53


@njit(cache=True)
def hash_slot(key, salt, w):
    return int64(mix64(uint64(key) ^ salt) % uint64(w))


@njit(cache=True)
def derive_salts(seed):
    return mix64(uint64(seed) ^ HASH_SALT_A), mix64(uint64(seed) ^ HASH_SALT_B)


@njit(cache=True)
def _find_key(keys, occ, b, key):
    for s in range(keys.shape[1]):
        if occ[b, s] and keys[b, s] == key:
            return s
    return -1


@njit(cache=True)
def _find_empty(occ, b):
    for s in range(occ.shape[1]):
        if not occ[b, s]:
            return s
    return -1


@njit(cache=True)
def _two_smallest(vals, b, d):
    # full bucket assumed; among equal magnitudes the higher slot ranks smaller
    s0 = 0
    s1 = -1
    a0 = abs(vals[b, 0])
    a1 = np.inf
    for s in range(1, d):
        a = abs(vals[b, s])
        if a <= a0:
            s1 = s0
            a1 = a0
            s0 = s
            a0 = a
        elif a <= a1:
            s1 = s
            a1 = a
    return s0, s1


@njit(cache=True)
def _local_plan(vals, occ, b, incoming_abs):
    """Minimal-cost action for an incoming magnitude at bucket b.

    Returns (case, slot_a, slot_b, cost). For PLAN_MERGE_TWO slot_a is the
    second-smallest slot (receives the merged pair) and slot_b the smallest
    (receives the incoming entry).
    """
    e = _find_empty(occ, b)
    if e >= 0:
        return PLAN_FILL, e, -1, 0.0
    d = vals.shape[1]
    s0, s1 = _two_smallest(vals, b, d)
    if incoming_abs <= abs(vals[b, s1]):
        return PLAN_MERGE_INCOMING, s0, -1, 2.0 * incoming_abs * abs(vals[b, s0])
    return PLAN_MERGE_TWO, s1, s0, 2.0 * abs(vals[b, s0]) * abs(vals[b, s1])


@njit(cache=True)
def _merge_pm(k1, v1, k2, v2, state):
    """Probability-proportional-to-size coalescing of two keyed values.

    Total magnitude is conserved; the surviving key is drawn with
    probability |v1|/(|v1|+|v2|) for k1. A zero-mass pair collapses to
    (k1, 0.0) without consuming a draw.
    """
    tot = abs(v1) + abs(v2)
    if tot == 0.0:
        return k1, 0.0
    if rng_uniform(state) < abs(v1) / tot:
        return k1, -tot if v1 < 0.0 else tot
    return k2, -tot if v2 < 0.0 else tot


@njit(cache=True)
def _bucket_insert(keys, vals, occ, b, key, value, state):
    # key known absent from bucket b: fill an empty slot, else displace mass
    e = _find_empty(occ, b)
    if e >= 0:
        keys[b, e] = key
        vals[b, e] = value
        occ[b, e] = True
        return
    d = keys.shape[1]
    s0, s1 = _two_smallest(vals, b, d)
    if abs(value) <= abs(vals[b, s1]):
        mk, mv = _merge_pm(uint64(key), value, keys[b, s0], vals[b, s0], state)
        keys[b, s0] = mk
        vals[b, s0] = mv
    else:
        mk, mv = _merge_pm(keys[b, s1], vals[b, s1], keys[b, s0], vals[b, s0], state)
        keys[b, s1] = mk
        vals[b, s1] = mv
        keys[b, s0] = key
        vals[b, s0] = value


@njit(cache=True)
def _bucket_set(keys, vals, occ, b, key, value, state):
    s = _find_key(keys, occ, b, key)
    if s >= 0:
        vals[b, s] = value
        return
    _bucket_insert(keys, vals, occ, b, key, value, state)


@njit(cache=True)
def _bucket_inc(keys, vals, occ, b, key, value, state):
    s = _find_key(keys, occ, b, key)
    if s >= 0:
        vals[b, s] += value  # slot stays occupied even at exact zero
        return
    _bucket_insert(keys, vals, occ, b, key, value, state)


@njit(cache=True)
def _bucket_apply_batch(keys, vals, occ, kinds, ukeys, uvals, state):
    for i in range(kinds.shape[0]):
        if kinds[i] == KIND_INC:
            _bucket_inc(keys, vals, occ, 0, ukeys[i], uvals[i], state)
        else:
            _bucket_set(keys, vals, occ, 0, ukeys[i], uvals[i], state)


@njit(cache=True)
def _cascade_search(keys, vals, occ, salt_a, salt_b, start, start_abs,
                    stop_prob, max_steps, state, path_b, path_s):
    """Read-only displacement walk from a full start bucket.

    Records, per visited bucket, the slot the walk would displace. An
    improving bucket never draws a stop coin; a zero-cost bucket stops the
    walk outright. Returns (path_len, opt_prefix_len, min_cost, steps).
    """
    w = keys.shape[0]
    min_global = np.inf
    opt_len = 0
    n = 0
    steps = 0
    cur = start
    cur_abs = start_abs
    while True:
        case, sa, sb, cost = _local_plan(vals, occ, cur, cur_abs)
        disp = sb if case == PLAN_MERGE_TWO else sa
        path_b[n] = cur
        path_s[n] = disp
        n += 1
        improved = cost < min_global
        if improved:
            min_global = cost
            opt_len = n
        if min_global == 0.0:
            break
        if not improved and rng_uniform(state) < stop_prob:
            break
        if steps >= max_steps:
            break
        skey = keys[cur, disp]
        i1 = hash_slot(skey, salt_a, w)
        i2 = hash_slot(skey, salt_b, w)
        nxt = i2 if i1 == cur else i1
        if nxt == cur:
            break
        cur_abs = abs(vals[cur, disp])
        cur = nxt
        steps += 1
    return n, opt_len, min_global, steps


@njit(cache=True)
def _cascade_kick(keys, vals, occ, path_b, path_s, opt_len, key, value, state):
    # replay the recorded prefix, shifting each displaced entry one bucket
    # forward; the entry arriving at the optimal bucket lands via bucket set
    ck = uint64(key)
    cv = value
    for i in range(opt_len - 1):
        b = path_b[i]
        s = path_s[i]
        dk = keys[b, s]
        dv = vals[b, s]
        keys[b, s] = ck
        vals[b, s] = cv
        ck = dk
        cv = dv
    _bucket_set(keys, vals, occ, path_b[opt_len - 1], ck, cv, state)


@njit(cache=True)
def _apply_one(keys, vals, occ, salt_a, salt_b, stop_prob, max_steps,
               kind, key, value, state, path_b, path_s, stats):
    w = keys.shape[0]
    i1 = hash_slot(key, salt_a, w)
    i2 = hash_slot(key, salt_b, w)
    s = _find_key(keys, occ, i1, key)
    if s >= 0:
        if kind == KIND_INC:
            vals[i1, s] += value
        else:
            vals[i1, s] = value
        return
    if i2 != i1:
        s = _find_key(keys, occ, i2, key)
        if s >= 0:
            if kind == KIND_INC:
                vals[i2, s] += value
            else:
                vals[i2, s] = value
            return
    s = _find_empty(occ, i1)
    if s >= 0:
        keys[i1, s] = key
        vals[i1, s] = value
        occ[i1, s] = True
        return
    if i2 != i1:
        s = _find_empty(occ, i2)
        if s >= 0:
            keys[i2, s] = key
            vals[i2, s] = value
            occ[i2, s] = True
            return
    start = i1 if rng_uniform(state) < 0.5 else i2
    n, opt_len, mg, steps = _cascade_search(
        keys, vals, occ, salt_a, salt_b, start, abs(value),
        stop_prob, max_steps, state, path_b, path_s)
    stats[0] += steps
    stats[1] += 1
    _cascade_kick(keys, vals, occ, path_b, path_s, opt_len, key, value, state)


@njit(cache=True)
def _apply_batch(keys, vals, occ, salt_a, salt_b, stop_prob, max_steps,
                 kinds, ukeys, uvals, state, stats):
    path_b = np.empty(max_steps + 1, np.int64)
    path_s = np.empty(max_steps + 1, np.int64)
    for i in range(kinds.shape[0]):
        _apply_one(keys, vals, occ, salt_a, salt_b, stop_prob, max_steps,
                   kinds[i], ukeys[i], uvals[i], state, path_b, path_s, stats)


@njit(cache=True)
def _point_query(keys, vals, occ, salt_a, salt_b, key):
    w = keys.shape[0]
    i1 = hash_slot(key, salt_a, w)
    s = _find_key(keys, occ, i1, key)
    if s >= 0:
        return vals[i1, s]
    i2 = hash_slot(key, salt_b, w)
    if i2 != i1:
        s = _find_key(keys, occ, i2, key)
        if s >= 0:
            return vals[i2, s]
    return 0.0


@njit(cache=True)
def _point_query_batch(keys, vals, occ, salt_a, salt_b, qkeys, out):
    for i in range(qkeys.shape[0]):
        out[i] = _point_query(keys, vals, occ, salt_a, salt_b, qkeys[i])


@njit(cache=True)
def _contains(keys, occ, salt_a, salt_b, key):
    w = keys.shape[0]
    i1 = hash_slot(key, salt_a, w)
    if _find_key(keys, occ, i1, key) >= 0:
        return True
    i2 = hash_slot(key, salt_b, w)
    return i2 != i1 and _find_key(keys, occ, i2, key) >= 0


# ---------------------------------------------------------------------------
# bucket-pair downsizing


@njit(cache=True)
def _gather_pair(keys, vals, occ, ka, kb, gk, gv):
    d = keys.shape[1]
    m = 0
    for s in range(d):
        if occ[ka, s]:
            gk[m] = keys[ka, s]
            gv[m] = vals[ka, s]
            m += 1
    for s in range(d):
        if occ[kb, s]:
            gk[m] = keys[kb, s]
            gv[m] = vals[kb, s]
            m += 1
    return m


@njit(cache=True)
def _sort_abs_desc(gk, gv, m):
    # stable insertion sort, |value| descending
    for i in range(1, m):
        k = gk[i]
        v = gv[i]
        a = abs(v)
        j = i - 1
        while j >= 0 and abs(gv[j]) < a:
            gk[j + 1] = gk[j]
            gv[j + 1] = gv[j]
            j -= 1
        gk[j + 1] = k
        gv[j + 1] = v


@njit(cache=True)
def _sort_abs_asc(gk, gv, m):
    # stable insertion sort, |value| ascending
    for i in range(1, m):
        k = gk[i]
        v = gv[i]
        a = abs(v)
        j = i - 1
        while j >= 0 and abs(gv[j]) > a:
            gk[j + 1] = gk[j]
            gv[j + 1] = gv[j]
            j -= 1
        gk[j + 1] = k
        gv[j + 1] = v


@njit(cache=True)
def _resample_entries(gk, gv, m, d, state, ok, ov):
    """Inclusion-probability-proportional-to-size downsizing to <= d entries.

    Large entries whose magnitude share guarantees inclusion keep their exact
    value; the remaining slots are filled by a single systematic draw over the
    tail, each survivor storing (tail mass / slots) with its original sign.
    Returns the number of entries written to ok/ov.
    """
    if m <= d:
        for i in range(m):
            ok[i] = gk[i]
            ov[i] = gv[i]
        return m
    _sort_abs_desc(gk, gv, m)
    tail = 0.0
    for i in range(m):
        tail += abs(gv[i])
    i = 0
    while i < d:
        a = abs(gv[i])
        if float64(d - i) * a >= tail:
            ok[i] = gk[i]
            ov[i] = gv[i]
            tail -= a
            i += 1
        else:
            break
    kept = i
    k = d - kept
    if k == 0:
        # remaining mass is provably zero once d entries each cover the tail
        return kept
    if tail <= 0.0:
        # zero-mass tail: keep the first k entries verbatim (all zeros)
        for z in range(k):
            ok[kept + z] = gk[kept + z]
            ov[kept + z] = gv[kept + z]
        return d
    stored = tail / float64(k)
    nxt = rng_uniform(state)
    cum = 0.0
    outn = kept
    last_pos = -1
    for j in range(kept, m):
        a = abs(gv[j])
        if a > 0.0:
            last_pos = j
        cum += float64(k) * a / tail
        if cum > nxt:
            ok[outn] = gk[j]
            ov[outn] = -stored if gv[j] < 0.0 else stored
            outn += 1
            nxt += 1.0
            if outn == d:
                break
    if outn < d and last_pos >= 0:
        # floating-point shortfall at the final interval boundary; the last
        # positive-mass entry is the one whose interval was shaved
        ok[outn] = gk[last_pos]
        ov[outn] = -stored if gv[last_pos] < 0.0 else stored
        outn += 1
    return outn


@njit(cache=True)
def _heuristic_entries(gk, gv, m, d, state, ok, ov):
    """Greedy pairwise coalescing of the two smallest magnitudes.

    Performs exactly max(0, m - d) merge draws. Two queues keep the scan
    linear after one sort: unmerged originals ascending, plus a FIFO of
    merge outputs whose magnitudes are non-decreasing by construction.
    Originals win magnitude ties against merged blobs.
    """
    if m <= d:
        for i in range(m):
            ok[i] = gk[i]
            ov[i] = gv[i]
        return m
    _sort_abs_asc(gk, gv, m)
    bk = np.empty(m, np.uint64)
    bv = np.empty(m, np.float64)
    ah = 0
    bh = 0
    bt = 0
    for _ in range(m - d):
        if bh >= bt or (ah < m and abs(gv[ah]) <= abs(bv[bh])):
            k1 = gk[ah]
            v1 = gv[ah]
            ah += 1
        else:
            k1 = bk[bh]
            v1 = bv[bh]
            bh += 1
        if bh >= bt or (ah < m and abs(gv[ah]) <= abs(bv[bh])):
            k2 = gk[ah]
            v2 = gv[ah]
            ah += 1
        else:
            k2 = bk[bh]
            v2 = bv[bh]
            bh += 1
        mk, mv = _merge_pm(k1, v1, k2, v2, state)
        bk[bt] = mk
        bv[bt] = mv
        bt += 1
    outn = 0
    for j in range(ah, m):
        ok[outn] = gk[j]
        ov[outn] = gv[j]
        outn += 1
    for j in range(bh, bt):
        ok[outn] = bk[j]
        ov[outn] = bv[j]
        outn += 1
    return outn


@njit(cache=True)
def _halve(keys, vals, occ, mode, state):
    # fold row k + w/2 into row k for every k below the midpoint
    w = keys.shape[0]
    d = keys.shape[1]
    w2 = w // 2
    gk = np.empty(2 * d, np.uint64)
    gv = np.empty(2 * d, np.float64)
    ok = np.empty(d, np.uint64)
    ov = np.empty(d, np.float64)
    for k in range(w2):
        m = _gather_pair(keys, vals, occ, k, k + w2, gk, gv)
        if mode == MODE_RESAMPLE:
            n = _resample_entries(gk, gv, m, d, state, ok, ov)
        else:
            n = _heuristic_entries(gk, gv, m, d, state, ok, ov)
        for s in range(n):
            keys[k, s] = ok[s]
            vals[k, s] = ov[s]
            occ[k, s] = True
        for s in range(n, d):
            keys[k, s] = uint64(0)
            vals[k, s] = 0.0
            occ[k, s] = False


# ---------------------------------------------------------------------------
# baseline structures


@njit(cache=True)
def _cuckoo_apply_one(keys, vals, occ, salt_a, salt_b, kick_limit,
                      kind, key, value, state):
    """Exact two-choice table apply; returns 1 if an entry was dropped."""
    w = keys.shape[0]
    d = keys.shape[1]
    i1 = hash_slot(key, salt_a, w)
    i2 = hash_slot(key, salt_b, w)
    s = _find_key(keys, occ, i1, key)
    if s >= 0:
        if kind == KIND_INC:
            vals[i1, s] += value
        else:
            vals[i1, s] = value
        return 0
    if i2 != i1:
        s = _find_key(keys, occ, i2, key)
        if s >= 0:
            if kind == KIND_INC:
                vals[i2, s] += value
            else:
                vals[i2, s] = value
            return 0
    s = _find_empty(occ, i1)
    if s >= 0:
        keys[i1, s] = key
        vals[i1, s] = value
        occ[i1, s] = True
        return 0
    if i2 != i1:
        s = _find_empty(occ, i2)
        if s >= 0:
            keys[i2, s] = key
            vals[i2, s] = value
            occ[i2, s] = True
            return 0
    ck = uint64(key)
    cv = value
    cur = i1 if rng_uniform(state) < 0.5 else i2
    kicks = 0
    while True:
        if kicks >= kick_limit:
            return 1
        s = int64(rng_uniform(state) * float64(d))
        dk = keys[cur, s]
        dv = vals[cur, s]
        keys[cur, s] = ck
        vals[cur, s] = cv
        ck = dk
        cv = dv
        j1 = hash_slot(ck, salt_a, w)
        j2 = hash_slot(ck, salt_b, w)
        cur = j2 if j1 == cur else j1
        kicks += 1
        s = _find_empty(occ, cur)
        if s >= 0:
            keys[cur, s] = ck
            vals[cur, s] = cv
            occ[cur, s] = True
            return 0


@njit(cache=True)
def _cuckoo_apply_batch(keys, vals, occ, salt_a, salt_b, kick_limit,
                        kinds, ukeys, uvals, state):
    drops = 0
    for i in range(kinds.shape[0]):
        drops += _cuckoo_apply_one(keys, vals, occ, salt_a, salt_b, kick_limit,
                                   kinds[i], ukeys[i], uvals[i], state)
    return drops


@njit(cache=True)
def _coco_apply_one(keys, vals, occ, salts, kind, key, value, state):
    # one hashed cell per row; absent keys compete with the lightest cell
    rows = keys.shape[0]
    cols = keys.shape[1]
    for r in range(rows):
        c = hash_slot(key, salts[r], cols)
        if occ[r, c] and keys[r, c] == key:
            if kind == KIND_INC:
                vals[r, c] += value
            else:
                vals[r, c] = value
            return
    for r in range(rows):
        c = hash_slot(key, salts[r], cols)
        if not occ[r, c]:
            keys[r, c] = key
            vals[r, c] = value
            occ[r, c] = True
            return
    mr = 0
    mc = hash_slot(key, salts[0], cols)
    ma = abs(vals[mr, mc])
    for r in range(1, rows):
        c = hash_slot(key, salts[r], cols)
        a = abs(vals[r, c])
        if a < ma:
            mr = r
            mc = c
            ma = a
    mk, mv = _merge_pm(uint64(key), value, keys[mr, mc], vals[mr, mc], state)
    keys[mr, mc] = mk
    vals[mr, mc] = mv


@njit(cache=True)
def _coco_apply_batch(keys, vals, occ, salts, kinds, ukeys, uvals, state):
    for i in range(kinds.shape[0]):
        _coco_apply_one(keys, vals, occ, salts, kinds[i], ukeys[i], uvals[i],
                        state)


@njit(cache=True)
def _coco_point_query(keys, vals, occ, salts, key):
    rows = keys.shape[0]
    cols = keys.shape[1]
    for r in range(rows):
        c = hash_slot(key, salts[r], cols)
        if occ[r, c] and keys[r, c] == key:
            return vals[r, c]
    return 0.0


@njit(cache=True)
def _coco_point_query_batch(keys, vals, occ, salts, qkeys, out):
    for i in range(qkeys.shape[0]):
        out[i] = _coco_point_query(keys, vals, occ, salts, qkeys[i])


# ---------------------------------------------------------------------------
# Monte-Carlo helper used by the statistical test batteries


@njit(cache=True)
def _merge_pm_trials(v1, v2, n, state):
    """n coalescing draws on a fixed pair; returns moment accumulators
    (sum_a, sumsq_a, sum_pair_sqerr, sumsq_pair_sqerr) where *_a tracks the
    value attributed to the first key."""
    sa = 0.0
    sqa = 0.0
    sp = 0.0
    sqp = 0.0
    for _ in range(n):
        k, v = _merge_pm(uint64(1), v1, uint64(2), v2, state)
        if k == uint64(1):
            qa = v
            qb = 0.0
        else:
            qa = 0.0
            qb = v
        da = qa - v1
        db = qb - v2
        p = da * da + db * db
        sa += qa
        sqa += qa * qa
        sp += p
        sqp += p * p
    return sa, sqa, sp, sqp
