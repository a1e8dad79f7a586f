# cython: language_level=3, boundscheck=False, wraparound=False
# cython: initializedcheck=False, cdivision=True
"""Compiled search kernels: popcount Hamming ops, exhaustive scans, and the
multi-index probe loops. Semantics and statistics mirror ``_pykernels``."""

import numpy as np

from libc.stdint cimport int32_t, int64_t, uint64_t
from libc.stdlib cimport free, malloc
from libc.string cimport memset

cdef extern from *:
    """
    #if defined(__GNUC__) || defined(__clang__)
    static inline int hmx_popcnt64(unsigned long long x) { return __builtin_popcountll(x); }
    #else
    static inline int hmx_popcnt64(unsigned long long x) {
        x = x - ((x >> 1) & 0x5555555555555555ULL);
        x = (x & 0x3333333333333333ULL) + ((x >> 2) & 0x3333333333333333ULL);
        x = (x + (x >> 4)) & 0x0F0F0F0F0F0F0F0FULL;
        return (int)((x * 0x0101010101010101ULL) >> 56);
    }
    #endif
    """
    int hmx_popcnt64(unsigned long long x) nogil

BACKEND = "c"

cdef enum:
    MAX_WORDS = 64   # codes up to 4096 bits


cdef inline int64_t comb_capped_c(int n, int r, int64_t cap) nogil:
    cdef int64_t c = 1
    cdef int i
    if r < 0 or r > n:
        return 0
    if r > n - r:
        r = n - r
    for i in range(r):
        c = c * (n - i) // (i + 1)
        if c > cap:
            return cap + 1
    return c


cdef inline uint64_t gosper_next(uint64_t v) nogil:
    cdef uint64_t c = v & (~v + 1)
    cdef uint64_t r = v + c
    return (((r ^ v) >> 2) / c) | r


cdef inline uint64_t weight_start(int t) nogil:
    if t == 0:
        return 0
    if t >= 64:
        return <uint64_t> 0xFFFFFFFFFFFFFFFFULL
    return ((<uint64_t> 1) << t) - 1


cdef inline int64_t bsearch_u64(const uint64_t* keys, int64_t nk, uint64_t x) nogil:
    cdef int64_t lo = 0, hi = nk, mid
    while lo < hi:
        mid = (lo + hi) >> 1
        if keys[mid] < x:
            lo = mid + 1
        else:
            hi = mid
    if lo < nk and keys[lo] == x:
        return lo
    return -1


cdef inline int row_distance(const uint64_t* row, const uint64_t* q, int W) nogil:
    cdef int w, d = 0
    for w in range(W):
        d += hmx_popcnt64(row[w] ^ q[w])
    return d


def hamming_one_to_many(q_words, bank_words):
    cdef const uint64_t[::1] q = np.ascontiguousarray(q_words, dtype=np.uint64)
    cdef const uint64_t[:, ::1] bank = bank_words
    cdef Py_ssize_t n = bank.shape[0]
    cdef int W = <int> bank.shape[1]
    out = np.empty(n, dtype=np.int32)
    cdef int32_t[::1] o = out
    cdef Py_ssize_t i
    cdef const uint64_t* bp = &bank[0, 0]
    cdef const uint64_t* qp = &q[0]
    with nogil:
        for i in range(n):
            o[i] = row_distance(bp + i * W, qp, W)
    return out


def linear_scan_radius(q_words, bank_words, int k):
    cdef const uint64_t[::1] q = np.ascontiguousarray(q_words, dtype=np.uint64)
    cdef const uint64_t[:, ::1] bank = bank_words
    cdef Py_ssize_t n = bank.shape[0]
    cdef int W = <int> bank.shape[1]
    cdef const uint64_t* bp = &bank[0, 0]
    cdef const uint64_t* qp = &q[0]
    cdef int64_t* hits = <int64_t*> malloc(n * sizeof(int64_t))
    cdef int32_t* hd = <int32_t*> malloc(n * sizeof(int32_t))
    if hits == NULL or hd == NULL:
        free(hits); free(hd)
        raise MemoryError()
    cdef Py_ssize_t i, cnt = 0
    cdef int d
    with nogil:
        for i in range(n):
            d = row_distance(bp + i * W, qp, W)
            if d <= k:
                hits[cnt] = i
                hd[cnt] = d
                cnt += 1
    ids = np.empty(cnt, dtype=np.int64)
    dists = np.empty(cnt, dtype=np.int32)
    cdef int64_t[::1] idv = ids
    cdef int32_t[::1] dv = dists
    for i in range(cnt):
        idv[i] = hits[i]
        dv[i] = hd[i]
    free(hits); free(hd)
    return ids, dists


def linear_scan_knn(q_words, bank_words, int k_nn):
    """Full scan plus counting selection; output ordered by (distance, id)."""
    cdef const uint64_t[::1] q = np.ascontiguousarray(q_words, dtype=np.uint64)
    cdef const uint64_t[:, ::1] bank = bank_words
    cdef Py_ssize_t n = bank.shape[0]
    cdef int W = <int> bank.shape[1]
    cdef int R = W * 64
    cdef const uint64_t* bp = &bank[0, 0]
    cdef const uint64_t* qp = &q[0]
    if k_nn > n:
        k_nn = <int> n
    cdef int32_t* dist = <int32_t*> malloc(n * sizeof(int32_t))
    cdef int64_t* counts = <int64_t*> malloc((R + 2) * sizeof(int64_t))
    if dist == NULL or counts == NULL:
        free(dist); free(counts)
        raise MemoryError()
    ids = np.empty(k_nn, dtype=np.int64)
    dists = np.empty(k_nn, dtype=np.int32)
    cdef int64_t[::1] idv = ids
    cdef int32_t[::1] dv = dists
    cdef Py_ssize_t i, taken = 0
    cdef int d, cutoff = 0
    cdef int64_t acc = 0
    with nogil:
        memset(counts, 0, (R + 2) * sizeof(int64_t))
        for i in range(n):
            d = row_distance(bp + i * W, qp, W)
            dist[i] = d
            counts[d] += 1
        while acc + counts[cutoff] < k_nn:
            acc += counts[cutoff]
            cutoff += 1
        for i in range(n):
            d = dist[i]
            if d < cutoff:
                idv[taken] = i
                dv[taken] = d
                taken += 1
        for i in range(n):
            if taken >= k_nn:
                break
            if dist[i] == cutoff:
                idv[taken] = i
                dv[taken] = cutoff
                taken += 1
    free(dist); free(counts)
    # Cells filled in id order; a stable sort on distance yields (dist, id).
    order = np.argsort(dists, kind="stable")
    return ids[order], dists[order]


# -- multi-index probing ------------------------------------------------

cdef struct TableC:
    int kind            # 0 direct, 1 sorted
    int s
    int64_t nk          # distinct keys (sorted); 2**s for direct
    const int64_t* offsets
    const uint64_t* keys
    const int32_t* ids
    int32_t* dk         # per-query scan cache, NULL until scanned
    int32_t* perm       # distinct-key indices grouped by dk value
    int64_t* cell       # group boundaries in perm, len s+2


cdef struct QueryCtx:
    const uint64_t* bank
    int W
    int n
    uint64_t qw[MAX_WORDS]
    int32_t* stamp
    int32_t cur
    int64_t* cand_ids
    int32_t* cand_dists
    int64_t* dist_count
    int64_t ncand
    int64_t buckets_probed
    int64_t raised
    int64_t unique


cdef inline void absorb_bucket(QueryCtx* ctx, const int32_t* ids,
                               int64_t lo, int64_t hi) nogil:
    cdef int64_t p
    cdef int32_t cid
    cdef int d
    ctx.raised += hi - lo
    for p in range(lo, hi):
        cid = ids[p]
        if ctx.stamp[cid] != ctx.cur:
            ctx.stamp[cid] = ctx.cur
            d = row_distance(ctx.bank + (<int64_t> cid) * ctx.W, ctx.qw, ctx.W)
            ctx.cand_ids[ctx.ncand] = cid
            ctx.cand_dists[ctx.ncand] = d
            ctx.ncand += 1
            ctx.dist_count[d] += 1
            ctx.unique += 1


cdef int probe_shell(QueryCtx* ctx, TableC* tb, uint64_t qkey, int t) nogil:
    """Probe the shell at substring radius exactly t. Returns -1 when the
    caller must allocate the table's scan cache first (needs the GIL)."""
    cdef uint64_t v, last, probe
    cdef int64_t pos, i
    if tb.kind == 0:
        v = weight_start(t)
        last = v << (tb.s - t)
        while True:
            ctx.buckets_probed += 1
            probe = qkey ^ v
            absorb_bucket(ctx, tb.ids, tb.offsets[probe], tb.offsets[probe + 1])
            if v == last:
                break
            v = gosper_next(v)
        return 0
    if tb.dk == NULL and comb_capped_c(tb.s, t, tb.nk >> 3) > tb.nk >> 3:
        return -1
    if tb.dk != NULL:
        for pos in range(tb.cell[t], tb.cell[t + 1]):
            i = tb.perm[pos]
            absorb_bucket(ctx, tb.ids, tb.offsets[i], tb.offsets[i + 1])
        return 0
    v = weight_start(t)
    last = v << (tb.s - t)
    while True:
        ctx.buckets_probed += 1
        pos = bsearch_u64(tb.keys, tb.nk, qkey ^ v)
        if pos >= 0:
            absorb_bucket(ctx, tb.ids, tb.offsets[pos], tb.offsets[pos + 1])
        if v == last:
            break
        v = gosper_next(v)
    return 0


cdef void scan_table(QueryCtx* ctx, TableC* tb, uint64_t qkey) nogil:
    """Distance every distinct key to the query key once, then group key
    indices by distance so later shells are direct slices."""
    cdef int64_t i, acc = 0
    cdef int d
    for i in range(tb.s + 2):
        tb.cell[i] = 0
    for i in range(tb.nk):
        d = hmx_popcnt64(tb.keys[i] ^ qkey)
        tb.dk[i] = d
        tb.cell[d + 1] += 1
    for d in range(tb.s + 1):
        tb.cell[d + 1] += tb.cell[d]
    for i in range(tb.nk):
        d = tb.dk[i]
        tb.perm[tb.cell[d]] = <int32_t> i
        tb.cell[d] += 1
    for d in range(tb.s, 0, -1):
        tb.cell[d] = tb.cell[d - 1]
    tb.cell[0] = 0
    ctx.buckets_probed += tb.nk


class _CWorkspace:
    """Reusable per-bank query buffers."""

    def __init__(self, n, nbits):
        self.stamp = np.zeros(n, dtype=np.int32)
        self.counter = 0
        self.cand_ids = np.empty(n, dtype=np.int64)
        self.cand_dists = np.empty(n, dtype=np.int32)
        self.dist_count = np.zeros(nbits + 2, dtype=np.int64)


_ws_cache = {}


def _workspace_for(bank_words, nbits):
    key = (id(bank_words), bank_words.shape[0], nbits)
    ws = _ws_cache.get(key)
    if ws is None:
        ws = _CWorkspace(bank_words.shape[0], nbits)
        _ws_cache[key] = ws
        if len(_ws_cache) > 8:
            for stale in list(_ws_cache)[:-4]:
                del _ws_cache[stale]
    return ws


cdef class _QueryRunner:
    """C-side view of the tables plus per-query state."""

    cdef QueryCtx ctx
    cdef TableC* tabs
    cdef int m
    cdef object keepalive
    cdef object ws

    def __cinit__(self, bank_words, q_words, tables, ws):
        cdef const uint64_t[:, ::1] bankv = bank_words
        cdef const uint64_t[::1] qv = np.ascontiguousarray(q_words, dtype=np.uint64)
        cdef int W = <int> bankv.shape[1]
        cdef int w, j
        cdef TableC* tb
        cdef int64_t[::1] offv
        cdef uint64_t[::1] keyv
        cdef int32_t[::1] idv
        cdef int32_t[::1] stampv
        cdef int64_t[::1] cidv
        cdef int32_t[::1] cdv
        cdef int64_t[::1] dcv
        if W > MAX_WORDS:
            raise ValueError("code too long for the compiled kernels")
        self.m = len(tables)
        self.tabs = <TableC*> malloc(self.m * sizeof(TableC))
        if self.tabs == NULL:
            raise MemoryError()
        self.keepalive = [bank_words]
        self.ws = ws
        self.ctx.bank = &bankv[0, 0]
        self.ctx.W = W
        self.ctx.n = <int> bankv.shape[0]
        for w in range(W):
            self.ctx.qw[w] = qv[w]

        ws.counter += 1
        if ws.counter >= 2147483647:
            ws.stamp[:] = 0
            ws.counter = 1
        ws.dist_count[:] = 0
        stampv = ws.stamp
        cidv = ws.cand_ids
        cdv = ws.cand_dists
        dcv = ws.dist_count
        self.ctx.stamp = &stampv[0]
        self.ctx.cur = <int32_t> ws.counter
        self.ctx.cand_ids = &cidv[0]
        self.ctx.cand_dists = &cdv[0]
        self.ctx.dist_count = &dcv[0]
        self.ctx.ncand = 0
        self.ctx.buckets_probed = 0
        self.ctx.raised = 0
        self.ctx.unique = 0

        for j in range(self.m):
            table = tables[j]
            tb = &self.tabs[j]
            tb.s = table.s
            tb.dk = NULL
            tb.perm = NULL
            tb.cell = NULL
            offv = table.offsets
            idv = table.ids
            tb.offsets = &offv[0]
            tb.ids = &idv[0]
            self.keepalive.append(table.offsets)
            self.keepalive.append(table.ids)
            if table.kind == "direct":
                tb.kind = 0
                tb.nk = (<int64_t> 1) << table.s
                tb.keys = NULL
            elif table.kind == "sorted":
                tb.kind = 1
                keyv = table.keys
                tb.keys = &keyv[0]
                tb.nk = keyv.shape[0]
                self.keepalive.append(table.keys)
            else:
                raise ValueError("compiled kernels cannot probe wide-key tables")

    def __dealloc__(self):
        free(self.tabs)

    cdef int shell(self, int j, int t, uint64_t qkey) except -1:
        cdef TableC* tb = &self.tabs[j]
        cdef int32_t[::1] dkv
        cdef int32_t[::1] permv
        cdef int64_t[::1] cellv
        if probe_shell(&self.ctx, tb, qkey, t) == -1:
            dk = np.empty(tb.nk, dtype=np.int32)
            perm = np.empty(tb.nk, dtype=np.int32)
            cell = np.empty(tb.s + 2, dtype=np.int64)
            self.keepalive += [dk, perm, cell]
            dkv = dk
            permv = perm
            cellv = cell
            tb.dk = &dkv[0]
            tb.perm = &permv[0]
            tb.cell = &cellv[0]
            scan_table(&self.ctx, tb, qkey)
            probe_shell(&self.ctx, tb, qkey, t)
        return 0

    def stats(self):
        return {
            "buckets_probed": int(self.ctx.buckets_probed),
            "candidates_raised": int(self.ctx.raised),
            "candidates_unique": int(self.ctx.unique),
            "candidates_verified": int(self.ctx.unique),
            "survivors": 0,
        }


def mih_radius_query(bank_words, int nbits, tables, qkeys, schedule, int k, q_words):
    ws = _workspace_for(bank_words, nbits)
    cdef _QueryRunner r = _QueryRunner(bank_words, q_words, tables, ws)
    cdef int m = len(tables)
    cdef int j, t, rj, smax
    cdef uint64_t qk
    for j in range(m):
        rj = int(schedule[j])
        if rj < 0:
            continue
        qk = <uint64_t> qkeys[j]
        smax = r.tabs[j].s
        if rj > smax:
            rj = smax
        for t in range(rj + 1):
            r.shell(j, t, qk)
    cdef int64_t nc = r.ctx.ncand
    ids_all = np.asarray(ws.cand_ids[:nc])
    dists_all = np.asarray(ws.cand_dists[:nc])
    keep = dists_all <= k
    ids_s = ids_all[keep]
    dists_s = dists_all[keep]
    order = np.argsort(ids_s)
    ids_s = np.ascontiguousarray(ids_s[order])
    dists_s = np.ascontiguousarray(dists_s[order])
    stats = r.stats()
    stats["survivors"] = int(ids_s.shape[0])
    return ids_s, dists_s, stats


def mih_knn_query(bank_words, int nbits, tables, qkeys, int k_nn, q_words):
    ws = _workspace_for(bank_words, nbits)
    cdef _QueryRunner r = _QueryRunner(bank_words, q_words, tables, ws)
    cdef int m = len(tables)
    cdef int level = 0, j, t, k_star = nbits, bound, d
    cdef int64_t have
    cdef int max_level = m * (nbits + 2) + nbits + 1
    cdef uint64_t* qkarr = <uint64_t*> malloc(m * sizeof(uint64_t))
    if qkarr == NULL:
        raise MemoryError()
    for j in range(m):
        qkarr[j] = <uint64_t> qkeys[j]
    try:
        while True:
            j = level % m
            t = level // m
            if t <= r.tabs[j].s:
                r.shell(j, t, qkarr[j])
            bound = level if level < nbits else nbits
            have = 0
            for d in range(bound + 1):
                have += r.ctx.dist_count[d]
            if have >= k_nn:
                k_star = bound
                break
            level += 1
            if level > max_level:
                raise AssertionError("k-NN search failed to terminate")
    finally:
        free(qkarr)

    # Pick the k_nn best by (distance, id): counting-sort into distance
    # cells, then emit cells in ascending-id order until k_nn are out.
    cdef int64_t nc = r.ctx.ncand
    cdef int64_t survivors = 0
    for d in range(k_star + 1):
        survivors += r.ctx.dist_count[d]
    out_ids = np.empty(k_nn, dtype=np.int64)
    out_dists = np.empty(k_nn, dtype=np.int32)
    cdef int64_t[::1] oid = out_ids
    cdef int32_t[::1] odv = out_dists
    cdef int64_t* cell_pos = <int64_t*> malloc((k_star + 2) * sizeof(int64_t))
    cdef int64_t* sc_ids = <int64_t*> malloc((survivors if survivors > 0 else 1) * sizeof(int64_t))
    if cell_pos == NULL or sc_ids == NULL:
        free(cell_pos); free(sc_ids)
        raise MemoryError()
    cdef int64_t acc = 0, i, p, key_v, taken = 0, cs, ce
    with nogil:
        for d in range(k_star + 1):
            cell_pos[d] = acc
            acc += r.ctx.dist_count[d]
        cell_pos[k_star + 1] = acc
        for i in range(nc):
            d = r.ctx.cand_dists[i]
            if d <= k_star:
                sc_ids[cell_pos[d]] = r.ctx.cand_ids[i]
                cell_pos[d] += 1
        acc = 0
        for d in range(k_star + 1):
            cell_pos[d] = acc
            acc += r.ctx.dist_count[d]
        for d in range(k_star + 1):
            if taken >= k_nn:
                break
            cs = cell_pos[d]
            ce = cs + r.ctx.dist_count[d]
            if ce == cs:
                continue
            for i in range(cs + 1, ce):
                key_v = sc_ids[i]
                p = i - 1
                while p >= cs and sc_ids[p] > key_v:
                    sc_ids[p + 1] = sc_ids[p]
                    p -= 1
                sc_ids[p + 1] = key_v
            i = cs
            while i < ce and taken < k_nn:
                oid[taken] = sc_ids[i]
                odv[taken] = d
                taken += 1
                i += 1
    free(cell_pos); free(sc_ids)
    stats = r.stats()
    stats["survivors"] = int(survivors)
    return out_ids, out_dists, k_star, stats
