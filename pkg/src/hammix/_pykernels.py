"""Pure-numpy search kernels.

Fallback implementation of the hot operations; semantics (results and
probe/candidate statistics) are identical to the compiled kernels in
``_ckernels``. Per-table probing works shell by shell: a shell of radius t
is every key at substring Hamming distance exactly t from the query key.

Shell realization rule (shared with the compiled backend):
  * direct-addressed tables enumerate the C(s, t) flip masks;
  * sorted-key tables enumerate while C(s, t) <= #distinct keys, otherwise
    they switch (once per query) to scanning the distinct-key column, which
    yields identical candidate sets at bounded cost.
"""

from __future__ import annotations

from itertools import combinations

import numpy as np

BACKEND = "python"

_mask_cache: dict[tuple[int, int], np.ndarray] = {}
_bigmask_cache: dict[tuple[int, int], list[int]] = {}


def comb_capped(n: int, r: int, cap: int) -> int:
    """C(n, r), except any value exceeding ``cap`` returns cap + 1."""
    if r < 0 or r > n:
        return 0
    r = min(r, n - r)
    c = 1
    for i in range(r):
        c = c * (n - i) // (i + 1)
        if c > cap:
            return cap + 1
    return c


def shell_masks_u64(s: int, t: int) -> np.ndarray:
    key = (s, t)
    masks = _mask_cache.get(key)
    if masks is None:
        masks = np.array(
            [sum(1 << p for p in comb) for comb in combinations(range(s), t)],
            dtype=np.uint64,
        )
        _mask_cache[key] = masks
    return masks


def shell_masks_big(s: int, t: int) -> list[int]:
    key = (s, t)
    masks = _bigmask_cache.get(key)
    if masks is None:
        masks = [sum(1 << p for p in comb) for comb in combinations(range(s), t)]
        _bigmask_cache[key] = masks
    return masks


def popcount_rows(words: np.ndarray) -> np.ndarray:
    return np.bitwise_count(words).sum(axis=1, dtype=np.int32)


def hamming_one_to_many(q_words: np.ndarray, bank_words: np.ndarray) -> np.ndarray:
    return popcount_rows(bank_words ^ q_words[None, :])


def linear_scan_radius(q_words: np.ndarray, bank_words: np.ndarray, k: int):
    dists = hamming_one_to_many(q_words, bank_words)
    ids = np.flatnonzero(dists <= k).astype(np.int64)
    return ids, dists[ids]


def linear_scan_knn(q_words: np.ndarray, bank_words: np.ndarray, k_nn: int):
    dists = hamming_one_to_many(q_words, bank_words)
    order = np.argsort(dists, kind="stable")[:k_nn].astype(np.int64)
    return order, dists[order]


def _gather_buckets(ids: np.ndarray, starts: np.ndarray, ends: np.ndarray) -> np.ndarray:
    lens = ends - starts
    total = int(lens.sum())
    if total == 0:
        return np.empty(0, dtype=np.int32)
    base = np.cumsum(lens) - lens
    pos = np.repeat(starts - base, lens) + np.arange(total, dtype=np.int64)
    return ids[pos]


class _QueryState:
    """Per-query, per-table scan cache (distances from the query key to
    every distinct key; filled on the first scan-mode shell)."""

    __slots__ = ("dk",)

    def __init__(self):
        self.dk = None


def _probe_shell(table, state: _QueryState, qkey, t: int, stats: dict) -> np.ndarray:
    """Raised candidate ids for the given table shell (with repeats)."""
    if table.kind == "direct":
        masks = shell_masks_u64(table.s, t)
        stats["buckets_probed"] += len(masks)
        keys = (np.uint64(qkey) ^ masks).astype(np.int64)
        return _gather_buckets(table.ids, table.offsets[keys], table.offsets[keys + 1])

    if table.kind == "sorted":
        nk = len(table.keys)
        if state.dk is None and comb_capped(table.s, t, nk >> 3) > nk >> 3:
            state.dk = np.bitwise_count(table.keys ^ np.uint64(qkey)).astype(np.int32)
            stats["buckets_probed"] += nk
        if state.dk is not None:
            sel = np.flatnonzero(state.dk == t)
            return _gather_buckets(table.ids, table.offsets[sel], table.offsets[sel + 1])
        masks = shell_masks_u64(table.s, t)
        stats["buckets_probed"] += len(masks)
        probes = np.uint64(qkey) ^ masks
        pos = np.searchsorted(table.keys, probes)
        pos = np.minimum(pos, nk - 1)
        sel = pos[table.keys[pos] == probes]
        return _gather_buckets(table.ids, table.offsets[sel], table.offsets[sel + 1])

    # bigkey: keys wider than 64 bits, held as Python ints.
    nk = len(table.keys)
    qk = int(qkey)
    if state.dk is None and comb_capped(table.s, t, nk >> 3) > nk >> 3:
        state.dk = np.array([(int(x) ^ qk).bit_count() for x in table.keys], dtype=np.int32)
        stats["buckets_probed"] += nk
    if state.dk is not None:
        sel = np.flatnonzero(state.dk == t)
    else:
        masks = shell_masks_big(table.s, t)
        stats["buckets_probed"] += len(masks)
        hits = [table.key_lookup.get(qk ^ mask, -1) for mask in masks]
        sel = np.array([h for h in hits if h >= 0], dtype=np.int64)
    if len(sel) == 0:
        return np.empty(0, dtype=np.int32)
    return _gather_buckets(table.ids, table.offsets[sel], table.offsets[sel + 1])


class _Collector:
    """Deduplicates raised candidates and verifies full distances once."""

    def __init__(self, bank_words, q_words, nbits, stats):
        self.bank = bank_words
        self.q = q_words
        self.seen = np.zeros(bank_words.shape[0], dtype=bool)
        self.ids: list[np.ndarray] = []
        self.dists: list[np.ndarray] = []
        self.dist_count = np.zeros(nbits + 1, dtype=np.int64)
        self.stats = stats

    def absorb(self, cand: np.ndarray) -> None:
        self.stats["candidates_raised"] += int(cand.size)
        if cand.size == 0:
            return
        fresh = cand[~self.seen[cand]]
        if fresh.size == 0:
            return
        fresh = np.unique(fresh)
        self.seen[fresh] = True
        d = hamming_one_to_many(self.q, self.bank[fresh])
        self.stats["candidates_unique"] += int(fresh.size)
        self.stats["candidates_verified"] += int(fresh.size)
        self.ids.append(fresh.astype(np.int64))
        self.dists.append(d)
        self.dist_count += np.bincount(d, minlength=self.dist_count.size)

    def collected(self):
        if not self.ids:
            return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int32)
        return np.concatenate(self.ids), np.concatenate(self.dists)


def _new_stats() -> dict:
    return {
        "buckets_probed": 0,
        "candidates_raised": 0,
        "candidates_unique": 0,
        "candidates_verified": 0,
        "survivors": 0,
    }


def mih_radius_query(bank_words, nbits, tables, qkeys, schedule, k, q_words):
    """All ids within full Hamming distance <= k of the query."""
    stats = _new_stats()
    coll = _Collector(bank_words, q_words, nbits, stats)
    states = [_QueryState() for _ in tables]
    for j, table in enumerate(tables):
        rj = int(schedule[j])
        if rj < 0:
            continue
        for t in range(0, min(rj, table.s) + 1):
            coll.absorb(_probe_shell(table, states[j], qkeys[j], t, stats))
    ids, dists = coll.collected()
    keep = dists <= k
    ids, dists = ids[keep], dists[keep]
    order = np.argsort(ids)
    ids, dists = ids[order], dists[order]
    stats["survivors"] = int(ids.size)
    return ids, dists, stats


def mih_knn_query(bank_words, nbits, tables, qkeys, k_nn, q_words):
    """Exact k-NN by growing the full radius level by level.

    Level k bumps table (k mod m) to shell radius k // m; after completing
    level k every id within distance k has been raised, so the search stops
    once k_nn verified ids sit within distance k.
    """
    m = len(tables)
    stats = _new_stats()
    coll = _Collector(bank_words, q_words, nbits, stats)
    states = [_QueryState() for _ in tables]
    k_star = nbits
    level = 0
    max_level = m * (nbits + 2) + nbits + 1
    while True:
        j = level % m
        t = level // m
        if t <= tables[j].s:
            coll.absorb(_probe_shell(tables[j], states[j], qkeys[j], t, stats))
        if int(coll.dist_count[: min(level, nbits) + 1].sum()) >= k_nn:
            k_star = min(level, nbits)
            break
        level += 1
        if level > max_level:
            raise AssertionError("k-NN search failed to terminate")
    ids, dists = coll.collected()
    keep = dists <= k_star
    ids, dists = ids[keep], dists[keep]
    stats["survivors"] = int(ids.size)
    order = np.lexsort((ids, dists))[:k_nn]
    return ids[order], dists[order], k_star, stats
