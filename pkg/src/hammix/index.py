"""Multi-index hash tables over a code bank, with exact radius and k-NN
search by substring-table probing plus full-distance verification.

Search follows the radius decomposition: for a full radius k with
k' = floor(k/m) and a = k - m*k', the first a+1 tables are probed at
substring radius k' and the rest at k' - 1; every id within distance k is
guaranteed to surface in at least one probed bucket, and survivors are
confirmed against the full codes.
"""

from __future__ import annotations

import struct
import time
from dataclasses import dataclass
from itertools import combinations
from typing import Iterator, Sequence

import numpy as np

from . import kernels
from .codes import (
    BinaryCode,
    CodeBank,
    SubCode,
    extract_segments_column,
    extract_segments_single,
    n_words,
)
from .tables import STRATEGIES, KeyLayout

INDEX_MAGIC = b"DMIX"
INDEX_VERSION = 1
_STRATEGY_TAG = {"blockwise": 0, "contiguous": 1}
_TAG_STRATEGY = {v: k for k, v in _STRATEGY_TAG.items()}


@dataclass(frozen=True)
class RadiusSchedule:
    """Per-table probe radii realizing a full-code radius k.

    An entry of -1 marks a table that is not searched at this k.
    """

    per_table_radius: tuple[int, ...]
    k: int
    k_prime: int
    a: int


def radius_schedule(k: int, m: int) -> RadiusSchedule:
    if k < 0:
        raise ValueError("radius must be >= 0")
    if m < 1:
        raise ValueError("need at least one table")
    k_prime = k // m
    a = k - m * k_prime
    radii = (k_prime,) * (a + 1) + (k_prime - 1,) * (m - a - 1)
    return RadiusSchedule(radii, k, k_prime, a)


@dataclass
class SearchStats:
    """Per-query instrumentation for lookup-cost analysis."""

    buckets_probed: int = 0
    candidates_raised: int = 0
    candidates_unique: int = 0
    candidates_verified: int = 0
    survivors: int = 0
    wall_time: float = 0.0

    @classmethod
    def from_dict(cls, d: dict, wall_time: float) -> "SearchStats":
        return cls(
            buckets_probed=d["buckets_probed"],
            candidates_raised=d["candidates_raised"],
            candidates_unique=d["candidates_unique"],
            candidates_verified=d["candidates_verified"],
            survivors=d["survivors"],
            wall_time=wall_time,
        )


def enumerate_ball(key: SubCode, radius: int) -> Iterator[SubCode]:
    """Every bit pattern of key's length within Hamming distance <= radius,
    each exactly once. Negative radius yields nothing; radius past the key
    length clamps to the full cube."""
    if radius < 0:
        return
    s = key.nbits
    base = key.to_int()
    for t in range(0, min(radius, s) + 1):
        for comb in combinations(range(s), t):
            mask = 0
            for p in comb:
                mask |= 1 << p
            yield SubCode.from_int(base ^ mask, s)


class _Table:
    """One substring hash table in CSR form.

    kind 'direct': offsets indexed by raw key value (small key spaces);
    kind 'sorted': distinct keys kept sorted for binary search / scanning;
    kind 'bigkey': like 'sorted' but keys wider than 64 bits (Python ints).
    """

    __slots__ = ("kind", "s", "offsets", "keys", "ids", "key_lookup")

    def __init__(self, kind, s, offsets, keys, ids, key_lookup=None):
        self.kind = kind
        self.s = s
        self.offsets = offsets
        self.keys = keys
        self.ids = ids
        self.key_lookup = key_lookup

    @property
    def n_keys(self) -> int:
        return len(self.offsets) - 1 if self.kind == "direct" else len(self.keys)


def _pick_kind(s: int, n: int) -> str:
    if s <= 16:
        return "direct"
    if s <= 26 and (1 << s) <= 4 * n:
        return "direct"
    return "sorted" if s <= 64 else "bigkey"


def _build_table(col: np.ndarray, s: int, n: int) -> _Table:
    kind = _pick_kind(s, n)
    order = np.argsort(col, kind="stable")
    ids = order.astype(np.int32)
    if kind == "direct":
        counts = np.bincount(col.astype(np.int64), minlength=1 << s)
        offsets = np.zeros((1 << s) + 1, dtype=np.int64)
        np.cumsum(counts, out=offsets[1:])
        return _Table(kind, s, offsets, None, ids)
    uniq, counts = np.unique(col, return_counts=True)
    offsets = np.zeros(len(uniq) + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    if kind == "sorted":
        return _Table(kind, s, offsets, np.ascontiguousarray(uniq, dtype=np.uint64), ids)
    lookup = {int(v): i for i, v in enumerate(uniq)}
    return _Table(kind, s, offsets, uniq, ids, lookup)


class MihIndex:
    """m substring hash tables plus the full bank for verification.

    Built once, then immutable; queries are safe to run concurrently.
    """

    def __init__(self, bank: CodeBank, layout: KeyLayout, tables: list[_Table]):
        self.bank = bank
        self.layout = layout
        self.tables = tables
        self._has_bigkey = any(t.kind == "bigkey" for t in tables)

    @property
    def m(self) -> int:
        return self.layout.n_tables

    @property
    def strategy(self) -> str:
        return self.layout.strategy

    @classmethod
    def build(
        cls,
        bank: CodeBank,
        m: int,
        strategy: str = "blockwise",
        n_branches: int = 3,
    ) -> "MihIndex":
        if len(bank) == 0:
            raise ValueError("cannot index an empty bank")
        if strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {strategy!r}")
        if bank.nbits % n_branches != 0:
            raise ValueError(
                f"code length {bank.nbits} is not divisible into {n_branches} branches"
            )
        layout = KeyLayout.build(strategy, n_branches, bank.nbits // n_branches, m)
        tables = []
        for segs, s in zip(layout.segments, layout.key_lengths):
            col = extract_segments_column(bank.words, segs)
            tables.append(_build_table(col, s, len(bank)))
        return cls(bank, layout, tables)

    def _kernel(self):
        if self._has_bigkey:
            return kernels.get_backend("py")
        return kernels.get_backend()

    def _query_keys(self, q: BinaryCode) -> list[int]:
        if q.nbits != self.bank.nbits:
            raise ValueError(f"query has {q.nbits} bits, bank holds {self.bank.nbits}")
        return [extract_segments_single(q, segs) for segs in self.layout.segments]

    def r_neighbor_search(self, q: BinaryCode, k: int) -> tuple[np.ndarray, SearchStats]:
        """Exactly the ids whose code lies within Hamming distance <= k of q,
        ascending."""
        qkeys = self._query_keys(q)
        sched = radius_schedule(int(k), self.m).per_table_radius
        kern = self._kernel()
        t0 = time.perf_counter()
        ids, _dists, stats = kern.mih_radius_query(
            self.bank.words, self.bank.nbits, self.tables, qkeys, sched, int(k), q.words
        )
        wall = time.perf_counter() - t0
        return ids, SearchStats.from_dict(stats, wall)

    def knn_search(self, q: BinaryCode, k_nn: int) -> tuple[np.ndarray, np.ndarray, SearchStats]:
        """The k_nn nearest ids by Hamming distance, ties broken by ascending
        id; returns (ids, distances, stats)."""
        if not 1 <= k_nn <= len(self.bank):
            raise ValueError(f"k_nn must be in [1, {len(self.bank)}], got {k_nn}")
        qkeys = self._query_keys(q)
        kern = self._kernel()
        t0 = time.perf_counter()
        ids, dists, _k_star, stats = kern.mih_knn_query(
            self.bank.words, self.bank.nbits, self.tables, qkeys, int(k_nn), q.words
        )
        wall = time.perf_counter() - t0
        return ids, dists, SearchStats.from_dict(stats, wall)

    # -- persistence ------------------------------------------------------

    def save(self, path) -> None:
        """Snapshot the table contents (bank travels separately)."""
        lay = self.layout
        with open(path, "wb") as fh:
            fh.write(INDEX_MAGIC)
            fh.write(struct.pack("<B", INDEX_VERSION))
            fh.write(struct.pack("<I", lay.n_tables))
            fh.write(struct.pack("<I", lay.total_bits))
            fh.write(struct.pack("<B", _STRATEGY_TAG[lay.strategy]))
            fh.write(struct.pack("<I", lay.n_branches))
            fh.write(struct.pack("<I", lay.branch_bits))
            fh.write(struct.pack("<Q", len(self.bank)))
            for table in self.tables:
                fh.write(struct.pack("<I", table.s))
                kw = n_words(table.s)
                if table.kind == "direct":
                    nonempty = np.flatnonzero(np.diff(table.offsets)).astype(np.int64)
                    fh.write(struct.pack("<Q", len(nonempty)))
                    for kv in nonempty:
                        self._write_record(
                            fh, int(kv), kw,
                            table.ids[table.offsets[kv]:table.offsets[kv + 1]],
                        )
                else:
                    fh.write(struct.pack("<Q", table.n_keys))
                    for i in range(table.n_keys):
                        self._write_record(
                            fh, int(table.keys[i]), kw,
                            table.ids[table.offsets[i]:table.offsets[i + 1]],
                        )

    @staticmethod
    def _write_record(fh, key_value: int, key_words: int, ids: np.ndarray) -> None:
        fh.write(key_value.to_bytes(key_words * 8, "little"))
        fh.write(struct.pack("<Q", len(ids)))
        fh.write(ids.astype("<u4").tobytes())

    @classmethod
    def load(cls, path, bank: CodeBank) -> "MihIndex":
        with open(path, "rb") as fh:
            if fh.read(4) != INDEX_MAGIC:
                raise ValueError(f"{path}: not an index snapshot")
            (version,) = struct.unpack("<B", fh.read(1))
            if version != INDEX_VERSION:
                raise ValueError(f"{path}: unsupported index version {version}")
            m, total_bits = struct.unpack("<II", fh.read(8))
            (tag,) = struct.unpack("<B", fh.read(1))
            B, r = struct.unpack("<II", fh.read(8))
            (n,) = struct.unpack("<Q", fh.read(8))
            if total_bits != bank.nbits or n != len(bank):
                raise ValueError(
                    f"{path}: snapshot is for a bank of {n} codes x {total_bits} bits, "
                    f"got {len(bank)} x {bank.nbits}"
                )
            layout = KeyLayout.build(_TAG_STRATEGY[tag], B, r, m)
            tables = []
            for s in layout.key_lengths:
                (s_stored,) = struct.unpack("<I", fh.read(4))
                if s_stored != s:
                    raise ValueError(f"{path}: key length mismatch in snapshot")
                (nk,) = struct.unpack("<Q", fh.read(8))
                kw = n_words(s)
                keys = []
                bucket_ids = []
                for _ in range(nk):
                    kv = int.from_bytes(fh.read(kw * 8), "little")
                    (cnt,) = struct.unpack("<Q", fh.read(8))
                    ids = np.frombuffer(fh.read(cnt * 4), dtype="<u4").astype(np.int32)
                    keys.append(kv)
                    bucket_ids.append(ids)
                tables.append(cls._table_from_records(s, n, keys, bucket_ids))
        idx = cls(bank, layout, tables)
        idx._validate_contents()
        return idx

    @staticmethod
    def _table_from_records(s, n, keys, bucket_ids) -> _Table:
        kind = _pick_kind(s, n)
        all_ids = (
            np.concatenate(bucket_ids) if bucket_ids else np.empty(0, dtype=np.int32)
        )
        counts = np.array([len(b) for b in bucket_ids], dtype=np.int64)
        if kind == "direct":
            full = np.zeros(1 << s, dtype=np.int64)
            full[np.array(keys, dtype=np.int64)] = counts
            offsets = np.zeros((1 << s) + 1, dtype=np.int64)
            np.cumsum(full, out=offsets[1:])
            return _Table(kind, s, offsets, None, all_ids)
        offsets = np.zeros(len(keys) + 1, dtype=np.int64)
        np.cumsum(counts, out=offsets[1:])
        if kind == "sorted":
            return _Table(kind, s, offsets, np.array(keys, dtype=np.uint64), all_ids)
        uniq = np.empty(len(keys), dtype=object)
        uniq[:] = keys
        return _Table(kind, s, offsets, uniq, all_ids, {k: i for i, k in enumerate(keys)})

    def _validate_contents(self) -> None:
        n = len(self.bank)
        for j, table in enumerate(self.tables):
            if len(table.ids) != n:
                raise ValueError(f"table {j} does not cover every bank id exactly once")

    # -- oracles ----------------------------------------------------------

    def linear_scan_radius(self, q: BinaryCode, k: int) -> np.ndarray:
        """Brute-force reference: ids within distance <= k by full scan."""
        ids, _ = self._kernel().linear_scan_radius(q.words, self.bank.words, int(k))
        return ids

    def linear_scan_knn(self, q: BinaryCode, k_nn: int) -> tuple[np.ndarray, np.ndarray]:
        """Brute-force reference k-NN ((distance, id) order)."""
        return self._kernel().linear_scan_knn(q.words, self.bank.words, int(k_nn))


def build_index(
    bank: CodeBank, m: int, strategy: str = "blockwise", n_branches: int = 3
) -> MihIndex:
    return MihIndex.build(bank, m, strategy, n_branches)
