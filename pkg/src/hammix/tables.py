"""Table-key construction: block-wise multi-branch keys and the contiguous
split used as its ablation baseline.

Both strategies partition the full concatenated code into m disjoint keys
that jointly cover every bit exactly once, so per-key Hamming distances sum
to the full distance. When a length is not divisible, longer pieces come
first (lengths differ by at most one bit).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .codes import BinaryCode, SubCode, concat_codes, extract_segments_single

STRATEGIES = ("blockwise", "contiguous")


def split_lengths(total: int, parts: int) -> list[int]:
    """Split ``total`` into ``parts`` near-equal lengths, long ones first."""
    if parts < 1 or parts > total:
        raise ValueError(f"cannot split {total} bits into {parts} parts")
    base, rem = divmod(total, parts)
    return [base + 1] * rem + [base] * (parts - rem)


@dataclass(frozen=True)
class KeyLayout:
    """Bit-origin assignment of the m table keys over the full code.

    ``segments[j]`` lists (start, length) ranges of the concatenated code
    [branch 0; branch 1; ...] that make up key j, in key-bit order.
    """

    strategy: str
    n_branches: int
    branch_bits: int
    n_tables: int
    segments: tuple[tuple[tuple[int, int], ...], ...]

    @property
    def total_bits(self) -> int:
        return self.n_branches * self.branch_bits

    @property
    def key_lengths(self) -> tuple[int, ...]:
        return tuple(sum(ln for _, ln in segs) for segs in self.segments)

    @staticmethod
    def build(strategy: str, n_branches: int, branch_bits: int, n_tables: int) -> "KeyLayout":
        if strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")
        B, r, m = n_branches, branch_bits, n_tables
        if B < 1 or r < 1:
            raise ValueError("need at least one branch and one bit per branch")
        if strategy == "blockwise":
            if not 1 <= m <= r:
                raise ValueError(f"blockwise needs 1 <= m <= r, got m={m}, r={r}")
            block_lens = split_lengths(r, m)
            offs = [0]
            for ln in block_lens[:-1]:
                offs.append(offs[-1] + ln)
            segments = tuple(
                tuple((beta * r + offs[j], block_lens[j]) for beta in range(B))
                for j in range(m)
            )
        else:
            if not 1 <= m <= B * r:
                raise ValueError(f"contiguous needs 1 <= m <= B*r, got m={m}, B*r={B * r}")
            lens = split_lengths(B * r, m)
            segments = []
            pos = 0
            for ln in lens:
                segments.append(((pos, ln),))
                pos += ln
            segments = tuple(segments)
        return KeyLayout(strategy, B, r, m, segments)


@dataclass(frozen=True)
class BranchCodes:
    """Per-branch binary codes of one sample (all branches equal length)."""

    branches: tuple[BinaryCode, ...]

    def __post_init__(self):
        if not self.branches:
            raise ValueError("need at least one branch")
        r = self.branches[0].nbits
        if any(b.nbits != r for b in self.branches):
            raise ValueError("all branch codes must have equal length")

    @property
    def n_branches(self) -> int:
        return len(self.branches)

    @property
    def branch_bits(self) -> int:
        return self.branches[0].nbits

    def full_code(self) -> BinaryCode:
        return concat_codes(self.branches)


@dataclass(frozen=True)
class TableKeySet:
    """Ordered keys for tables 1..m."""

    keys: tuple[SubCode, ...]

    @property
    def n_tables(self) -> int:
        return len(self.keys)


def keys_from_layout(code: BinaryCode, layout: KeyLayout) -> TableKeySet:
    if code.nbits != layout.total_bits:
        raise ValueError(f"code has {code.nbits} bits, layout covers {layout.total_bits}")
    keys = []
    for segs, ln in zip(layout.segments, layout.key_lengths):
        keys.append(SubCode.from_int(extract_segments_single(code, segs), ln))
    return TableKeySet(tuple(keys))


def blockwise_keys(bc: BranchCodes, m: int) -> TableKeySet:
    """Key j concatenates block j of every branch: [d_j; g_j; h_j; ...]."""
    layout = KeyLayout.build("blockwise", bc.n_branches, bc.branch_bits, m)
    return keys_from_layout(bc.full_code(), layout)


def contiguous_keys(bc: BranchCodes, m: int) -> TableKeySet:
    """Split the concatenated code [d; g; h; ...] into m consecutive keys."""
    layout = KeyLayout.build("contiguous", bc.n_branches, bc.branch_bits, m)
    return keys_from_layout(bc.full_code(), layout)


def key_column_indices(layout: KeyLayout) -> list[list[int]]:
    """Bit positions of the full code feeding each key, in key-bit order.

    Useful for applying the layout to relaxed (real-valued) codes.
    """
    cols: list[list[int]] = []
    for segs in layout.segments:
        idx: list[int] = []
        for start, ln in segs:
            idx.extend(range(start, start + ln))
        cols.append(idx)
    return cols
