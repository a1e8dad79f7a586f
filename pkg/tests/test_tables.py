import numpy as np
import pytest

from hammix.codes import BinaryCode, hamming_distance, pack_bits_rows, unpack_bits
from hammix.tables import (
    BranchCodes,
    KeyLayout,
    blockwise_keys,
    contiguous_keys,
    key_column_indices,
    split_lengths,
)


def make_branches(rng, B, r) -> BranchCodes:
    return BranchCodes(
        tuple(
            BinaryCode(pack_bits_rows(rng.integers(0, 2, r).astype(np.uint8)[None, :])[0], r)
            for _ in range(B)
        )
    )


def labeled_branches(B, r):
    """Branch codes whose bit b of branch i is (i, b) recoverable: bit value
    set iff (i * r + b) is odd -- handy for position bookkeeping checks."""
    branches = []
    for i in range(B):
        bits = np.array([(i * r + b) % 2 for b in range(r)], dtype=np.uint8)
        branches.append(BinaryCode(pack_bits_rows(bits[None, :])[0], r))
    return BranchCodes(tuple(branches))


def test_split_lengths_long_first():
    assert split_lengths(6, 3) == [2, 2, 2]
    assert split_lengths(5, 2) == [3, 2]
    assert split_lengths(7, 3) == [3, 2, 2]
    with pytest.raises(ValueError):
        split_lengths(3, 4)


def test_blockwise_worked_example_r6_m3():
    # key 1 concatenates the first two bits of every branch
    rng = np.random.default_rng(0)
    bc = make_branches(rng, 3, 6)
    keys = blockwise_keys(bc, 3)
    d, g, h = (unpack_bits(b) for b in bc.branches)
    expected_first = np.concatenate([d[0:2], g[0:2], h[0:2]])
    assert np.array_equal(unpack_bits(keys.keys[0]), expected_first)
    expected_last = np.concatenate([d[4:6], g[4:6], h[4:6]])
    assert np.array_equal(unpack_bits(keys.keys[2]), expected_last)


def test_blockwise_m1_is_full_concatenation():
    rng = np.random.default_rng(1)
    bc = make_branches(rng, 3, 8)
    keys = blockwise_keys(bc, 1)
    assert keys.n_tables == 1
    assert keys.keys[0].to_bitstring() == bc.full_code().to_bitstring()


def test_blockwise_remainder_lengths_r5_m2():
    rng = np.random.default_rng(2)
    bc = make_branches(rng, 3, 5)
    keys = blockwise_keys(bc, 2)
    assert [k.nbits for k in keys.keys] == [9, 6]
    # per-branch blocks are (3, 2), long first
    d = unpack_bits(bc.branches[0])
    g = unpack_bits(bc.branches[1])
    h = unpack_bits(bc.branches[2])
    assert np.array_equal(unpack_bits(keys.keys[0]), np.concatenate([d[:3], g[:3], h[:3]]))
    assert np.array_equal(unpack_bits(keys.keys[1]), np.concatenate([d[3:], g[3:], h[3:]]))


def test_contiguous_aligned_keys_are_branches():
    rng = np.random.default_rng(3)
    bc = make_branches(rng, 3, 4)
    keys = contiguous_keys(bc, 3)
    assert [k.nbits for k in keys.keys] == [4, 4, 4]
    for key, branch in zip(keys.keys, bc.branches):
        assert key.to_bitstring() == branch.to_bitstring()


def test_contiguous_m1_matches_blockwise_m1():
    rng = np.random.default_rng(4)
    bc = make_branches(rng, 3, 7)
    assert contiguous_keys(bc, 1).keys[0] == blockwise_keys(bc, 1).keys[0]


def test_contiguous_split_example_B3_r2_m2():
    bc = labeled_branches(3, 2)
    keys = contiguous_keys(bc, 2)
    d, g, h = (unpack_bits(b) for b in bc.branches)
    assert np.array_equal(unpack_bits(keys.keys[0]), np.array([d[0], d[1], g[0]]))
    assert np.array_equal(unpack_bits(keys.keys[1]), np.array([g[1], h[0], h[1]]))


@pytest.mark.parametrize("strategy", ["blockwise", "contiguous"])
@pytest.mark.parametrize("B,r,m", [(3, 8, 4), (3, 5, 2), (2, 9, 3), (1, 12, 5), (4, 6, 6)])
def test_keys_disjointly_cover_all_bits(strategy, B, r, m):
    layout = KeyLayout.build(strategy, B, r, m)
    cols = key_column_indices(layout)
    flat = [c for key_cols in cols for c in key_cols]
    assert sorted(flat) == list(range(B * r))
    assert layout.key_lengths == tuple(len(c) for c in cols)


@pytest.mark.parametrize("strategy", ["blockwise", "contiguous"])
def test_key_distances_sum_to_full_distance(strategy):
    rng = np.random.default_rng(5)
    fn = blockwise_keys if strategy == "blockwise" else contiguous_keys
    for _ in range(50):
        B = int(rng.integers(1, 5))
        r = int(rng.integers(2, 16))
        m = int(rng.integers(1, (r if strategy == "blockwise" else B * r) + 1))
        x, q = make_branches(rng, B, r), make_branches(rng, B, r)
        kx, kq = fn(x, m), fn(q, m)
        total = sum(hamming_distance(a, b) for a, b in zip(kx.keys, kq.keys))
        assert total == hamming_distance(x.full_code(), q.full_code())


def test_single_branch_strategies_agree():
    rng = np.random.default_rng(6)
    bc = make_branches(rng, 1, 16)
    for m in (1, 2, 5, 16):
        kb = blockwise_keys(bc, m)
        kc = contiguous_keys(bc, m)
        assert all(a == b for a, b in zip(kb.keys, kc.keys))


def test_invalid_m_errors():
    rng = np.random.default_rng(7)
    bc = make_branches(rng, 3, 4)
    with pytest.raises(ValueError):
        blockwise_keys(bc, 5)  # m > r
    with pytest.raises(ValueError):
        contiguous_keys(bc, 13)  # m > B*r
    with pytest.raises(ValueError):
        blockwise_keys(bc, 0)


def test_branches_must_share_length():
    rng = np.random.default_rng(8)
    a = make_branches(rng, 1, 4).branches[0]
    b = make_branches(rng, 1, 5).branches[0]
    with pytest.raises(ValueError):
        BranchCodes((a, b))
