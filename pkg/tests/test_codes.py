import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hammix.codes import (
    BinaryCode,
    CodeBank,
    SubCode,
    concat_codes,
    extract_substring,
    hamming_distance,
    pack,
    pack_bits_rows,
    unpack,
    unpack_bits,
    unpack_bits_rows,
)


def xor_popcount_oracle(a: BinaryCode, b: BinaryCode) -> int:
    """Per-bit comparison reference, independent of the packed arithmetic."""
    return int(np.sum(unpack_bits(a) != unpack_bits(b)))


def random_code(rng, nbits) -> BinaryCode:
    bits = rng.integers(0, 2, size=nbits).astype(np.uint8)
    return BinaryCode(pack_bits_rows(bits[None, :])[0], nbits)


def test_hamming_identity():
    rng = np.random.default_rng(0)
    for nbits in (1, 7, 64, 96, 130):
        c = random_code(rng, nbits)
        assert hamming_distance(c, c) == 0


def test_hamming_complement_64():
    a = BinaryCode.from_bitstring("0" * 64)
    b = BinaryCode.from_bitstring("1" * 64)
    assert hamming_distance(a, b) == 64


def test_hamming_worked_example():
    a = BinaryCode.from_bitstring("10110000")
    b = BinaryCode.from_bitstring("00111100")
    assert xor_popcount_oracle(a, b) == 3
    assert hamming_distance(a, b) == 3


def test_hamming_matches_oracle_random():
    rng = np.random.default_rng(1)
    for _ in range(200):
        nbits = int(rng.integers(1, 200))
        a, b = random_code(rng, nbits), random_code(rng, nbits)
        assert hamming_distance(a, b) == xor_popcount_oracle(a, b)


def test_hamming_equals_pm1_inner_product_identity():
    rng = np.random.default_rng(2)
    for _ in range(50):
        nbits = int(rng.integers(1, 150))
        a, b = random_code(rng, nbits), random_code(rng, nbits)
        ua, ub = unpack(a).astype(int), unpack(b).astype(int)
        assert hamming_distance(a, b) == (nbits - int(ua @ ub)) // 2


def test_hamming_length_mismatch_errors():
    rng = np.random.default_rng(3)
    with pytest.raises(ValueError):
        hamming_distance(random_code(rng, 8), random_code(rng, 9))


@given(st.integers(1, 160), st.randoms(use_true_random=False))
@settings(max_examples=60, deadline=None)
def test_hamming_symmetry_and_bounds(nbits, pyrng):
    rng = np.random.default_rng(pyrng.getrandbits(32))
    a, b = random_code(rng, nbits), random_code(rng, nbits)
    d = hamming_distance(a, b)
    assert 0 <= d <= nbits
    assert d == hamming_distance(b, a)
    assert (d == 0) == (a == b)


@given(st.integers(1, 120), st.randoms(use_true_random=False))
@settings(max_examples=60, deadline=None)
def test_hamming_triangle_inequality(nbits, pyrng):
    rng = np.random.default_rng(pyrng.getrandbits(32))
    a, b, c = (random_code(rng, nbits) for _ in range(3))
    assert hamming_distance(a, c) <= hamming_distance(a, b) + hamming_distance(b, c)


def test_pack_examples():
    all_plus = pack([1] * 70)
    assert all_plus.to_bitstring() == "1" * 70
    c = pack([-1, +1, -1, +1])
    assert c.to_bitstring() == "0101"
    assert c.to_int() == 0b1010  # bit 1 and bit 3 set


def test_pack_rejects_bad_entries():
    with pytest.raises(ValueError):
        pack([1, 0, -1])
    with pytest.raises(ValueError):
        pack([])


def test_pack_unpack_round_trip():
    rng = np.random.default_rng(4)
    for _ in range(100):
        nbits = int(rng.integers(1, 200))
        c = random_code(rng, nbits)
        assert pack(unpack(c)) == c
        v = rng.choice((-1, 1), size=nbits)
        assert np.array_equal(unpack(pack(v)), v)


def test_padding_must_be_zero():
    words = np.array([0xFFFF_FFFF_FFFF_FFFF], dtype=np.uint64)
    with pytest.raises(ValueError):
        BinaryCode(words, 8)
    # rows with dirty padding rejected by banks as well
    with pytest.raises(ValueError):
        CodeBank(words[None, :], 8)


def test_extract_substring_full_range_identity():
    rng = np.random.default_rng(5)
    c = random_code(rng, 96)
    sub = extract_substring(c, 0, 96)
    assert sub.to_bitstring() == c.to_bitstring()


def test_extract_substring_worked_example():
    c = BinaryCode.from_bitstring("10110011")
    sub = extract_substring(c, 4, 4)
    assert sub.to_bitstring() == "0011"
    assert isinstance(sub, SubCode)


def test_extract_substring_matches_bitslice_oracle():
    rng = np.random.default_rng(6)
    for _ in range(100):
        nbits = int(rng.integers(2, 180))
        c = random_code(rng, nbits)
        start = int(rng.integers(0, nbits))
        length = int(rng.integers(1, nbits - start + 1))
        sub = extract_substring(c, start, length)
        assert np.array_equal(unpack_bits(sub), unpack_bits(c)[start:start + length])


def test_extract_substring_out_of_range():
    c = BinaryCode.from_bitstring("1010")
    with pytest.raises(ValueError):
        extract_substring(c, 2, 3)
    with pytest.raises(ValueError):
        extract_substring(c, -1, 2)


def test_disjoint_substrings_reassemble_and_sum_distances():
    rng = np.random.default_rng(7)
    for nbits, m in ((96, 4), (90, 5), (64, 3)):
        a, b = random_code(rng, nbits), random_code(rng, nbits)
        base, rem = divmod(nbits, m)
        lens = [base + 1] * rem + [base] * (m - rem)
        subs_a, subs_b = [], []
        pos = 0
        for ln in lens:
            subs_a.append(extract_substring(a, pos, ln))
            subs_b.append(extract_substring(b, pos, ln))
            pos += ln
        assert concat_codes(subs_a) == BinaryCode(a.words.copy(), nbits)
        total = sum(hamming_distance(x, y) for x, y in zip(subs_a, subs_b))
        assert total == hamming_distance(a, b)


def test_substring_value_normalization():
    # equal content hashes equally regardless of origin
    c = BinaryCode.from_bitstring("11011101")
    s1 = extract_substring(c, 0, 3)
    s2 = extract_substring(c, 4, 3)
    assert s1 == s2 and hash(s1) == hash(s2)


def test_pack_rows_round_trip_bulk():
    rng = np.random.default_rng(8)
    bits = rng.integers(0, 2, size=(40, 130)).astype(np.uint8)
    words = pack_bits_rows(bits)
    assert np.array_equal(unpack_bits_rows(words, 130), bits)


def test_bank_codes_file_round_trip(tmp_path):
    rng = np.random.default_rng(9)
    bits = rng.integers(0, 2, size=(25, 96)).astype(np.uint8)
    bank = CodeBank(pack_bits_rows(bits), 96)
    path = tmp_path / "bank.dmih"
    bank.write_codes(path)
    loaded = CodeBank.read_codes(path)
    assert loaded.nbits == 96
    assert np.array_equal(loaded.words, bank.words)
    # writer is deterministic byte for byte
    path2 = tmp_path / "bank2.dmih"
    loaded.write_codes(path2)
    assert path.read_bytes() == path2.read_bytes()


def test_bank_file_header_layout(tmp_path):
    bank = CodeBank(np.array([[3]], dtype=np.uint64), 8)
    path = tmp_path / "one.dmih"
    bank.write_codes(path)
    raw = path.read_bytes()
    assert raw[:4] == b"DMIH"
    assert raw[4] == 1
    assert int.from_bytes(raw[5:9], "little") == 8
    assert int.from_bytes(raw[9:17], "little") == 1
    assert int.from_bytes(raw[17:25], "little") == 3


def test_bank_file_rejects_garbage(tmp_path):
    path = tmp_path / "junk.dmih"
    path.write_bytes(b"NOPE" + b"\x00" * 20)
    with pytest.raises(ValueError):
        CodeBank.read_codes(path)
