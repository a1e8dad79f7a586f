"""Bit-packed binary codes, substring extraction, and exact Hamming distance.

Packing convention (fixed for file interop): little-endian 64-bit words,
bit j of a code lives in word j // 64 at position j % 64. Padding bits past
the code length are always zero so popcounts never see garbage.
"""

from __future__ import annotations

import struct
from typing import Sequence

import numpy as np

WORD_BITS = 64
BANK_MAGIC = b"DMIH"
BANK_VERSION = 1

_ALL_ONES = np.uint64(0xFFFFFFFFFFFFFFFF)


def n_words(nbits: int) -> int:
    """Number of 64-bit words needed to hold ``nbits`` bits."""
    return (nbits + WORD_BITS - 1) // WORD_BITS


def tail_mask(nbits: int) -> np.uint64:
    """Mask of the valid bits in the last storage word."""
    rem = nbits % WORD_BITS
    if rem == 0:
        return _ALL_ONES
    return np.uint64((1 << rem) - 1)


def clear_padding(words: np.ndarray, nbits: int) -> np.ndarray:
    """Zero every bit past ``nbits`` in the last word (in place)."""
    if nbits % WORD_BITS != 0:
        words[..., -1] &= tail_mask(nbits)
    return words


class BinaryCode:
    """An R-bit binary code packed into uint64 words.

    Bit value 1 corresponds to +1 in the {-1,+1} vector view, 0 to -1.
    Instances are immutable value objects: equality and hashing follow the
    bit content.
    """

    __slots__ = ("words", "nbits")

    def __init__(self, words: np.ndarray, nbits: int):
        if nbits < 1:
            raise ValueError("code length must be >= 1")
        words = np.ascontiguousarray(words, dtype=np.uint64)
        if words.ndim != 1 or words.shape[0] != n_words(nbits):
            raise ValueError(
                f"expected {n_words(nbits)} words for {nbits} bits, got shape {words.shape}"
            )
        if nbits % WORD_BITS != 0 and (words[-1] & ~tail_mask(nbits)) != 0:
            raise ValueError("padding bits past the code length must be zero")
        words.setflags(write=False)
        object.__setattr__(self, "words", words)
        object.__setattr__(self, "nbits", nbits)

    def __setattr__(self, name, value):
        raise AttributeError("BinaryCode is immutable")

    def __eq__(self, other) -> bool:
        if not isinstance(other, BinaryCode):
            return NotImplemented
        return self.nbits == other.nbits and bool(np.array_equal(self.words, other.words))

    def __hash__(self) -> int:
        return hash((self.nbits, self.words.tobytes()))

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.to_bitstring()!r})"

    def to_bitstring(self) -> str:
        """Bits in index order (bit 0 first)."""
        return "".join("1" if b else "0" for b in unpack_bits(self))

    @classmethod
    def from_bitstring(cls, bits: str) -> "BinaryCode":
        vals = np.array([int(c) for c in bits], dtype=np.uint8)
        return cls(pack_bits_rows(vals[None, :])[0], len(bits))

    def to_int(self) -> int:
        return int.from_bytes(self.words.tobytes(), "little")

    @classmethod
    def from_int(cls, value: int, nbits: int) -> "BinaryCode":
        if value < 0 or value >> nbits:
            raise ValueError("integer does not fit in the given bit length")
        raw = value.to_bytes(n_words(nbits) * 8, "little")
        return cls(np.frombuffer(raw, dtype="<u8").copy(), nbits)


class SubCode(BinaryCode):
    """A substring of a code, value-normalized so its first bit is bit 0.

    Substrings of equal content compare and hash equal regardless of where
    in the parent code they came from, which is what table keying needs.
    """

    __slots__ = ()


def pack_bits_rows(bits: np.ndarray) -> np.ndarray:
    """Pack rows of {0,1} values into (n, n_words) uint64, bit j -> word j//64."""
    bits = np.asarray(bits, dtype=np.uint8)
    if bits.ndim != 2:
        raise ValueError("expected a 2-d array of bits")
    n, R = bits.shape
    W = n_words(R)
    padded = np.zeros((n, W * WORD_BITS), dtype=np.uint8)
    padded[:, :R] = bits
    # packbits is big-endian within bytes; flip each 8-bit group first.
    chunks = padded.reshape(n, W * 8, 8)[:, :, ::-1]
    as_bytes = np.packbits(chunks.reshape(n, -1), axis=1)
    return as_bytes.view("<u8").reshape(n, W).astype(np.uint64)


def unpack_bits_rows(words: np.ndarray, nbits: int) -> np.ndarray:
    """Inverse of :func:`pack_bits_rows`; returns (n, nbits) uint8 of {0,1}."""
    words = np.asarray(words, dtype=np.uint64)
    if words.ndim != 2:
        raise ValueError("expected a 2-d array of words")
    n = words.shape[0]
    as_bytes = words.astype("<u8").view(np.uint8).reshape(n, -1)
    bits = np.unpackbits(as_bytes, axis=1).reshape(n, -1, 8)[:, :, ::-1]
    return bits.reshape(n, -1)[:, :nbits]


def unpack_bits(code: BinaryCode) -> np.ndarray:
    return unpack_bits_rows(code.words[None, :], code.nbits)[0]


def pack(values: Sequence[int]) -> BinaryCode:
    """Pack a {-1,+1} vector into a BinaryCode (+1 -> bit 1)."""
    arr = np.asarray(values)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError("expected a non-empty 1-d vector")
    if not np.all(np.isin(arr, (-1, 1))):
        raise ValueError("entries must be -1 or +1")
    bits = (arr > 0).astype(np.uint8)
    return BinaryCode(pack_bits_rows(bits[None, :])[0], arr.size)


def unpack(code: BinaryCode) -> np.ndarray:
    """Unpack a BinaryCode to its {-1,+1} vector (bit 1 -> +1)."""
    bits = unpack_bits(code)
    return (bits.astype(np.int8) * 2 - 1).astype(np.int8)


def hamming_distance(a: BinaryCode, b: BinaryCode) -> int:
    """Number of differing bit positions; equals (R - <u,v>) / 2 on the
    {-1,+1} vector views."""
    if a.nbits != b.nbits:
        raise ValueError(f"code length mismatch: {a.nbits} != {b.nbits}")
    return int(np.bitwise_count(a.words ^ b.words).sum())


def extract_substring(code: BinaryCode, start: int, length: int) -> SubCode:
    """Bits [start, start+length) of ``code`` as a normalized SubCode."""
    if length < 1:
        raise ValueError("substring length must be >= 1")
    if start < 0 or start + length > code.nbits:
        raise ValueError(
            f"substring [{start}, {start + length}) out of range for {code.nbits}-bit code"
        )
    value = (code.to_int() >> start) & ((1 << length) - 1)
    return SubCode.from_int(value, length)


def concat_codes(codes: Sequence[BinaryCode]) -> BinaryCode:
    """Concatenate codes in order; bit 0 of the result is bit 0 of codes[0]."""
    if not codes:
        raise ValueError("nothing to concatenate")
    value = 0
    shift = 0
    for c in codes:
        value |= c.to_int() << shift
        shift += c.nbits
    return BinaryCode.from_int(value, shift)


def segment_column(words: np.ndarray, start: int, length: int) -> np.ndarray:
    """Extract one <=64-bit segment from every row of a packed (n, W) array."""
    if length > WORD_BITS:
        raise ValueError("segment longer than 64 bits")
    w0, off = divmod(start, WORD_BITS)
    out = words[:, w0] >> np.uint64(off)
    have = WORD_BITS - off
    if have < length:
        out = out | (words[:, w0 + 1] << np.uint64(have))
    if length < WORD_BITS:
        out = out & np.uint64((1 << length) - 1)
    return out


def extract_segments_column(words: np.ndarray, segments: Sequence[tuple[int, int]]) -> np.ndarray:
    """Concatenate bit segments from every row into one key value per row.

    Returns uint64 when the combined key fits in 64 bits, otherwise an
    object array of Python ints.
    """
    total = sum(ln for _, ln in segments)
    if total <= WORD_BITS:
        acc = np.zeros(words.shape[0], dtype=np.uint64)
        shift = 0
        for start, ln in segments:
            acc |= segment_column(words, start, ln) << np.uint64(shift)
            shift += ln
        return acc
    # Wide keys: assemble per row with Python ints. Rare path (tiny m).
    parts = []
    shift = 0
    for start, ln in segments:
        pos = 0
        while pos < ln:
            chunk = min(WORD_BITS, ln - pos)
            col = segment_column(words, start + pos, chunk)
            parts.append((col, shift + pos))
            pos += chunk
        shift += ln
    out = np.empty(words.shape[0], dtype=object)
    for i in range(words.shape[0]):
        v = 0
        for col, sh in parts:
            v |= int(col[i]) << sh
        out[i] = v
    return out


def extract_segments_single(code: BinaryCode, segments: Sequence[tuple[int, int]]) -> int:
    """Key value for one code under a segment list (same layout as the
    column extractor)."""
    full = code.to_int()
    value = 0
    shift = 0
    for start, ln in segments:
        value |= ((full >> start) & ((1 << ln) - 1)) << shift
        shift += ln
    return value


class CodeBank:
    """An array of equal-length codes with optional labels, camera ids, and
    the pre-hash real features used for re-ranking."""

    def __init__(
        self,
        words: np.ndarray,
        nbits: int,
        labels: np.ndarray | None = None,
        cameras: np.ndarray | None = None,
        features: np.ndarray | None = None,
    ):
        words = np.ascontiguousarray(words, dtype=np.uint64)
        if words.ndim != 2 or words.shape[1] != n_words(nbits):
            raise ValueError("bank words must have shape (n, n_words(nbits))")
        if words.shape[0] == 0:
            raise ValueError("a code bank holds at least one code")
        if nbits % WORD_BITS != 0 and np.any(words[:, -1] & ~tail_mask(nbits)):
            raise ValueError("bank contains nonzero padding bits")
        self.words = words
        self.nbits = nbits
        self.labels = None if labels is None else np.asarray(labels, dtype=np.int64)
        self.cameras = None if cameras is None else np.asarray(cameras, dtype=np.int64)
        self.features = None if features is None else np.asarray(features, dtype=np.float64)
        for name in ("labels", "cameras"):
            arr = getattr(self, name)
            if arr is not None and arr.shape != (len(self),):
                raise ValueError(f"{name} must have one entry per code")
        if self.features is not None and self.features.shape[0] != len(self):
            raise ValueError("features must have one row per code")

    def __len__(self) -> int:
        return self.words.shape[0]

    def code(self, i: int) -> BinaryCode:
        return BinaryCode(self.words[i].copy(), self.nbits)

    @classmethod
    def from_codes(cls, codes: Sequence[BinaryCode], **kwargs) -> "CodeBank":
        if not codes:
            raise ValueError("empty bank")
        nbits = codes[0].nbits
        if any(c.nbits != nbits for c in codes):
            raise ValueError("all codes in a bank must share one length")
        return cls(np.stack([c.words for c in codes]), nbits, **kwargs)

    def write_codes(self, path) -> None:
        """Serialize codes: magic, version, R (u32 LE), n (u64 LE), then
        n * ceil(R/64) little-endian words in id order."""
        with open(path, "wb") as fh:
            fh.write(BANK_MAGIC)
            fh.write(struct.pack("<B", BANK_VERSION))
            fh.write(struct.pack("<I", self.nbits))
            fh.write(struct.pack("<Q", len(self)))
            fh.write(self.words.astype("<u8").tobytes())

    @classmethod
    def read_codes(cls, path, **kwargs) -> "CodeBank":
        with open(path, "rb") as fh:
            magic = fh.read(4)
            if magic != BANK_MAGIC:
                raise ValueError(f"{path}: not a code bank file (magic {magic!r})")
            (version,) = struct.unpack("<B", fh.read(1))
            if version != BANK_VERSION:
                raise ValueError(f"{path}: unsupported bank version {version}")
            (nbits,) = struct.unpack("<I", fh.read(4))
            (n,) = struct.unpack("<Q", fh.read(8))
            W = n_words(nbits)
            raw = fh.read(n * W * 8)
            if len(raw) != n * W * 8:
                raise ValueError(f"{path}: truncated bank file")
        words = np.frombuffer(raw, dtype="<u8").reshape(n, W).astype(np.uint64)
        return cls(words, nbits, **kwargs)
