"""hammix: exact multi-index Hamming search plus a multi-branch
hash-learning and retrieval-benchmark lab."""

from .codes import (
    BinaryCode,
    CodeBank,
    SubCode,
    hamming_distance,
    pack,
    unpack,
    extract_substring,
)
from .index import MihIndex, RadiusSchedule, SearchStats, build_index, enumerate_ball, radius_schedule
from .tables import BranchCodes, KeyLayout, TableKeySet, blockwise_keys, contiguous_keys

__version__ = "0.1.0"

__all__ = [
    "BinaryCode",
    "SubCode",
    "CodeBank",
    "hamming_distance",
    "pack",
    "unpack",
    "extract_substring",
    "BranchCodes",
    "KeyLayout",
    "TableKeySet",
    "blockwise_keys",
    "contiguous_keys",
    "MihIndex",
    "RadiusSchedule",
    "SearchStats",
    "build_index",
    "enumerate_ball",
    "radius_schedule",
    "__version__",
]
