"""Compiled and pure kernels must agree bit for bit, statistics included."""

import numpy as np
import pytest

from hammix import kernels
from hammix.codes import BinaryCode, CodeBank, pack_bits_rows
from hammix.index import MihIndex, radius_schedule

pytestmark = pytest.mark.skipif(
    not kernels.HAVE_COMPILED, reason="compiled kernels not built"
)


@pytest.fixture(scope="module")
def setup():
    rng = np.random.default_rng(99)
    bits = rng.integers(0, 2, size=(1500, 96)).astype(np.uint8)
    bank = CodeBank(pack_bits_rows(bits), 96)
    queries = [
        BinaryCode(pack_bits_rows(rng.integers(0, 2, 96).astype(np.uint8)[None, :])[0], 96)
        for _ in range(15)
    ]
    return bank, queries


def test_hamming_one_to_many_parity(setup):
    bank, queries = setup
    py, cc = kernels.get_backend("py"), kernels.get_backend("c")
    for q in queries:
        assert np.array_equal(
            py.hamming_one_to_many(q.words, bank.words),
            cc.hamming_one_to_many(q.words, bank.words),
        )


def test_linear_scans_parity(setup):
    bank, queries = setup
    py, cc = kernels.get_backend("py"), kernels.get_backend("c")
    for q in queries:
        for k in (0, 20, 40):
            i1, d1 = py.linear_scan_radius(q.words, bank.words, k)
            i2, d2 = cc.linear_scan_radius(q.words, bank.words, k)
            assert np.array_equal(i1, i2) and np.array_equal(d1, d2)
        for k_nn in (1, 13, 400):
            i1, d1 = py.linear_scan_knn(q.words, bank.words, k_nn)
            i2, d2 = cc.linear_scan_knn(q.words, bank.words, k_nn)
            assert np.array_equal(i1, i2) and np.array_equal(d1, d2)


@pytest.mark.parametrize("strategy", ["blockwise", "contiguous"])
@pytest.mark.parametrize("m", [2, 3, 6])
def test_mih_query_parity_with_stats(setup, strategy, m):
    bank, queries = setup
    py, cc = kernels.get_backend("py"), kernels.get_backend("c")
    idx = MihIndex.build(bank, m, strategy)
    for q in queries:
        qkeys = idx._query_keys(q)
        for k in (0, 6, 19, 35):
            sched = radius_schedule(k, m).per_table_radius
            r1 = py.mih_radius_query(bank.words, 96, idx.tables, qkeys, sched, k, q.words)
            r2 = cc.mih_radius_query(bank.words, 96, idx.tables, qkeys, sched, k, q.words)
            assert np.array_equal(r1[0], r2[0])
            assert np.array_equal(r1[1], r2[1])
            assert r1[2] == r2[2]
        for k_nn in (1, 11, 200):
            k1 = py.mih_knn_query(bank.words, 96, idx.tables, qkeys, k_nn, q.words)
            k2 = cc.mih_knn_query(bank.words, 96, idx.tables, qkeys, k_nn, q.words)
            assert np.array_equal(k1[0], k2[0])
            assert np.array_equal(k1[1], k2[1])
            assert k1[2] == k2[2]
            assert k1[3] == k2[3]
