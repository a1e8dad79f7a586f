"""Retrieval measurement: mAP, CMC, precision/recall-vs-time curves with
feature re-ranking, and instrumented lookup-cost comparisons between
indexes.

Protocol conventions (standard cross-camera retrieval): gallery entries
sharing both the identity and the camera of the query are junk and leave
the ranking entirely; relevant means same identity on another camera;
queries with no relevant gallery entry are skipped.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field

import numpy as np

from .codes import BinaryCode, CodeBank
from .index import MihIndex, SearchStats
from . import kernels


@dataclass
class RetrievalProtocol:
    query_labels: np.ndarray
    query_cameras: np.ndarray
    gallery_labels: np.ndarray
    gallery_cameras: np.ndarray
    top_n: int = 20

    def junk_mask(self, qi: int) -> np.ndarray:
        return (self.gallery_labels == self.query_labels[qi]) & (
            self.gallery_cameras == self.query_cameras[qi]
        )

    def relevant_mask(self, qi: int) -> np.ndarray:
        return (self.gallery_labels == self.query_labels[qi]) & (
            self.gallery_cameras != self.query_cameras[qi]
        )

    @property
    def n_queries(self) -> int:
        return len(self.query_labels)


@dataclass
class CurvePoint:
    k_nn: int
    precision: float
    recall: float
    time_s: float


def average_precision(relevance: np.ndarray) -> float | None:
    """Mean of precision@rank over the relevant ranks; None without any
    relevant item (query skipped)."""
    rel = np.asarray(relevance, dtype=bool)
    hits = np.flatnonzero(rel)
    if hits.size == 0:
        return None
    precisions = (np.arange(hits.size) + 1) / (hits + 1)
    return float(precisions.mean())


def cmc_at(first_hit_ranks: np.ndarray, k: int) -> float:
    """Fraction of queries whose first correct match sits at rank <= k
    (ranks are 1-based; queries without a hit carry rank = +inf)."""
    if k < 1:
        raise ValueError("rank cutoff must be >= 1")
    ranks = np.asarray(first_hit_ranks, dtype=float)
    if ranks.size == 0:
        return 0.0
    return float(np.mean(ranks <= k))


def rank_gallery(query_bank: CodeBank, gallery_bank: CodeBank) -> np.ndarray:
    """Per query, gallery indices ordered by (Hamming distance, id)."""
    Q = len(query_bank)
    order = np.empty((Q, len(gallery_bank)), dtype=np.int64)
    for qi in range(Q):
        d = kernels.hamming_one_to_many(query_bank.words[qi], gallery_bank.words)
        order[qi] = np.argsort(d, kind="stable")
    return order


def map_and_cmc(
    ranking: np.ndarray, protocol: RetrievalProtocol, cmc_ks: tuple[int, ...] = (1, 5, 10, 20)
) -> tuple[float, dict[int, float]]:
    """mAP and CMC@k over a gallery ranking, with junk exclusion."""
    aps = []
    first_ranks = []
    for qi in range(protocol.n_queries):
        junk = protocol.junk_mask(qi)
        rel = protocol.relevant_mask(qi)
        if not rel.any():
            continue
        ranked = ranking[qi]
        keep = ~junk[ranked]
        ranked = ranked[keep]
        rel_ranked = rel[ranked]
        ap = average_precision(rel_ranked)
        if ap is None:
            continue
        aps.append(ap)
        first_ranks.append(int(np.flatnonzero(rel_ranked)[0]) + 1)
    if not aps:
        raise ValueError("no query has a cross-camera relevant gallery entry")
    first_ranks = np.array(first_ranks)
    return float(np.mean(aps)), {k: cmc_at(first_ranks, k) for k in cmc_ks}


def evaluate_bank(
    query_bank: CodeBank,
    gallery_bank: CodeBank,
    cmc_ks: tuple[int, ...] = (1, 5, 10, 20),
) -> tuple[float, dict[int, float]]:
    """Hamming-ranking mAP/CMC using the labels and cameras stored in the
    banks."""
    protocol = RetrievalProtocol(
        query_bank.labels, query_bank.cameras, gallery_bank.labels, gallery_bank.cameras
    )
    return map_and_cmc(rank_gallery(query_bank, gallery_bank), protocol, cmc_ks)


# -- precision/recall vs time -------------------------------------------------

def _curve_pass(
    index: MihIndex,
    query_bank: CodeBank,
    protocol: RetrievalProtocol,
    k_nn: int,
    collect_metrics: bool,
):
    """One timed sweep over the queries: k-NN lookup, junk filter, feature
    re-rank, top-n cut. Returns (total_seconds, precision, recall)."""
    g_feats = index.bank.features
    q_feats = query_bank.features
    top_n = min(protocol.top_n, k_nn)
    precisions, recalls = [], []
    total = 0.0
    for qi in range(protocol.n_queries):
        rel = protocol.relevant_mask(qi)
        if collect_metrics and not rel.any():
            continue
        t0 = time.perf_counter()
        ids, dists, _stats = index.knn_search(query_bank.code(qi), k_nn)
        keep = ~protocol.junk_mask(qi)[ids]
        ids = ids[keep]
        if ids.size:
            dd = g_feats[ids] - q_feats[qi]
            reorder = np.argsort(np.einsum("ij,ij->i", dd, dd), kind="stable")
            top = ids[reorder[:top_n]]
        else:
            top = ids
        total += time.perf_counter() - t0
        if collect_metrics:
            correct = int(rel[top].sum())
            precisions.append(correct / top_n)
            recalls.append(correct / int(rel.sum()))
    if not collect_metrics:
        return total, None, None
    return total, float(np.mean(precisions)), float(np.mean(recalls))


def precision_recall_time_curve(
    index: MihIndex,
    query_bank: CodeBank,
    protocol: RetrievalProtocol,
    knn_list: list[int],
    warmup: int = 3,
    repeats: int = 5,
) -> list[CurvePoint]:
    """Per k_nn: multi-index k-NN lookup, re-rank the neighbors by Euclidean
    feature distance, keep the top-n, then report precision/recall plus the
    median-of-repeats per-query wall time."""
    if index.bank.features is None or query_bank.features is None:
        raise ValueError("re-ranking needs stored features on both banks")
    points = []
    for k_nn in knn_list:
        k_eff = min(int(k_nn), len(index.bank))
        _, precision, recall = _curve_pass(index, query_bank, protocol, k_eff, True)
        for _ in range(warmup):
            _curve_pass(index, query_bank, protocol, k_eff, False)
        times = [
            _curve_pass(index, query_bank, protocol, k_eff, False)[0] for _ in range(repeats)
        ]
        per_query = float(np.median(times)) / protocol.n_queries
        points.append(CurvePoint(k_eff, precision, recall, per_query))
    return points


def write_curve_csv(path, points: list[CurvePoint]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k_nn", "precision", "recall", "time_s"])
        for p in points:
            w.writerow([p.k_nn, f"{p.precision:.10f}", f"{p.recall:.10f}", f"{p.time_s:.6g}"])


# -- lookup-cost comparison -----------------------------------------------------

class ExactnessViolation(RuntimeError):
    """An index returned a different survivor set than the ground truth."""


@dataclass
class CostRow:
    setting: str
    buckets: float
    candidates: float
    survivors: float
    time_s: float


@dataclass
class LookupCostReport:
    name_a: str
    name_b: str
    rows_a: list[CostRow] = field(default_factory=list)
    rows_b: list[CostRow] = field(default_factory=list)

    def ratios(self) -> list[dict]:
        """Per setting, baseline-over-treatment cost ratios (b / a)."""
        out = []
        for ra, rb in zip(self.rows_a, self.rows_b):
            out.append(
                {
                    "setting": ra.setting,
                    "buckets_ratio": rb.buckets / ra.buckets if ra.buckets else float("nan"),
                    "candidates_ratio": (
                        rb.candidates / ra.candidates if ra.candidates else float("nan")
                    ),
                    "time_ratio": rb.time_s / ra.time_s if ra.time_s else float("nan"),
                }
            )
        return out


def _mean_stats(stats: list[SearchStats]) -> tuple[float, float, float, float]:
    return (
        float(np.mean([s.buckets_probed for s in stats])),
        float(np.mean([s.candidates_verified for s in stats])),
        float(np.mean([s.survivors for s in stats])),
        float(np.mean([s.wall_time for s in stats])),
    )


def lookup_cost_report(
    index_a: MihIndex,
    index_b: MihIndex,
    queries_a: list[BinaryCode],
    queries_b: list[BinaryCode],
    settings: list[tuple[str, int]],
    name_a: str = "a",
    name_b: str = "b",
) -> LookupCostReport:
    """Mean per-query probe/candidate/time statistics for two indexes over
    matched query lists, with exactness certified before any comparison.

    ``settings`` holds ("radius"|"knn", value) pairs. When both indexes sit
    on the same codes the survivor sets must match each other; otherwise
    each index is checked against the brute-force scan of its own bank.
    """
    if len(queries_a) != len(queries_b):
        raise ValueError("query lists must be paired")
    same_bank = index_a.bank.nbits == index_b.bank.nbits and np.array_equal(
        index_a.bank.words, index_b.bank.words
    )
    report = LookupCostReport(name_a=name_a, name_b=name_b)
    for mode, value in settings:
        stats_a, stats_b = [], []
        for qa, qb in zip(queries_a, queries_b):
            if mode == "radius":
                ids_a, st_a = index_a.r_neighbor_search(qa, value)
                ids_b, st_b = index_b.r_neighbor_search(qb, value)
                truth_a = index_a.linear_scan_radius(qa, value)
                truth_b = index_b.linear_scan_radius(qb, value)
            elif mode == "knn":
                ids_a, _d, st_a = index_a.knn_search(qa, value)
                ids_b, _d, st_b = index_b.knn_search(qb, value)
                truth_a = index_a.linear_scan_knn(qa, value)[0]
                truth_b = index_b.linear_scan_knn(qb, value)[0]
            else:
                raise ValueError(f"unknown setting mode {mode!r}")
            if not np.array_equal(ids_a, truth_a):
                raise ExactnessViolation(f"{name_a}: survivors differ from linear scan")
            if not np.array_equal(ids_b, truth_b):
                raise ExactnessViolation(f"{name_b}: survivors differ from linear scan")
            if same_bank and not np.array_equal(ids_a, ids_b):
                raise ExactnessViolation(
                    f"{name_a} vs {name_b}: survivor sets differ on shared codes"
                )
            stats_a.append(st_a)
            stats_b.append(st_b)
        setting = f"{mode}={value}"
        report.rows_a.append(CostRow(setting, *_mean_stats(stats_a)))
        report.rows_b.append(CostRow(setting, *_mean_stats(stats_b)))
    return report


def write_cost_csv(path, report: LookupCostReport) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["setting", "buckets", "candidates", "survivors", "time_s"])
        for name, rows in ((report.name_a, report.rows_a), (report.name_b, report.rows_b)):
            for r in rows:
                w.writerow(
                    [
                        f"{r.setting}/{name}",
                        f"{r.buckets:.6g}",
                        f"{r.candidates:.6g}",
                        f"{r.survivors:.6g}",
                        f"{r.time_s:.6g}",
                    ]
                )


def config_metadata_line(command: str, config: dict) -> str:
    return json.dumps({"command": command, "config": config}, sort_keys=True)
