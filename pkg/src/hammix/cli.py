"""Command-line entry point: dataset generation, training, encoding,
index building and querying, benchmark curves, lookup-cost comparisons,
ranking metrics, and a self-test.

Every command echoes its resolved configuration as one JSON line so runs
are reproducible from their logs. All randomness flows from --seed through
named substreams (data, init, batching).
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import kernels
from .codes import CodeBank
from .data import (
    GeneratorParams,
    generate,
    load_dataset,
    load_sidecar,
    save_dataset,
)
from .evaluation import (
    RetrievalProtocol,
    evaluate_bank,
    lookup_cost_report,
    precision_recall_time_curve,
    write_cost_csv,
    write_curve_csv,
)
from .index import MihIndex
from .model import HashModel
from .train import TrainConfig, encode_dataset, train


_META_KEYS = ("func", "command", "index_command", "bench_command")


def _echo_config(command: str, args: argparse.Namespace) -> None:
    cfg = {k: v for k, v in vars(args).items() if k not in _META_KEYS and v is not None}
    cfg["kernels"] = kernels.backend_name()
    print(json.dumps({"command": command, "config": cfg}, sort_keys=True, default=str))


def _resolve_bits(args) -> int:
    if args.code_bits is not None:
        if args.code_bits % args.branches != 0:
            raise SystemExit(
                f"error: --code-bits {args.code_bits} is not divisible by "
                f"--branches {args.branches}"
            )
        return args.code_bits // args.branches
    return args.r


def read_bank(prefix) -> CodeBank:
    """Codes plus sidecar labels/cameras plus flat features, if present."""
    prefix = Path(prefix)
    codes_path = Path(f"{prefix}.dmih")
    if not codes_path.exists():
        raise SystemExit(f"error: missing code bank file {codes_path}")
    labels = cameras = features = None
    sidecar = Path(f"{prefix}.sidecar.csv")
    if sidecar.exists():
        labels, cameras = load_sidecar(sidecar)
    feat_path = Path(f"{prefix}.features.npy")
    if feat_path.exists():
        features = np.load(feat_path)
    bank = CodeBank.read_codes(codes_path, labels=labels, cameras=cameras, features=features)
    return bank


def write_bank(bank: CodeBank, prefix) -> None:
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    bank.write_codes(Path(f"{prefix}.dmih"))
    if bank.labels is not None:
        with open(f"{prefix}.sidecar.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["id", "label", "camera"])
            for i in range(len(bank)):
                cam = int(bank.cameras[i]) if bank.cameras is not None else 0
                w.writerow([i, int(bank.labels[i]), cam])
    if bank.features is not None:
        np.save(f"{prefix}.features.npy", bank.features)


# -- commands -----------------------------------------------------------------

def cmd_gen(args) -> int:
    _echo_config("gen", args)
    params = GeneratorParams(
        n=args.n,
        n_classes=args.classes,
        n_cameras=args.cameras,
        feature_dim=args.feature_dim,
        n_branches=args.branches,
        centroid_scale=args.centroid_scale,
        spread=args.spread,
        camera_sigma=args.camera_sigma,
    )
    data_ss = np.random.SeedSequence(args.seed).spawn(3)[0]
    ds = generate(params, np.random.Generator(np.random.PCG64(data_ss)))
    save_dataset(ds, args.out)
    print(f"wrote dataset '{args.out}' (n={len(ds)}, classes={params.n_classes})")
    return 0


def cmd_train(args) -> int:
    _echo_config("train", args)
    ds = load_dataset(args.data)
    cfg = TrainConfig(
        epochs=args.epochs,
        batch_p=args.batch_p,
        batch_k=args.batch_k,
        lr=args.lr,
        weight_decay=args.weight_decay,
        alpha=args.alpha,
        beta=args.beta,
        gamma=args.gamma,
        n_tables=args.m,
        branch_bits=_resolve_bits(args),
        seed=args.seed,
    )
    result = train(ds, cfg)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    result.model.save(args.out)
    if args.trace_out:
        with open(args.trace_out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "lr", "total", "triplet", "classification", "sami"])
            for row in result.trace:
                w.writerow(
                    [
                        row["epoch"],
                        f"{row['lr']:.10g}",
                        f"{row['total']:.10g}",
                        f"{row['triplet']:.10g}",
                        f"{row['classification']:.10g}",
                        f"{row['sami']:.10g}",
                    ]
                )
    last = result.trace[-1]
    print(
        f"trained {cfg.epochs} epochs; final loss {last['total']:.4f} "
        f"(triplet {last['triplet']:.4f}, cls {last['classification']:.4f}, "
        f"sami {last['sami']:.4f})"
    )
    return 0


def cmd_encode(args) -> int:
    _echo_config("encode", args)
    ds = load_dataset(args.data)
    model = HashModel.load(args.model)
    if model.config.feature_dim != ds.params.feature_dim:
        raise SystemExit(
            f"error: model expects feature dim {model.config.feature_dim}, "
            f"dataset '{args.data}' has {ds.params.feature_dim}"
        )
    bank = encode_dataset(model, ds)
    write_bank(bank, args.out)
    print(f"encoded {len(bank)} codes of {bank.nbits} bits to '{args.out}'")
    return 0


def cmd_index_build(args) -> int:
    _echo_config("index build", args)
    bank = read_bank(args.bank)
    idx = MihIndex.build(bank, args.m, args.strategy, n_branches=args.branches)
    idx.save(args.out)
    kinds = ",".join(t.kind for t in idx.tables)
    print(f"built {args.strategy} index: m={args.m}, tables [{kinds}] -> {args.out}")
    return 0


def cmd_index_query(args) -> int:
    _echo_config("index query", args)
    bank = read_bank(args.bank)
    idx = (
        MihIndex.load(args.index, bank)
        if args.index
        else MihIndex.build(bank, args.m, args.strategy, n_branches=args.branches)
    )
    queries = read_bank(args.queries)
    if queries.nbits != bank.nbits:
        raise SystemExit(
            f"error: query bank '{args.queries}' has {queries.nbits} bits, "
            f"gallery has {bank.nbits}"
        )
    rows = []
    stats_rows = []
    for qi in range(len(queries)):
        q = queries.code(qi)
        if args.radius is not None:
            ids, stats = idx.r_neighbor_search(q, args.radius)
            dists = [None] * len(ids)
            ids_list = ids.tolist()
        else:
            ids, dd, stats = idx.knn_search(q, args.knn)
            ids_list, dists = ids.tolist(), dd.tolist()
        for rank, gid in enumerate(ids_list):
            rows.append((qi, rank, gid, dists[rank]))
        stats_rows.append(
            (
                qi,
                stats.buckets_probed,
                stats.candidates_raised,
                stats.candidates_unique,
                stats.candidates_verified,
                stats.survivors,
                f"{stats.wall_time:.6g}",
            )
        )
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["query", "rank", "id", "distance"])
        for row in rows:
            w.writerow(["" if v is None else v for v in row])
    if args.stats_out:
        with open(args.stats_out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(
                ["query", "buckets", "raised", "unique", "verified", "survivors", "time_s"]
            )
            for row in stats_rows:
                w.writerow(row)
    print(f"answered {len(queries)} queries -> {args.out}")
    return 0


def _protocol_from(queries: CodeBank, gallery: CodeBank, top_n: int) -> RetrievalProtocol:
    if queries.labels is None or gallery.labels is None:
        raise SystemExit("error: metric commands need banks with sidecar labels")
    return RetrievalProtocol(
        queries.labels, queries.cameras, gallery.labels, gallery.cameras, top_n=top_n
    )


def cmd_bench_curves(args) -> int:
    _echo_config("bench curves", args)
    gallery = read_bank(args.bank)
    queries = read_bank(args.queries)
    idx = MihIndex.build(gallery, args.m, args.strategy, n_branches=args.branches)
    protocol = _protocol_from(queries, gallery, args.top_n)
    knn_list = [int(x) for x in args.knn_list.split(",")]
    points = precision_recall_time_curve(
        idx, queries, protocol, knn_list, warmup=args.warmup, repeats=args.repeats
    )
    write_curve_csv(args.out, points)
    for p in points:
        print(
            f"k_nn={p.k_nn}: precision={p.precision:.4f} recall={p.recall:.4f} "
            f"time={p.time_s * 1000:.3f} ms/query"
        )
    return 0


def cmd_bench_lookup_cost(args) -> int:
    _echo_config("bench lookup-cost", args)
    bank_a = read_bank(args.bank_a)
    bank_b = read_bank(args.bank_b) if args.bank_b else bank_a
    queries_a = read_bank(args.queries_a)
    queries_b = read_bank(args.queries_b) if args.queries_b else queries_a
    strategy_b = args.strategy_b or args.strategy_a
    idx_a = MihIndex.build(bank_a, args.m, args.strategy_a, n_branches=args.branches)
    idx_b = MihIndex.build(bank_b, args.m, strategy_b, n_branches=args.branches)
    settings: list[tuple[str, int]] = []
    if args.radius_list:
        settings += [("radius", int(x)) for x in args.radius_list.split(",")]
    if args.knn_list:
        settings += [("knn", int(x)) for x in args.knn_list.split(",")]
    if not settings:
        raise SystemExit("error: provide --radius-list and/or --knn-list")
    qa = [queries_a.code(i) for i in range(len(queries_a))]
    qb = [queries_b.code(i) for i in range(len(queries_b))]
    report = lookup_cost_report(
        idx_a, idx_b, qa, qb, settings, name_a=args.name_a, name_b=args.name_b
    )
    write_cost_csv(args.out, report)
    for ratio in report.ratios():
        print(
            f"{ratio['setting']}: candidates ratio ({args.name_b}/{args.name_a}) = "
            f"{ratio['candidates_ratio']:.3f}, time ratio = {ratio['time_ratio']:.3f}"
        )
    return 0


def cmd_eval(args) -> int:
    _echo_config(f"eval {args.metric}", args)
    gallery = read_bank(args.gallery)
    queries = read_bank(args.queries)
    _protocol_from(queries, gallery, 20)  # validates sidecars
    ks = tuple(int(x) for x in args.cmc_k.split(","))
    mAP, cmc = evaluate_bank(queries, gallery, cmc_ks=ks)
    if args.metric == "map":
        print(json.dumps({"mAP": mAP}, sort_keys=True))
    else:
        print(json.dumps({f"cmc@{k}": v for k, v in cmc.items()}, sort_keys=True))
    return 0


def cmd_selftest(args) -> int:
    _echo_config("selftest", args)
    rng = np.random.default_rng(args.seed)
    from .codes import pack_bits_rows, BinaryCode

    failures = 0

    def check(name, ok):
        nonlocal failures
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
        failures += 0 if ok else 1

    bits = rng.integers(0, 2, size=(600, 96)).astype(np.uint8)
    bank = CodeBank(pack_bits_rows(bits), 96)
    for strategy in ("blockwise", "contiguous"):
        for m in (2, 4, 6):
            idx = MihIndex.build(bank, m, strategy)
            ok_r = ok_k = True
            for _ in range(20):
                q = BinaryCode(
                    pack_bits_rows(rng.integers(0, 2, 96).astype(np.uint8)[None, :])[0], 96
                )
                for k in (0, 5, 12):
                    ids, _ = idx.r_neighbor_search(q, k)
                    ok_r &= bool(np.array_equal(ids, idx.linear_scan_radius(q, k)))
                for k_nn in (1, 10):
                    ids, dd, _ = idx.knn_search(q, k_nn)
                    oid, od = idx.linear_scan_knn(q, k_nn)
                    ok_k &= bool(np.array_equal(ids, oid) and np.array_equal(dd, od))
            check(f"radius search == linear scan ({strategy}, m={m})", ok_r)
            check(f"k-NN == exhaustive oracle ({strategy}, m={m})", ok_k)

    from .index import radius_schedule

    check(
        "radius schedule worked examples",
        radius_schedule(5, 3).per_table_radius == (1, 1, 1)
        and radius_schedule(4, 3).per_table_radius == (1, 1, 0)
        and radius_schedule(0, 4).per_table_radius == (0, -1, -1, -1),
    )

    from .losses import sami_loss
    from .tables import KeyLayout, key_column_indices

    cols = key_column_indices(KeyLayout.build("blockwise", 1, 8, 2))
    a = np.ones(8)
    b = np.ones(8)
    b[0] = -1
    b[4:7] = -1
    check("table-ordering loss worked example", sami_loss(np.stack([a, b]), cols).value == 1.0)

    if failures:
        print(f"selftest: {failures} check(s) failed")
        return 1
    print("selftest: all checks passed")
    return 0


# -- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hammix",
        description="Exact multi-index Hamming search and hash-learning lab",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common_hyper(p):
        p.add_argument("--alpha", type=float, default=1.0, help="triplet margin")
        p.add_argument("--beta", type=float, default=2.0, help="classification weight")
        p.add_argument("--gamma", type=float, default=0.5, help="table-ordering weight")
        p.add_argument("--m", type=int, default=4, help="number of hash tables")
        p.add_argument("--r", type=int, default=32, help="bits per branch")
        p.add_argument("--branches", type=int, default=3, help="branch count")
        p.add_argument("--code-bits", type=int, default=None, help="total bits (overrides --r)")

    p = sub.add_parser("gen", help="generate a synthetic labeled dataset")
    p.add_argument("--out", required=True, help="dataset path prefix")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=4000)
    p.add_argument("--classes", type=int, default=50)
    p.add_argument("--cameras", type=int, default=4)
    p.add_argument("--feature-dim", type=int, default=32)
    p.add_argument("--branches", type=int, default=3)
    p.add_argument("--centroid-scale", type=float, default=1.0)
    p.add_argument("--spread", type=float, default=0.35)
    p.add_argument("--camera-sigma", type=float, default=0.3)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train the multi-branch hash model")
    p.add_argument("--data", required=True, help="dataset path prefix")
    p.add_argument("--out", required=True, help="model file to write")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=160)
    p.add_argument("--lr", type=float, default=4e-4)
    p.add_argument("--weight-decay", type=float, default=5e-4)
    p.add_argument("--batch-p", type=int, default=16, help="identities per batch")
    p.add_argument("--batch-k", type=int, default=4, help="samples per identity")
    p.add_argument("--trace-out", default=None, help="optional per-epoch loss CSV")
    add_common_hyper(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("encode", help="binarize a dataset with a trained model")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True, help="bank path prefix")
    p.set_defaults(func=cmd_encode)

    p_index = sub.add_parser("index", help="index operations")
    sub_index = p_index.add_subparsers(dest="index_command", required=True)

    p = sub_index.add_parser("build", help="build and snapshot an index")
    p.add_argument("--bank", required=True, help="bank path prefix")
    p.add_argument("--strategy", choices=("blockwise", "contiguous"), default="blockwise")
    p.add_argument("--m", type=int, default=4)
    p.add_argument("--branches", type=int, default=3)
    p.add_argument("--out", required=True, help="index snapshot file")
    p.set_defaults(func=cmd_index_build)

    p = sub_index.add_parser("query", help="radius or k-NN queries against a bank")
    p.add_argument("--bank", required=True)
    p.add_argument("--queries", required=True, help="query bank path prefix")
    p.add_argument("--index", default=None, help="index snapshot (else built in memory)")
    p.add_argument("--strategy", choices=("blockwise", "contiguous"), default="blockwise")
    p.add_argument("--m", type=int, default=4)
    p.add_argument("--branches", type=int, default=3)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--radius", type=int, default=None)
    group.add_argument("--knn", type=int, default=None)
    p.add_argument("--out", required=True, help="results CSV")
    p.add_argument("--stats-out", default=None, help="per-query statistics CSV")
    p.set_defaults(func=cmd_index_query)

    p_bench = sub.add_parser("bench", help="benchmarks")
    sub_bench = p_bench.add_subparsers(dest="bench_command", required=True)

    p = sub_bench.add_parser("curves", help="precision/recall vs time curves")
    p.add_argument("--bank", required=True, help="gallery bank prefix")
    p.add_argument("--queries", required=True, help="query bank prefix")
    p.add_argument("--strategy", choices=("blockwise", "contiguous"), default="blockwise")
    p.add_argument("--m", type=int, default=4)
    p.add_argument("--branches", type=int, default=3)
    p.add_argument("--knn-list", default="10,20,50,100")
    p.add_argument("--top-n", type=int, default=20)
    p.add_argument("--warmup", type=int, default=3)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bench_curves)

    p = sub_bench.add_parser("lookup-cost", help="instrumented index comparison")
    p.add_argument("--bank-a", required=True)
    p.add_argument("--bank-b", default=None, help="defaults to bank-a")
    p.add_argument("--queries-a", required=True)
    p.add_argument("--queries-b", default=None, help="defaults to queries-a")
    p.add_argument("--strategy-a", choices=("blockwise", "contiguous"), default="blockwise")
    p.add_argument("--strategy-b", choices=("blockwise", "contiguous"), default=None)
    p.add_argument("--m", type=int, default=4)
    p.add_argument("--branches", type=int, default=3)
    p.add_argument("--radius-list", default=None)
    p.add_argument("--knn-list", default=None)
    p.add_argument("--name-a", default="a")
    p.add_argument("--name-b", default="b")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bench_lookup_cost)

    p_eval = sub.add_parser("eval", help="ranking metrics")
    sub_eval = p_eval.add_subparsers(dest="metric", required=True)
    for metric in ("map", "cmc"):
        p = sub_eval.add_parser(metric)
        p.add_argument("--gallery", required=True)
        p.add_argument("--queries", required=True)
        p.add_argument("--cmc-k", default="1,5,10,20")
        p.set_defaults(func=cmd_eval, metric=metric)

    p = sub.add_parser("selftest", help="oracle-equivalence smoke suite")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_selftest)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SystemExit:
        raise
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
