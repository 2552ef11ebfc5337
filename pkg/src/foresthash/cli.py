"""Command-line front end: ``train``, ``reselect``, ``encode``, ``eval``, ``bench``.

Exit codes: 0 success, 1 data or runtime error, 2 usage error.
"""

from __future__ import annotations

import argparse
import os
import sys
import warnings

from foresthash import __version__
from foresthash._accel import BACKEND
from foresthash.aggregation import AggregationConfig, aggregate
from foresthash.errors import ForestHashError
from foresthash.io import load_codes, load_dataset, load_model, save_codes, save_model
from foresthash.retrieval import RetrievalIndex, bench_encode_runs, evaluate
from foresthash.training import Dataset, ForestConfig, encode_hash, encode_leaves, train_forest


class _DataError(Exception):
    pass


def _int_at_least(low):
    def parse(text):
        try:
            value = int(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
        if value < low:
            raise argparse.ArgumentTypeError(f"must be >= {low}, got {value}")
        return value

    parse.__name__ = f"integer >= {low}"
    return parse


def _fraction(text):
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if not 0.0 < value <= 1.0:
        raise argparse.ArgumentTypeError(f"must lie in (0, 1], got {value}")
    return value


def _nonneg_float(text):
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if not value >= 0.0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {value}")
    return value


def _seed(text):
    value = _int_at_least(0)(text)
    if value >= 2**64:
        raise argparse.ArgumentTypeError("seed must fit in 64 unsigned bits")
    return value


def _add_data_args(p, prefix="", required=True, labels_required=False):
    flag = f"--{prefix}data"
    p.add_argument(flag, required=required, metavar="PATH", help="IDX images, .csv, or raw f32le matrix")
    p.add_argument(f"--{prefix}labels", required=labels_required, metavar="PATH", help="IDX or raw int32 labels")
    p.add_argument(f"--{prefix}label-column", type=int, metavar="COL", help="label column of a CSV file")
    p.add_argument(f"--{prefix}descriptor", metavar="PATH", help="descriptor for raw data (N=..,D=..,dtype=f32le)")


def _add_threads(p):
    p.add_argument("--threads", type=_int_at_least(0), default=None, help="worker threads, 0 = auto (env FORESTHASH_THREADS)")


def _add_aggregation_args(p):
    p.add_argument("--bits", type=_int_at_least(1), default=36, help="target code length L")
    p.add_argument("--method", choices=["mi", "random"], default="mi")
    p.add_argument("--lambda", dest="lam", type=_nonneg_float, default=1.0, help="weight of the label MI term")
    p.add_argument("--labeled-fraction", type=_fraction, default=1.0, help="fraction of rows whose labels enter the label term")
    p.add_argument("--seed", type=_seed, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="foresthash", description="Random-forest hashing: train, encode, evaluate.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__} ({BACKEND} kernels)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a forest and select code blocks")
    _add_data_args(p, labels_required=False)
    p.add_argument("--trees", type=_int_at_least(1), default=64)
    p.add_argument("--depth", type=_int_at_least(2), default=3)
    p.add_argument("--splitter", choices=["stump", "subspace"], default="subspace")
    p.add_argument("--rank", type=_int_at_least(0), default=3, help="subspace rank per branch")
    p.add_argument("--sample-fraction", type=_fraction, default=0.5)
    p.add_argument("--candidates", type=_int_at_least(1), default=100, help="random stump candidates per node")
    p.add_argument("--min-node-samples", type=_int_at_least(2), default=4)
    _add_aggregation_args(p)
    _add_threads(p)
    p.add_argument("--out", required=True, metavar="MODEL")

    p = sub.add_parser("reselect", help="re-run block selection of an existing model")
    p.add_argument("--model", required=True)
    _add_data_args(p)
    _add_aggregation_args(p)
    _add_threads(p)
    p.add_argument("--out", required=True, metavar="MODEL")

    p = sub.add_parser("encode", help="write hash codes of a dataset")
    p.add_argument("--model", required=True)
    _add_data_args(p)
    _add_threads(p)
    p.add_argument("--out", required=True, metavar="CODES")

    p = sub.add_parser("eval", help="precision/recall of radius retrieval")
    p.add_argument("--db", metavar="CODES", help="database code file")
    p.add_argument("--queries", metavar="CODES", help="query code file")
    p.add_argument("--model", help="encode from data instead of code files")
    _add_data_args(p, prefix="db-", required=False)
    _add_data_args(p, prefix="query-", required=False)
    p.add_argument("--radius", type=_int_at_least(0), default=0)
    _add_threads(p)

    p = sub.add_parser("bench", help="encoding time per sample")
    p.add_argument("--model", required=True)
    _add_data_args(p)
    p.add_argument("--repetitions", type=_int_at_least(1), default=10)
    _add_threads(p)
    return parser


def _threads(args) -> int:
    if args.threads is not None:
        return args.threads
    env = os.environ.get("FORESTHASH_THREADS")
    if env is None or env == "":
        return 0
    try:
        value = int(env)
    except ValueError:
        value = -1
    if value < 0:
        raise _DataError(f"FORESTHASH_THREADS must be a non-negative integer, got {env!r}")
    return value


def _load(args, prefix="") -> Dataset:
    key = prefix.replace("-", "_")
    return load_dataset(
        getattr(args, f"{key}data"),
        getattr(args, f"{key}labels"),
        getattr(args, f"{key}label_column"),
        getattr(args, f"{key}descriptor"),
    )


def _select(forest, data: Dataset, args, threads: int):
    if data.labels is None and args.method == "mi" and args.lam > 0:
        print("warning: no labels; selecting with the unsupervised objective", file=sys.stderr)
    config = AggregationConfig(args.bits, args.lam, args.method, args.labeled_fraction)
    leaves = encode_leaves(forest, data, threads)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        selection = aggregate(leaves, forest.shape, config, labels=data.labels, seed=args.seed)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    return selection


def _report_selection(forest, selection):
    obj = "n/a" if selection.objective_value is None else f"{selection.objective_value:.6f}"
    print(
        f"trees={forest.config.num_trees} depth={forest.config.depth} k={selection.k} "
        f"bits={selection.code_length(forest.shape)} objective={obj} "
        f"blocks={','.join(map(str, selection.indices))}"
    )


def cmd_train(args) -> int:
    threads = _threads(args)
    data = _load(args)
    if data.labels is None:
        raise _DataError("training needs labels (--labels or --label-column)")
    config = ForestConfig(
        num_trees=args.trees,
        depth=args.depth,
        splitter=args.splitter,
        subspace_rank=args.rank,
        sample_fraction=args.sample_fraction,
        stump_candidates=args.candidates,
        min_node_samples=args.min_node_samples,
        master_seed=args.seed,
    )
    forest = train_forest(data, config, threads)
    selection = _select(forest, data, args, threads)
    save_model(args.out, forest, selection)
    _report_selection(forest, selection)
    return 0


def cmd_reselect(args) -> int:
    threads = _threads(args)
    forest, _ = load_model(args.model)
    data = _load(args)
    selection = _select(forest, data, args, threads)
    save_model(args.out, forest, selection)
    _report_selection(forest, selection)
    return 0


def _model_with_selection(path):
    forest, selection = load_model(path)
    if selection is None:
        raise _DataError(f"model {path} has no block selection; run `foresthash reselect` first")
    return forest, selection


def _encode_index(forest, selection, data: Dataset, threads: int) -> RetrievalIndex:
    packed = encode_hash(forest, selection, data, threads)
    return RetrievalIndex(packed, selection.code_length(forest.shape), data.labels)


def cmd_encode(args) -> int:
    threads = _threads(args)
    forest, selection = _model_with_selection(args.model)
    data = _load(args)
    index = _encode_index(forest, selection, data, threads)
    save_codes(args.out, index)
    print(f"encoded n={len(index)} bits={index.nbits} -> {args.out}")
    return 0


def cmd_eval(args) -> int:
    threads = _threads(args)
    if args.model:
        if not (args.db_data and args.query_data):
            raise _UsageError("--model needs --db-data and --query-data")
        forest, selection = _model_with_selection(args.model)
        db = _encode_index(forest, selection, _load(args, "db-"), threads)
        queries = _encode_index(forest, selection, _load(args, "query-"), threads)
    else:
        if not (args.db and args.queries):
            raise _UsageError("give --db and --queries code files, or --model with data")
        db = load_codes(args.db)
        queries = load_codes(args.queries)
    metrics = evaluate(db, queries, args.radius, threads)
    print(metrics.line())
    print(metrics.table())
    return 0


def cmd_bench(args) -> int:
    threads = _threads(args)
    forest, selection = _model_with_selection(args.model)
    data = _load(args)
    runs = bench_encode_runs(forest, selection, data, args.repetitions, threads)
    std = float(runs.std(ddof=1)) if runs.size > 1 else 0.0
    print(
        f"encode_us_per_sample={runs.mean():.3f}±{std:.3f} repetitions={runs.size} "
        f"n={data.n_samples} trees={forest.config.num_trees} backend={BACKEND}"
    )
    return 0


class _UsageError(Exception):
    pass


COMMANDS = {
    "train": cmd_train,
    "reselect": cmd_reselect,
    "encode": cmd_encode,
    "eval": cmd_eval,
    "bench": cmd_bench,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except _UsageError as exc:
        parser.error(str(exc))
    except (ForestHashError, _DataError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
