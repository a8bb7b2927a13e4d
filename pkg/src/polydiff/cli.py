"""Command line entry point.

Exit codes: 0 success, 2 usage error, 3 stage-order/checkpoint error, 4 data error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import agg, cluster, diffgraph, pipeline, recordstore, simjoin, synth

EXIT_USAGE = 2
EXIT_STAGE = 3
EXIT_DATA = 4

log = logging.getLogger("polydiff")


def _pipeline_flags() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("pipeline")
    g.add_argument("--config", type=Path, help="key=value config file (flags override it)")
    g.add_argument("--workdir", type=Path, help="checkpoint directory (default: work)")
    g.add_argument("--workers", type=int)
    g.add_argument("--force", action="store_true", help="recompute even if a checkpoint exists")
    g.add_argument("--dim", type=int, help="hashed feature dimension (default 16384)")
    g.add_argument("--ngram", type=int)
    g.add_argument("--stoplist", type=Path)
    g.add_argument("--lsa", action="store_const", const=True, default=None, help="cluster/score in SVD concept space")
    g.add_argument("--lsa-k", dest="lsa_k", type=int)
    g.add_argument("--lsa-iterations", dest="lsa_iterations", type=int)
    g.add_argument("--k", type=int, help="k-means clusters (about 150 for a 3-state subset, 400 for a full corpus)")
    g.add_argument("--no-cluster-normalize", dest="cluster_normalize", action="store_const", const=False,
                   default=None, help="cluster raw TF-IDF rows instead of unit-length rows")
    g.add_argument("--max-iter", dest="max_iter", type=int)
    g.add_argument("--tol", type=float)
    g.add_argument("--seed", type=int)
    g.add_argument("--measure", choices=simjoin.MEASURES)
    g.add_argument("--threshold", type=float, help="keep pairs with similarity above this")
    g.add_argument("--damping", type=float)
    g.add_argument("--graph-threshold", dest="graph_threshold", type=float)
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="polydiff", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    flags = _pipeline_flags()

    p = sub.add_parser("ingest", parents=[flags], help="manifest + text files -> record store")
    p.add_argument("--manifest", type=Path, required=True)
    sub.add_parser("featurize", parents=[flags], help="records -> hashed TF-IDF features")
    sub.add_parser("cluster", parents=[flags], help="k-means blocking")
    p = sub.add_parser("pairs", parents=[flags], help="candidate pairs + two-sided similarity join")
    p.add_argument("--csv", type=Path, help="also export pk1,pk2,similarity CSV")
    p = sub.add_parser("graph", parents=[flags], help="similarity graph, PageRank, groups")
    p.add_argument("--path-from", dest="path_from")
    p.add_argument("--path-to", dest="path_to")
    p.add_argument("--path-out", dest="path_out", type=Path)
    p = sub.add_parser("run", parents=[flags], help="run every stage in order")
    p.add_argument("--manifest", type=Path)

    p = sub.add_parser("probe", parents=[flags], help="rank scored pairs of one document")
    p.add_argument("probe_key")
    p.add_argument("--top", type=int, default=None)

    p = sub.add_parser("bench", parents=[flags], help="join scaling efficiency")
    p.add_argument("--worker-counts", dest="worker_counts", default="1,2,4")
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--out", type=Path, help="CSV output (default: <workdir>/bench.csv)")

    p = sub.add_parser("report", parents=[flags], help="similarity histogram of scored pairs")
    p.add_argument("--state", help="only pairs with a document from this state")
    p.add_argument("--format", choices=("text", "csv", "svg", "json"), default="text")
    p.add_argument("--out", type=Path, help="write here instead of stdout")

    p = sub.add_parser("synth", help="generate a synthetic corpus with planted duplicates")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--n-docs", dest="n_docs", type=int, default=1000)
    p.add_argument("--n-states", dest="n_states", type=int, default=5)
    p.add_argument("--n-topics", dest="n_topics", type=int, default=10)
    p.add_argument("--dup-rate", dest="dup_rate", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=13)
    return parser


_CONFIG_KEYS = (
    "workdir", "manifest", "workers", "dim", "ngram", "stoplist", "lsa", "lsa_k", "lsa_iterations",
    "k", "max_iter", "tol", "seed", "cluster_normalize", "measure", "threshold", "damping", "graph_threshold",
)


def _config(args) -> pipeline.PipelineConfig:
    overrides = {k: getattr(args, k, None) for k in _CONFIG_KEYS}
    return pipeline.load_config(args.config, **overrides)


def _emit(data: bytes | str, out: Path | None) -> None:
    if isinstance(data, str):
        data = data.encode("utf-8")
    if out is None:
        sys.stdout.buffer.write(data)
        sys.stdout.flush()
    else:
        out.write_bytes(data)


def _run(args) -> int:
    cmd = args.command
    if cmd == "synth":
        corpus = synth.synth_corpus(
            args.out, n_docs=args.n_docs, n_states=args.n_states, n_topics=args.n_topics,
            dup_rate=args.dup_rate, seed=args.seed,
        )
        print(f"wrote {len(corpus.keys)} documents, {len(corpus.ground_truth)} planted pairs -> {corpus.manifest}")
        return 0

    config = _config(args)
    if cmd in pipeline.STAGES:
        res = pipeline.run_stage(cmd, config, force=args.force)
        state = "up to date" if res.skipped else "written"
        print(f"{cmd}: {res.output} {state}" + (f" {json.dumps(res.info)}" if res.info else ""))
        if cmd == "pairs" and args.csv:
            pipeline.export_pairs_csv(config.pairs, args.csv)
        if cmd == "graph" and (args.path_from or args.path_to):
            if not (args.path_from and args.path_to):
                raise ValueError("--path-from and --path-to go together")
            result = pipeline.path_report(config, args.path_from, args.path_to)
            _emit(result.to_json() + "\n", args.path_out)
        return 0
    if cmd == "run":
        for res in pipeline.run_all(config, force=args.force):
            print(f"{res.stage}: {res.output} {'up to date' if res.skipped else 'written'}")
        return 0
    if cmd == "probe":
        for (a, b), s in pipeline.probe(config, args.probe_key, args.top):
            print(pipeline.format_probe_line(a, b, s))
        return 0
    if cmd == "bench":
        counts = [int(x) for x in args.worker_counts.split(",") if x.strip()]
        rows = pipeline.bench(config, counts, repeats=args.repeats)
        out = args.out or config.workdir / "bench.csv"
        pipeline.write_bench(rows, out, out.with_suffix(".svg"))
        print("n_workers,wall_time_seconds,efficiency")
        for r in rows:
            print(f"{r.n_workers},{r.wall_time_seconds:.4f},{r.efficiency:.4f}")
        return 0
    if cmd == "report":
        if not config.pairs.exists():
            raise pipeline.StageOrderError(f"{config.pairs} not found; run 'pairs' first")
        hist = pipeline.similarity_histogram(config.pairs, args.state)
        if args.format == "json":
            _emit(hist.to_json() + "\n", args.out)
        else:
            title = f"pairs with a {args.state} document" if args.state else "all pairs"
            _emit(agg.render(hist, args.format, title=title), args.out)
        return 0
    raise ValueError(f"unknown command {cmd!r}")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose > 1 else logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    try:
        return _run(args)
    except (pipeline.StageOrderError, pipeline.CheckpointConflict) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except (recordstore.StoreError, cluster.FitError, simjoin.JoinError, simjoin.UndefinedSimilarity,
            pipeline.ProbeError, diffgraph.GraphError, agg.AggregationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
