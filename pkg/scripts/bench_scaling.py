"""Join scaling efficiency on a synthetic corpus, written as CSV and SVG.

Usage: python scripts/bench_scaling.py [--n-docs 5000] [--worker-counts 1,2,4] [--out bench.csv]
"""

import argparse
import logging
import os
from pathlib import Path

from polydiff import pipeline, synth


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n-docs", type=int, default=5000)
    ap.add_argument("--k", type=int, default=40)
    ap.add_argument("--worker-counts", default="1,2,4")
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--workdir", type=Path, default=Path("/tmp/polydiff-bench"))
    ap.add_argument("--out", type=Path, default=Path("bench.csv"))
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    corpus = synth.synth_corpus(args.workdir / "corpus", n_docs=args.n_docs, n_topics=20)
    config = pipeline.PipelineConfig(workdir=args.workdir / "work", manifest=corpus.manifest, k=args.k)
    pipeline.run_all(config, force=True, until="cluster")
    rows = pipeline.bench(config, [int(w) for w in args.worker_counts.split(",")], repeats=args.repeats)
    pipeline.write_bench(rows, args.out, args.out.with_suffix(".svg"))
    print(f"# {os.cpu_count()} cpu(s)")
    print("n_workers,wall_time_seconds,efficiency")
    for r in rows:
        print(f"{r.n_workers},{r.wall_time_seconds:.4f},{r.efficiency:.4f}")


if __name__ == "__main__":
    main()
