"""WCSS against k on a featurized synthetic corpus (elbow plot data).

Usage: python scripts/elbow_scan.py [--n-docs 3000] [--k-values 5,10,20,40,80]
"""

import argparse
import time
from pathlib import Path

from polydiff import cluster, lsa, pipeline, synth


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n-docs", type=int, default=3000)
    ap.add_argument("--n-topics", type=int, default=20)
    ap.add_argument("--k-values", default="5,10,20,40,80")
    ap.add_argument("--seed", type=int, default=13)
    ap.add_argument("--workdir", type=Path, default=Path("/tmp/polydiff-elbow"))
    args = ap.parse_args()

    corpus = synth.synth_corpus(args.workdir / "corpus", n_docs=args.n_docs, n_topics=args.n_topics, seed=args.seed)
    config = pipeline.PipelineConfig(workdir=args.workdir / "work", manifest=corpus.manifest, seed=args.seed)
    pipeline.run_all(config, force=True, until="featurize")
    keys, _, _, vecs = pipeline.read_features(config.features)
    X = cluster.normalize_rows(lsa.to_csr(zip(keys, vecs))[1])
    t0 = time.perf_counter()
    rows = cluster.elbow_scan(X, [int(k) for k in args.k_values.split(",")], seed=args.seed)
    print("k,wcss,wall_time_seconds")
    for r in rows:
        print(f"{r.k},{r.wcss:.4f},{r.wall_time:.3f}" + (f"  # {r.error}" if r.error else ""))
    print(f"# total {time.perf_counter() - t0:.1f}s")


if __name__ == "__main__":
    main()
