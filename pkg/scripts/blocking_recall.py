"""Blocking recall of k-means candidate selection on a synthetic corpus.

Usage: python scripts/blocking_recall.py [--n-docs 5000] [--k 40] [--workdir /tmp/recall]
"""

import argparse
import time
from pathlib import Path

from polydiff import pipeline, simjoin, synth


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n-docs", type=int, default=5000)
    ap.add_argument("--n-states", type=int, default=5)
    ap.add_argument("--n-topics", type=int, default=20)
    ap.add_argument("--dup-rate", type=float, default=0.05)
    ap.add_argument("--k", type=int, default=40)
    ap.add_argument("--seed", type=int, default=13)
    ap.add_argument("--mutation", type=float, default=synth.SynthParams.mutation)
    ap.add_argument("--threshold", type=float, default=70.0)
    ap.add_argument("--workdir", type=Path, default=Path("/tmp/polydiff-recall"))
    args = ap.parse_args()

    corpus = synth.synth_corpus(
        args.workdir / "corpus", n_docs=args.n_docs, n_states=args.n_states,
        n_topics=args.n_topics, dup_rate=args.dup_rate, seed=args.seed, mutation=args.mutation,
    )
    config = pipeline.PipelineConfig(
        workdir=args.workdir / "work", manifest=corpus.manifest, k=args.k, seed=args.seed
    )
    t0 = time.perf_counter()
    pipeline.run_all(config, force=True, until="cluster")
    print(f"ingest+featurize+cluster: {time.perf_counter() - t0:.1f}s")

    table, pairs = pipeline.load_join_inputs(config)
    cand = {(p.pk_left, p.pk_right) for p in pairs}
    n = len(table)
    total = n * (n - 1) // 2
    relevant = [
        (a, b) for a, b in corpus.ground_truth
        if simjoin.cosine_similarity(table.vector(a), table.vector(b)) > args.threshold
    ]
    kept = sum(1 for p in relevant if p in cand)
    print(f"ground truth pairs: {len(corpus.ground_truth)}, above threshold unblocked: {len(relevant)}")
    print(f"recall: {kept}/{len(relevant)} = {kept / max(1, len(relevant)):.4f}")
    print(f"candidates: {len(cand)} of {total} = {len(cand) / total:.4%}")


if __name__ == "__main__":
    main()
