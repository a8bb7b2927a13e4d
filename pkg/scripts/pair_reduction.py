"""Pair counts with and without k-means blocking into equal clusters.

Usage: python scripts/pair_reduction.py [--N 212768 --k 150]
"""

import argparse

from polydiff import cluster


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--N", type=int, default=212768)
    ap.add_argument("--k", type=int, nargs="+", default=[1, 40, 150, 400])
    args = ap.parse_args()
    print("N,k,total_pairs,blocked_pairs,reduction")
    for k in args.k:
        total, blocked = cluster.estimate_pair_reduction(args.N, k)
        ratio = total / blocked if blocked else float("inf")
        print(f"{args.N},{k},{total},{blocked},{ratio:.1f}x")


if __name__ == "__main__":
    main()
