"""Similarity graph: PageRank, minimum-cost paths and connected groups.

Nodes are primary keys, edges carry the pair similarity in (0, 100]. Path
costs invert the similarity mapping, ``cost = 100 / weight - 1``, so a path
cost is the summed underlying distance.
"""

from __future__ import annotations

import csv
import heapq
import json
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .recordstore import state_of

log = logging.getLogger(__name__)


class GraphError(ValueError):
    pass


@dataclass
class SimGraph:
    nodes: set = field(default_factory=set)
    edges: dict = field(default_factory=dict)  # (a, b) with a < b -> weight

    def adjacency(self) -> dict:
        adj = defaultdict(dict)
        for (a, b), w in self.edges.items():
            adj[a][b] = w
            adj[b][a] = w
        return adj

    def edge_rows(self) -> list[tuple[str, str, float]]:
        return [(a, b, w) for (a, b), w in sorted(self.edges.items())]


def edge_cost(weight: float) -> float:
    return 100.0 / weight - 1.0


def build_graph(pairs: Iterable, threshold: float = 0.0) -> SimGraph:
    """Keep pairs with similarity strictly above ``threshold``.

    ``pairs`` yields ScoredPair-like objects or (pk1, pk2, similarity) tuples.
    """
    # 100 is allowed: similarities never exceed it, so nothing survives
    if not 0 <= threshold <= 100:
        raise GraphError(f"threshold must lie in [0, 100], got {threshold}")
    g = SimGraph()
    for p in pairs:
        if isinstance(p, tuple):
            a, b, s = p[0], p[1], p[-1]
        else:
            a, b, s = p.pk_left, p.pk_right, p.similarity
        s = float(s)
        if a == b or not s > threshold:
            continue
        key = (a, b) if a < b else (b, a)
        old = g.edges.get(key)
        if old is not None and old != s:
            log.warning("conflicting weights for %s-%s: %s vs %s, keeping max", a, b, old, s)
            s = max(old, s)
        g.edges[key] = s
        g.nodes.update(key)
    return g


def pagerank(
    g: SimGraph,
    damping: float = 0.85,
    tol: float = 1e-6,
    max_iter: int = 100,
    start: dict | None = None,
) -> dict:
    """Weighted PageRank by power iteration.

    Nodes without edges spread their mass uniformly (so they themselves only
    collect the teleport share); ranks always sum to one.
    """
    if not 0 < damping < 1:
        raise GraphError(f"damping must lie in (0, 1), got {damping}")
    if not g.nodes:
        raise GraphError("PageRank of an empty graph")
    nodes = sorted(g.nodes)
    n = len(nodes)
    pos = {v: i for i, v in enumerate(nodes)}
    src, dst, w = [], [], []
    for (a, b), wt in g.edges.items():
        src += [pos[a], pos[b]]
        dst += [pos[b], pos[a]]
        w += [wt, wt]
    src, dst, w = np.array(src, dtype=np.int64), np.array(dst, dtype=np.int64), np.array(w)
    out_w = np.bincount(src, weights=w, minlength=n)
    prob = w / out_w[src] if w.size else w
    dangling = out_w == 0
    r = np.full(n, 1.0 / n) if start is None else np.array([start[v] for v in nodes], dtype=float)
    for _ in range(max_iter):
        flow = np.bincount(dst, weights=r[src] * prob, minlength=n)
        new = (1.0 - damping) / n + damping * (flow + r[dangling].sum() / n)
        new /= new.sum()
        delta = np.abs(new - r).sum()
        r = new
        if delta < tol:
            break
    return {v: float(r[i]) for i, v in enumerate(nodes)}


@dataclass
class PathResult:
    path: list
    cost: float
    reachable: bool = True

    def to_json(self) -> str:
        if not self.reachable:
            return json.dumps({"path": [], "cost": None, "reachable": False})
        return json.dumps({"path": self.path, "cost": self.cost})


def min_cost_path(g: SimGraph, source: str, target: str) -> PathResult:
    """Dijkstra; ties go to fewer hops, then to the lexicographically smaller path."""
    for v in (source, target):
        if v not in g.nodes:
            raise GraphError(f"unknown node {v!r}")
    adj = g.adjacency()
    heap = [(0.0, 0, (source,))]
    done = set()
    while heap:
        cost, hops, path = heapq.heappop(heap)
        u = path[-1]
        if u in done:
            continue
        done.add(u)
        if u == target:
            return PathResult(list(path), cost)
        for v, wt in adj[u].items():
            if v not in done:
                heapq.heappush(heap, (cost + edge_cost(wt), hops + 1, path + (v,)))
    return PathResult([], float("inf"), reachable=False)


def diffusion_groups(g: SimGraph) -> list[set]:
    """Connected components, largest first (ties by smallest member)."""
    adj = g.adjacency()
    seen = set()
    groups = []
    for start in sorted(g.nodes):
        if start in seen:
            continue
        comp = {start}
        stack = [start]
        seen.add(start)
        while stack:
            u = stack.pop()
            for v in adj.get(u, ()):
                if v not in seen:
                    seen.add(v)
                    comp.add(v)
                    stack.append(v)
        groups.append(comp)
    groups.sort(key=lambda c: (-len(c), min(c)))
    return groups


def state_influence(ranks: dict) -> list[tuple[str, float]]:
    """PageRank mass summed per state prefix, descending."""
    acc = defaultdict(float)
    for pk, r in ranks.items():
        acc[state_of(pk)] += r
    return sorted(acc.items(), key=lambda kv: (-kv[1], kv[0]))


def write_edges(path, g: SimGraph) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["pk1", "pk2", "weight"])
        for a, b, wt in g.edge_rows():
            w.writerow([a, b, repr(wt)])


def read_edges(path) -> list[tuple[str, str, float]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [(r["pk1"], r["pk2"], float(r["weight"])) for r in csv.DictReader(fh)]


def write_ranks(path, ranks: dict) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["pk", "rank"])
        for pk, r in sorted(ranks.items(), key=lambda kv: (-kv[1], kv[0])):
            w.writerow([pk, repr(r)])
