"""Candidate pairs and the two-sided similarity join.

Distances map to similarities via ``100 / (1 + D)``; the set measures report
``100 * J``. Scalar functions take two SparseVector; ``score_rows`` computes
the same measures for many row pairs of a CSR matrix at once and is what the
join uses.
"""

from __future__ import annotations

import itertools
import math
import zlib
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import numpy as np
import scipy.sparse as sp

from .parallel import WorkerPool
from .recordstore import state_of
from .textfeat import SparseVector

MEASURES = ("cosine", "jaccard", "weighted_jaccard", "manhattan", "hamming")
PAIRS_PER_PARTITION = 8192


class UndefinedSimilarity(ValueError):
    pass


class JoinError(KeyError):
    def __str__(self):
        return str(self.args[0])


@dataclass(frozen=True, order=True)
class CandidatePair:
    pk_left: str
    pk_right: str


@dataclass(frozen=True, order=True)
class ScoredPair:
    pk_left: str
    pk_right: str
    measure: str
    similarity: float


def similarity_from_distance(d):
    return 100.0 / (1.0 + d)


def distance_from_similarity(s):
    return 100.0 / s - 1.0


def _check_dims(a: SparseVector, b: SparseVector):
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} != {b.dim}")


def cosine_similarity(a: SparseVector, b: SparseVector) -> float:
    _check_dims(a, b)
    na, nb = a.norm(), b.norm()
    if na == 0 or nb == 0:
        raise UndefinedSimilarity("cosine similarity of a zero vector")
    return similarity_from_distance(1.0 - a.dot(b) / (na * nb))


def manhattan_similarity(a: SparseVector, b: SparseVector) -> float:
    _check_dims(a, b)
    idx = np.union1d(a.idx, b.idx)
    va = np.zeros(idx.size)
    vb = np.zeros(idx.size)
    va[np.searchsorted(idx, a.idx)] = a.val
    vb[np.searchsorted(idx, b.idx)] = b.val
    return similarity_from_distance(float(np.abs(va - vb).sum()))


def hamming_similarity(a: SparseVector, b: SparseVector) -> float:
    _check_dims(a, b)
    return similarity_from_distance(len(a.support() ^ b.support()))


def jaccard_index(short: int, long: int, symdiff: int) -> float:
    return (short + long - symdiff) / (short + long + symdiff)


def jaccard_similarity(a: SparseVector, b: SparseVector) -> float:
    _check_dims(a, b)
    sa, sb = a.support(), b.support()
    if not sa and not sb:
        raise UndefinedSimilarity("Jaccard similarity of two empty supports")
    total, symdiff = len(sa) + len(sb), len(sa ^ sb)
    return 100.0 * (total - symdiff) / (total + symdiff)


def containment_weight(alpha, r):
    """Weight that makes the weighted Jaccard index equal the containment r."""
    return (1.0 - r) * (1.0 + alpha) / ((1.0 + r) * (1.0 + alpha - 2.0 * alpha * r))


def _weighted_jaccard_ratio(n_short, n_long, n_common):
    """Numerator and denominator of the weighted Jaccard index.

    Substituting alpha = s/l and r = c/s into the containment weight gives
    w * |S delta L| = (s - c)(s + l)/(s + c), so the index is a ratio of
    integers. Evaluating it in that form keeps exact ties (r = 1/2, ...)
    exact instead of landing an ulp either side of a threshold.
    """
    total = n_short + n_long
    return total * (n_short + n_common) - (n_short - n_common) * total, \
        total * (n_short + n_common) + (n_short - n_common) * total


def weighted_jaccard_index(n_short: int, n_long: int, n_common: int) -> float:
    """Weighted Jaccard for supports of sizes n_short <= n_long sharing n_common."""
    if n_short < 1:
        raise UndefinedSimilarity("weighted Jaccard needs a non-empty shorter support")
    num, den = _weighted_jaccard_ratio(n_short, n_long, n_common)
    return num / den


def weighted_jaccard_similarity(a: SparseVector, b: SparseVector) -> float:
    _check_dims(a, b)
    sa, sb = a.support(), b.support()
    short, long = (sa, sb) if len(sa) <= len(sb) else (sb, sa)
    if not short:
        raise UndefinedSimilarity("weighted Jaccard needs a non-empty shorter support")
    num, den = _weighted_jaccard_ratio(len(short), len(long), len(short & long))
    return 100.0 * num / den


SCALAR_MEASURES = {
    "cosine": cosine_similarity,
    "jaccard": jaccard_similarity,
    "weighted_jaccard": weighted_jaccard_similarity,
    "manhattan": manhattan_similarity,
    "hamming": hamming_similarity,
}


def similarity(a: SparseVector, b: SparseVector, measure: str) -> float:
    try:
        fn = SCALAR_MEASURES[measure]
    except KeyError:
        raise ValueError(f"unknown measure {measure!r}; choose from {MEASURES}") from None
    return fn(a, b)


class VectorTable:
    """Read-only keyed vector table shared by every join partition."""

    def __init__(self, keys: Sequence[str], matrix: sp.csr_matrix):
        self.keys = list(keys)
        self.matrix = sp.csr_matrix(matrix, dtype=np.float64)
        self.matrix.sort_indices()
        self.row_of = {k: i for i, k in enumerate(self.keys)}
        if len(self.row_of) != len(self.keys):
            raise ValueError("duplicate keys in vector table")
        m = self.matrix
        self.sq_norm = np.asarray(m.multiply(m).sum(axis=1)).ravel()
        self.nnz = np.diff(m.indptr)
        self.binary = m.copy()
        self.binary.data[:] = 1.0

    @classmethod
    def from_vectors(cls, items: Iterable[tuple[str, SparseVector]]) -> "VectorTable":
        from .lsa import to_csr

        keys, m = to_csr(items)
        return cls(keys, m)

    def vector(self, key: str) -> SparseVector:
        i = self.row_of[key]
        m = self.matrix
        a, b = m.indptr[i], m.indptr[i + 1]
        return SparseVector(m.shape[1], m.indices[a:b], m.data[a:b])

    def lookup(self, key: str) -> int:
        try:
            return self.row_of[key]
        except KeyError:
            raise JoinError(f"key {key!r} not found in vector table") from None

    def __len__(self):
        return len(self.keys)


def _rowwise_dot(A: sp.csr_matrix, B: sp.csr_matrix) -> np.ndarray:
    return np.asarray(A.multiply(B).sum(axis=1)).ravel()


def score_rows(table: VectorTable, left: np.ndarray, right: np.ndarray, measure: str) -> np.ndarray:
    """Similarities of ``(left[i], right[i])`` row pairs of ``table``."""
    if len(left) == 0:
        return np.zeros(0)
    if measure == "cosine":
        nl, nr = np.sqrt(table.sq_norm[left]), np.sqrt(table.sq_norm[right])
        bad = (nl == 0) | (nr == 0)
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise UndefinedSimilarity(
                f"cosine similarity of a zero vector ({table.keys[left[i]]}, {table.keys[right[i]]})"
            )
        dot = _rowwise_dot(table.matrix[left], table.matrix[right])
        return similarity_from_distance(1.0 - dot / (nl * nr))
    if measure == "manhattan":
        diff = table.matrix[left] - table.matrix[right]
        return similarity_from_distance(np.asarray(abs(diff).sum(axis=1)).ravel())
    common = _rowwise_dot(table.binary[left], table.binary[right])
    sl, sr = table.nnz[left].astype(np.float64), table.nnz[right].astype(np.float64)
    symdiff = sl + sr - 2.0 * common
    if measure == "hamming":
        return similarity_from_distance(symdiff)
    if measure == "jaccard":
        total = sl + sr
        if np.any(total == 0):
            raise UndefinedSimilarity("Jaccard similarity of two empty supports")
        return 100.0 * (total - symdiff) / (total + symdiff)  # one rounding
    if measure == "weighted_jaccard":
        short, long = np.minimum(sl, sr), np.maximum(sl, sr)
        if np.any(short < 1):
            raise UndefinedSimilarity("weighted Jaccard needs a non-empty shorter support")
        num, den = _weighted_jaccard_ratio(short, long, common)
        return 100.0 * num / den
    raise ValueError(f"unknown measure {measure!r}; choose from {MEASURES}")


def candidate_pairs(assignments: Iterable[tuple[str, str, int]]) -> Iterator[CandidatePair]:
    """Same-cluster, different-state pairs, each once with pk_left < pk_right."""
    clusters: dict[int, dict[str, list[str]]] = defaultdict(lambda: defaultdict(list))
    seen = set()
    for pk, state, label in assignments:
        if pk in seen:
            raise ValueError(f"key {pk!r} assigned more than once")
        seen.add(pk)
        clusters[label][state].append(pk)
    for label in sorted(clusters):
        by_state = clusters[label]
        states = sorted(by_state)
        for s, t in itertools.combinations(states, 2):
            for a in by_state[s]:
                for b in by_state[t]:
                    yield CandidatePair(a, b) if a < b else CandidatePair(b, a)


def count_candidate_pairs(assignments: Iterable[tuple[str, str, int]]) -> int:
    sizes: dict[int, dict[str, int]] = defaultdict(lambda: defaultdict(int))
    for _, state, label in assignments:
        sizes[label][state] += 1
    total = 0
    for by_state in sizes.values():
        n = list(by_state.values())
        s = sum(n)
        total += (s * s - sum(x * x for x in n)) // 2
    return total


def partition_of(pair: tuple[str, str], n_partitions: int) -> int:
    return zlib.crc32(f"{pair[0]}\x00{pair[1]}".encode("utf-8")) % n_partitions


def hash_partition(pairs: Sequence, n_partitions: int) -> list[list[tuple[str, str]]]:
    parts: list[list] = [[] for _ in range(n_partitions)]
    for p in pairs:
        t = (p.pk_left, p.pk_right) if isinstance(p, CandidatePair) else tuple(p)
        parts[partition_of(t, n_partitions)].append(t)
    return parts


def join_on_left(pairs: Sequence[tuple[str, str]], table: VectorTable):
    """((pk_l, pk_r), row_l) for every pair: keyed by pk_l and joined with the table."""
    return [(pair, table.lookup(pair[0])) for pair in pairs]


def join_on_right(left_joined, table: VectorTable):
    """Re-key by pk_r and join again: ((pk_l, pk_r), (row_l, row_r))."""
    return [(pair, (row_l, table.lookup(pair[1]))) for pair, row_l in left_joined]


def calculate_similarities(joined, table: VectorTable, measure: str, threshold: float) -> list[ScoredPair]:
    if not joined:
        return []
    rows = np.array([r for _, r in joined], dtype=np.int64)
    sims = score_rows(table, rows[:, 0], rows[:, 1], measure)
    keep = np.flatnonzero(sims > threshold)
    return [ScoredPair(joined[i][0][0], joined[i][0][1], measure, float(sims[i])) for i in keep]


# worker-side broadcast slot, filled once per worker process by the pool initializer
_BROADCAST: dict = {}


def _install_table(table: VectorTable):
    _BROADCAST["table"] = table


def _join_partition(args) -> list[ScoredPair]:
    pairs, measure, threshold = args
    table = _BROADCAST["table"]
    return calculate_similarities(join_on_right(join_on_left(pairs, table), table), table, measure, threshold)


def two_sided_join(
    pairs: Iterable,
    table: VectorTable,
    measure: str = "cosine",
    threshold: float = 0.0,
    workers: int = 1,
    pool: WorkerPool | None = None,
    n_partitions: int | None = None,
) -> list[ScoredPair]:
    """Score candidate pairs against a broadcast vector table.

    Output order is unspecified; callers that need a stable order sort it.
    """
    if measure not in MEASURES:
        raise ValueError(f"unknown measure {measure!r}; choose from {MEASURES}")
    if not 0 <= threshold < 100:
        raise ValueError(f"threshold must lie in [0, 100), got {threshold}")
    pairs = list(pairs)
    if not pairs:
        return []
    if n_partitions is None:
        n_partitions = max(1, math.ceil(len(pairs) / PAIRS_PER_PARTITION))
    tasks = [(part, measure, threshold) for part in hash_partition(pairs, n_partitions) if part]
    own = pool is None
    if own:
        pool = WorkerPool(workers, initializer=_install_table, initargs=(table,))
    try:
        results = pool.map(_join_partition, tasks)
    finally:
        if own:
            pool.close()
    return [sp_ for part in results for sp_ in part]
