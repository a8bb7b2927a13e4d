"""k-means candidate blocking.

Lloyd iterations with k-means++ seeding. Rows are processed in fixed-size
partitions; each partition yields (label, distance) plus (sum, count)
accumulators that are combined in partition order, so the result does not
depend on how many workers ran the partitions.
"""

from __future__ import annotations

import logging
import struct
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .textfeat import SparseVector

log = logging.getLogger(__name__)

PARTITION_ROWS = 2048


class FitError(ValueError):
    pass


@dataclass
class KMeansModel:
    k: int
    centroids: np.ndarray  # k x dim, dense
    wcss: float
    iterations_run: int
    labels: np.ndarray | None = None
    wcss_history: list = field(default_factory=list)
    repaired: list = field(default_factory=list)  # iterations that re-seeded an empty cluster
    converged: bool = False

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]


def _as_matrix(X):
    if sp.issparse(X):
        return sp.csr_matrix(X, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    return X


def normalize_rows(X):
    """Scale rows to unit L2 norm (zero rows stay zero).

    On unit vectors squared Euclidean distance is 2 * (1 - cosine), so
    blocking agrees with cosine scoring.
    """
    X = _as_matrix(X)
    if sp.issparse(X):
        norms = np.sqrt(np.asarray(X.multiply(X).sum(axis=1)).ravel())
    else:
        norms = np.sqrt(np.einsum("ij,ij->i", X, X))
    scale = np.divide(1.0, norms, out=np.zeros_like(norms), where=norms > 0)
    if sp.issparse(X):
        return sp.csr_matrix(sp.diags(scale) @ X)
    return X * scale[:, None]


def _partitions(n: int, size: int = PARTITION_ROWS):
    return [(lo, min(lo + size, n)) for lo in range(0, n, size)] or [(0, 0)]


def _sq_dist(Xp, C: np.ndarray, c_sq: np.ndarray) -> np.ndarray:
    """Squared distances (rows x k)."""
    if sp.issparse(Xp):
        x_sq = np.asarray(Xp.multiply(Xp).sum(axis=1)).ravel()
        d = x_sq[:, None] - 2.0 * np.asarray(Xp @ C.T) + c_sq[None, :]
        return np.maximum(d, 0.0)
    diff = Xp[:, None, :] - C[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def _assign_partition(X, lo, hi, C, c_sq):
    d = _sq_dist(X[lo:hi], C, c_sq)
    labels = np.argmin(d, axis=1)  # first minimum = lowest index on ties
    return labels, d[np.arange(hi - lo), labels]


def _accumulate(X, lo, hi, labels, k):
    Xp = X[lo:hi]
    ind = sp.csr_matrix(
        (np.ones(hi - lo), (labels, np.arange(hi - lo))), shape=(k, hi - lo)
    )
    sums = ind @ Xp
    sums = sums.toarray() if sp.issparse(sums) else np.asarray(sums)
    return sums, np.bincount(labels, minlength=k)


class _Runner:
    def __init__(self, workers: int):
        self.workers = max(1, int(workers))
        self.pool = ThreadPoolExecutor(self.workers) if self.workers > 1 else None

    def map(self, fn, items):
        if self.pool is None:
            return [fn(*it) for it in items]
        return list(self.pool.map(lambda it: fn(*it), items))

    def close(self):
        if self.pool is not None:
            self.pool.shutdown()


def assign_all(X, C: np.ndarray, workers: int = 1, runner: _Runner | None = None):
    X = _as_matrix(X)
    c_sq = np.einsum("ij,ij->i", C, C)
    own = runner is None
    runner = runner or _Runner(workers)
    try:
        parts = runner.map(
            _assign_partition, [(X, lo, hi, C, c_sq) for lo, hi in _partitions(X.shape[0])]
        )
    finally:
        if own:
            runner.close()
    labels = np.concatenate([p[0] for p in parts])
    d = np.concatenate([p[1] for p in parts])
    return labels, d


def _count_distinct(X) -> int:
    if sp.issparse(X):
        X = X.tocsr()
        X.sort_indices()
        seen = set()
        for i in range(X.shape[0]):
            a, b = X.indptr[i], X.indptr[i + 1]
            seen.add((X.indices[a:b].tobytes(), X.data[a:b].tobytes()))
        return len(seen)
    return len(np.unique(X, axis=0))


def _row(X, i) -> np.ndarray:
    return X[i].toarray().ravel() if sp.issparse(X) else X[i].copy()


def kmeans_pp_init(X, k: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    C = np.empty((k, X.shape[1]))
    C[0] = _row(X, int(rng.integers(n)))
    d = _assign_all_to(X, C[:1])
    for j in range(1, k):
        total = d.sum()
        if total <= 0:
            raise FitError(f"fewer than k={k} distinct points")
        C[j] = _row(X, int(rng.choice(n, p=d / total)))
        d = np.minimum(d, _assign_all_to(X, C[j : j + 1]))
    return C


def _assign_all_to(X, C):
    return assign_all(X, C)[1]


def kmeans_fit(
    X,
    k: int,
    max_iter: int = 100,
    tol: float = 1e-4,
    seed: int = 13,
    workers: int = 1,
) -> KMeansModel:
    """Lloyd's algorithm.

    ``X`` is a dense array, a scipy sparse matrix, or a list of SparseVector.
    ``wcss_history[t]`` is the objective after the assignment step of
    iteration t; the last entry is the final objective.
    """
    if isinstance(X, list) and X and isinstance(X[0], SparseVector):
        from .lsa import to_csr

        X = to_csr(enumerate(X))[1]
    X = _as_matrix(X)
    n = X.shape[0]
    if k < 1:
        raise FitError(f"k must be >= 1, got {k}")
    if tol <= 0:
        raise FitError("tol must be > 0")
    if n < k or _count_distinct(X) < k:
        raise FitError(f"fewer than k={k} distinct points")

    rng = np.random.default_rng(seed)
    C = kmeans_pp_init(X, k, rng)
    runner = _Runner(workers)
    parts = _partitions(n)
    history, repaired = [], []
    converged = False
    it = 0
    try:
        for it in range(1, max_iter + 1):
            labels, d = assign_all(X, C, runner=runner)
            history.append(float(d.sum()))
            acc = runner.map(
                _accumulate, [(X, lo, hi, labels[lo:hi], k) for lo, hi in parts]
            )
            sums = np.sum([a[0] for a in acc], axis=0)
            counts = np.sum([a[1] for a in acc], axis=0)
            new_C = np.empty_like(C)
            nonempty = counts > 0
            new_C[nonempty] = sums[nonempty] / counts[nonempty, None]
            if not np.all(nonempty):
                repaired.append(it)
                far = d.copy()
                for j in np.flatnonzero(~nonempty):
                    i = int(np.argmax(far))
                    new_C[j] = _row(X, i)
                    far[i] = -1.0
                log.info("iteration %d: re-seeded %d empty cluster(s)", it, int((~nonempty).sum()))
            shift = float(np.sqrt(np.max(np.sum((new_C - C) ** 2, axis=1))))
            C = new_C
            if shift < tol:
                converged = True
                break
        labels, d = assign_all(X, C, runner=runner)
    finally:
        runner.close()
    wcss = float(d.sum())
    history.append(wcss)
    return KMeansModel(k, C, wcss, it, labels, history, repaired, converged)


def assign(model: KMeansModel, v) -> int:
    x = v.to_dense() if isinstance(v, SparseVector) else np.asarray(v, dtype=np.float64).ravel()
    if x.size != model.dim:
        raise ValueError(f"vector dim {x.size} != model dim {model.dim}")
    diff = model.centroids - x[None, :]
    return int(np.argmin(np.einsum("ij,ij->i", diff, diff)))


@dataclass
class ElbowRow:
    k: int
    wcss: float
    wall_time: float
    error: str | None = None


def elbow_scan(X, k_values, max_iter: int = 100, tol: float = 1e-4, seed: int = 13) -> list[ElbowRow]:
    if not k_values:
        raise ValueError("k_values must be non-empty")
    rows = []
    for k in sorted(k_values):
        t0 = time.perf_counter()
        try:
            model = kmeans_fit(X, k, max_iter=max_iter, tol=tol, seed=seed)
        except FitError as exc:
            rows.append(ElbowRow(k, float("nan"), time.perf_counter() - t0, str(exc)))
            continue
        rows.append(ElbowRow(k, model.wcss, time.perf_counter() - t0))
    return rows


def estimate_pair_reduction(N: int, k: int) -> tuple[int, int]:
    """Pair counts without and with blocking into ``k`` equal clusters."""
    if N < 2 or not 1 <= k <= N:
        raise ValueError(f"need N >= 2 and 1 <= k <= N, got N={N}, k={k}")
    M = N // k
    return N * (N - 1) // 2, k * (M * (M - 1) // 2)


_HEADER = struct.Struct("<qq")


def save_model(path, model: KMeansModel) -> None:
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(model.k, model.dim))
        fh.write(np.ascontiguousarray(model.centroids, dtype="<f8").tobytes())


def load_model(path) -> KMeansModel:
    with open(path, "rb") as fh:
        k, dim = _HEADER.unpack(fh.read(_HEADER.size))
        C = np.frombuffer(fh.read(8 * k * dim), dtype="<f8").astype(np.float64).reshape(k, dim)
    return KMeansModel(k, C, float("nan"), 0)
