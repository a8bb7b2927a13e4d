"""Truncated SVD of the document-feature matrix (latent semantic analysis).

Randomized range finder with subspace (power) iterations, followed by an exact
SVD of the small projected matrix.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from typing import Iterable

import numpy as np
import scipy.sparse as sp

from .textfeat import SparseVector

log = logging.getLogger(__name__)

DEFAULT_ITERATIONS = 7
OVERSAMPLE = 10


@dataclass
class SvdFactors:
    k: int
    keys: list
    U_rows: np.ndarray  # m x k, rows of U * sigma
    singular_values: np.ndarray
    V: np.ndarray  # k x n, right singular vectors as rows
    converged: bool = True

    @property
    def n(self) -> int:
        return self.V.shape[1]

    def reconstruct(self) -> np.ndarray:
        return self.U_rows @ self.V


def to_csr(rows: Iterable[tuple[object, SparseVector]]) -> tuple[list, sp.csr_matrix]:
    keys, indptr, indices, data = [], [0], [], []
    dim = None
    for key, v in rows:
        if dim is None:
            dim = v.dim
        elif v.dim != dim:
            raise ValueError(f"vector for {key!r} has dim {v.dim}, expected {dim}")
        keys.append(key)
        indices.append(v.idx)
        data.append(v.val)
        indptr.append(indptr[-1] + v.nnz)
    if dim is None:
        return keys, sp.csr_matrix((0, 0))
    m = sp.csr_matrix(
        (
            np.concatenate(data) if data else np.zeros(0),
            np.concatenate(indices) if indices else np.zeros(0, dtype=np.int64),
            np.asarray(indptr),
        ),
        shape=(len(keys), dim),
    )
    return keys, m


def _orth(a: np.ndarray) -> np.ndarray:
    q, _ = np.linalg.qr(a)
    return q


def truncated_svd(
    rows,
    k: int,
    iterations: int = DEFAULT_ITERATIONS,
    seed: int = 0,
    oversample: int = OVERSAMPLE,
    rtol: float = 1e-12,
) -> SvdFactors:
    """Rank-``k`` factors of the matrix whose rows are ``rows``.

    ``rows`` is an iterable of ``(key, SparseVector)`` or a dense/sparse matrix.
    Iteration stops early once the leading singular values are stable to
    ``rtol``; hitting the cap first clears ``converged`` instead of raising.
    """
    if sp.issparse(rows) or isinstance(rows, np.ndarray):
        M = sp.csr_matrix(rows, dtype=np.float64)
        keys = list(range(M.shape[0]))
    else:
        keys, M = to_csr(rows)
    m, n = M.shape
    if k < 1 or k >= n:
        raise ValueError(f"need 1 <= k < n_features, got k={k}, n={n}")
    if k > m:
        raise ValueError(f"need at least k={k} documents, got {m}")

    ell = min(k + oversample, n, m)
    rng = np.random.default_rng(seed)
    Q = _orth(M @ rng.standard_normal((n, ell)))
    prev = None
    converged = False
    for _ in range(max(iterations, 1)):
        Q = _orth(M @ _orth(M.T @ Q))
        s = np.linalg.svd((M.T @ Q).T, compute_uv=False)[:k]
        if prev is not None and np.all(np.abs(s - prev) <= rtol * max(s[0], 1e-300)):
            converged = True
            break
        prev = s
    if not converged:
        log.warning("truncated_svd: singular values not stable after %d iterations", iterations)

    B = (M.T @ Q).T  # ell x n
    Ub, s, Vt = np.linalg.svd(B, full_matrices=False)
    U = Q @ Ub[:, :k]
    s = s[:k]
    Vt = Vt[:k].copy()
    # make each right singular vector's largest-magnitude entry positive
    signs = np.sign(Vt[np.arange(k), np.argmax(np.abs(Vt), axis=1)])
    signs[signs == 0] = 1.0
    Vt *= signs[:, None]
    U *= signs[None, :]
    return SvdFactors(k, keys, U * s, s, Vt, converged)


def project(factors: SvdFactors, v: SparseVector) -> np.ndarray:
    if v.dim != factors.n:
        raise ValueError(f"vector dim {v.dim} != factor dim {factors.n}")
    return factors.V[:, v.idx] @ v.val


_HEADER = struct.Struct("<qq")


def save_factors(path, factors: SvdFactors) -> None:
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(factors.k, factors.n))
        fh.write(np.asarray(factors.singular_values, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(factors.V, dtype="<f8").tobytes())


def load_factors(path) -> SvdFactors:
    """Singular values and V only; document rows are not part of the checkpoint."""
    with open(path, "rb") as fh:
        k, n = _HEADER.unpack(fh.read(_HEADER.size))
        s = np.frombuffer(fh.read(8 * k), dtype="<f8").astype(np.float64)
        V = np.frombuffer(fh.read(8 * k * n), dtype="<f8").astype(np.float64).reshape(k, n)
    return SvdFactors(k, [], np.zeros((0, k)), s, V)
