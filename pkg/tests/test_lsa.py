import numpy as np
import pytest
import scipy.sparse as sp

import oracles
from polydiff import lsa
from polydiff.textfeat import SparseVector


def test_jacobi_oracle_agrees_with_definition(rng):
    # oracle sanity: singular values squared are the eigenvalues of A^T A
    A = rng.standard_normal((12, 5))
    s = oracles.jacobi_singular_values(A)
    eig = np.sort(np.linalg.eigvalsh(A.T @ A))[::-1]
    assert np.allclose(s**2, eig, rtol=1e-10)


@pytest.mark.parametrize("seed", range(5))
def test_top_singular_values_match_oracle(seed):
    A = np.random.default_rng(seed).standard_normal((50, 20))
    f = lsa.truncated_svd(A, 5, seed=seed)
    expected = oracles.jacobi_singular_values(A)[:5]
    assert np.allclose(f.singular_values, expected, rtol=1e-6, atol=0)
    assert np.allclose(f.V @ f.V.T, np.eye(5), atol=1e-6)


def test_rank_one_reconstructs_exactly(rng):
    u, v = rng.standard_normal(30), rng.standard_normal(12)
    A = np.outer(u, v)
    f = lsa.truncated_svd(A, 1)
    assert np.allclose(f.reconstruct(), A, atol=1e-10)
    assert f.singular_values[0] == pytest.approx(np.linalg.norm(u) * np.linalg.norm(v), rel=1e-12)


def test_sign_convention(rng):
    f = lsa.truncated_svd(rng.standard_normal((40, 15)), 4)
    for row in f.V:
        assert row[np.argmax(np.abs(row))] > 0


def test_deterministic_for_seed(rng):
    A = rng.standard_normal((30, 10))
    a, b = lsa.truncated_svd(A, 3, seed=7), lsa.truncated_svd(A, 3, seed=7)
    assert np.array_equal(a.V, b.V)
    assert np.array_equal(a.singular_values, b.singular_values)


def test_sparse_rows_input(rng):
    # rank 6, so the sketch captures the whole row space and projection is exact
    dense = rng.poisson(0.5, (25, 6)).astype(float) @ rng.poisson(0.5, (6, 40)).astype(float)
    rows = [(f"d{i}", SparseVector.from_dense(r)) for i, r in enumerate(dense)]
    f = lsa.truncated_svd(rows, 4)
    assert f.keys == [f"d{i}" for i in range(25)]
    g = lsa.truncated_svd(sp.csr_matrix(dense), 4)
    assert np.allclose(f.singular_values, g.singular_values)
    # projecting a training row gives its U * sigma row
    assert np.allclose(lsa.project(f, rows[3][1]), f.U_rows[3], atol=1e-9)


def test_bad_k(rng):
    A = rng.standard_normal((10, 6))
    with pytest.raises(ValueError):
        lsa.truncated_svd(A, 6)
    with pytest.raises(ValueError):
        lsa.truncated_svd(rng.standard_normal((3, 8)), 4)


def test_unconverged_flag(rng):
    A = rng.standard_normal((60, 40))
    f = lsa.truncated_svd(A, 10, iterations=1)
    assert f.converged is False


def test_factor_file_round_trip(tmp_path, rng):
    f = lsa.truncated_svd(rng.standard_normal((20, 9)), 3)
    lsa.save_factors(tmp_path / "f.bin", f)
    g = lsa.load_factors(tmp_path / "f.bin")
    assert np.array_equal(g.V, f.V)
    assert np.array_equal(g.singular_values, f.singular_values)


def test_diagonal_matrix():
    f = lsa.truncated_svd(np.diag([3.0, 2.0, 1.0]), 2)
    assert np.allclose(f.singular_values, [3.0, 2.0], atol=1e-12)


def test_project_zero_and_linear(rng):
    f = lsa.truncated_svd(rng.standard_normal((30, 12)), 3)
    assert np.array_equal(lsa.project(f, SparseVector.zeros(12)), np.zeros(3))
    x, y = rng.standard_normal(12), rng.standard_normal(12)
    lhs = lsa.project(f, SparseVector.from_dense(2 * x + 3 * y))
    rhs = 2 * lsa.project(f, SparseVector.from_dense(x)) + 3 * lsa.project(f, SparseVector.from_dense(y))
    assert np.allclose(lhs, rhs, atol=1e-12)
