import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from splitkrylov.factor import BreakdownError, incomplete_cholesky, incomplete_lu


def _laplace_1d(n):
    return sp.diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1], format="csr")


def _laplace_2d(m):
    t = _laplace_1d(m)
    e = sp.identity(m)
    return (sp.kron(t, e) + sp.kron(e, t)).tocsr()


@given(st.integers(1, 80))
def test_ichol0_of_tridiagonal_is_exact(n):
    a = _laplace_1d(n)
    L = incomplete_cholesky(a, 0.0).toarray()
    ref = np.linalg.cholesky(a.toarray())
    assert np.allclose(L, ref, rtol=0, atol=1e-14 * np.abs(ref).max())


def test_ichol_zero_tolerance_is_full_cholesky():
    a = _laplace_2d(7)
    L = incomplete_cholesky(a, 0.0).toarray()
    assert np.allclose(L @ L.T, a.toarray(), atol=1e-12)


def test_ichol_drop_reduces_fill():
    a = _laplace_2d(9)
    full = incomplete_cholesky(a, 0.0)
    dropped = incomplete_cholesky(a, 1e-1)
    assert dropped.nnz < full.nnz
    assert np.allclose(np.tril(dropped.toarray()), dropped.toarray())


def test_ichol_breakdown():
    with pytest.raises(BreakdownError):
        incomplete_cholesky(sp.csr_array(np.array([[1.0, 2.0], [2.0, 1.0]])))


@given(st.integers(2, 40), st.integers(0, 2**31 - 1))
def test_ilu0_exact_on_full_pattern(n, seed):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((n, n)) + 2 * n * np.eye(n)
    L, U = incomplete_lu(sp.csr_array(a), 0.0)
    assert np.allclose(L.toarray() @ U.toarray(), a, atol=1e-10 * np.abs(a).max())
    assert np.allclose(np.diag(L.toarray()), 1.0)


def test_ilu_reasonable_preconditioner():
    m = 15
    a = (_laplace_2d(m) + 0.3 * sp.kron(sp.identity(m), sp.diags([-np.ones(m - 1), np.ones(m - 1)], [-1, 1]))).tocsr()
    L, U = incomplete_lu(a, 1e-2)
    prec = np.linalg.solve(U.toarray(), np.linalg.solve(L.toarray(), a.toarray()))
    ev = np.linalg.eigvals(prec)
    assert np.max(np.abs(ev - 1)) < 0.9
