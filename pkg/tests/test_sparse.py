import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from splitkrylov.sparse import LinearOperator, ShapeError, SparseMatrix, SplitOperator, split, spmv


def _random_sparse(n, seed, density=0.2):
    rng = np.random.default_rng(seed)
    return sp.random(n, n, density=density, random_state=rng, format="csr", data_rvs=rng.standard_normal)


@given(st.integers(1, 60), st.integers(0, 2**31 - 1))
def test_split_parts_are_exact(n, seed):
    a = _random_sparse(n, seed)
    so = split(a)
    h, s = so.h.toarray(), so.s.toarray()
    assert np.array_equal(h, h.T)
    assert np.array_equal(s, -s.T)
    dense = a.toarray()
    assert np.linalg.norm(h + s - dense) <= 1e-15 * max(np.linalg.norm(dense), 1.0)


@given(st.integers(1, 60), st.integers(0, 2**31 - 1))
def test_skew_quadratic_form_vanishes(n, seed):
    so = split(_random_sparse(n, seed))
    x = np.random.default_rng(seed + 1).standard_normal(n)
    assert abs(x @ spmv(so.s, x)) <= 1e-12 * max(so.s.frobenius(), 1e-300) * (x @ x) + 1e-300


@given(st.integers(1, 200), st.integers(0, 2**31 - 1))
def test_spmv_matches_dense(n, seed):
    a = _random_sparse(n, seed, density=0.1)
    x = np.random.default_rng(seed).standard_normal(n)
    ref = a.toarray() @ x
    got = spmv(SparseMatrix(a), x)
    assert np.linalg.norm(got - ref) <= 1e-13 * max(np.linalg.norm(ref), 1e-300) + 1e-300


def test_split_shares_symmetrized_pattern():
    a = sp.csr_array(np.array([[1.0, 2.0, 0.0], [0.0, 3.0, 0.0], [4.0, 0.0, 5.0]]))
    so = split(a)
    assert np.array_equal(so.h.col_indices, so.s.col_indices)
    assert np.array_equal(so.h.row_offsets, so.s.row_offsets)


def test_split_rejects_rectangular():
    with pytest.raises(ShapeError):
        split(np.ones((2, 3)))


def test_sparse_matrix_is_immutable():
    m = SparseMatrix(np.eye(3))
    with pytest.raises(ValueError):
        m.values[0] = 2.0


def test_duplicates_are_summed():
    coo = sp.coo_array((np.array([1.0, 2.0]), (np.array([0, 0]), np.array([1, 1]))), shape=(2, 2))
    m = SparseMatrix(coo)
    assert m.nnz == 1 and m.toarray()[0, 1] == 3.0


def test_from_csr_validates():
    m = SparseMatrix.from_csr(2, 2, [0, 1, 2], [1, 0], [1.0, 2.0])
    assert np.array_equal(m.toarray(), [[0.0, 1.0], [2.0, 0.0]])
    with pytest.raises(ShapeError):
        SparseMatrix.from_csr(2, 2, [0, 2, 2], [1, 0], [1.0, 2.0])
    with pytest.raises(ShapeError):
        SparseMatrix.from_csr(2, 2, [0, 1, 2], [1, 5], [1.0, 2.0])
    with pytest.raises(ShapeError):
        SparseMatrix.from_csr(2, 2, [0, 1], [1], [1.0])


def test_spmv_shape_error():
    with pytest.raises(ShapeError):
        spmv(np.eye(3), np.ones(2))


def test_from_parts_and_check():
    h = np.array([[2.0, 1.0], [1.0, 2.0]])
    s = np.array([[0.0, 3.0], [-3.0, 0.0]])
    so = SplitOperator.from_parts(h, s)
    so.check()
    assert np.array_equal(so.a.toarray(), h + s)
    with pytest.raises(ValueError):
        SplitOperator.from_parts(s, h).check()


def test_linear_operator_adjoint():
    m = np.arange(6.0).reshape(2, 3)
    op = LinearOperator(3, 2, lambda x: m @ x, lambda y: m.T @ y)
    assert op.shape == (2, 3)
    assert np.array_equal(op.to_dense(), m)
    assert np.array_equal(op.T.to_dense(), m.T)
    with pytest.raises(ShapeError):
        op.apply(np.ones(2))
    with pytest.raises(NotImplementedError):
        LinearOperator(3, 2, lambda x: m @ x).apply_adjoint(np.ones(2))
