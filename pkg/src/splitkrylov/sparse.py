"""Compressed-row sparse matrices, symmetric/skew splitting and matrix-free operators.

Storage and products are delegated to :mod:`scipy.sparse`; this module adds the
invariant checks, an immutable surface, and the splitting ``A = H + S``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

__all__ = [
    "ShapeError",
    "SparseMatrix",
    "SplitOperator",
    "LinearOperator",
    "as_sparse",
    "aslinearoperator",
    "split",
    "spmv",
]


class ShapeError(ValueError):
    """Raised on non-square input or mismatched dimensions."""


class SparseMatrix:
    """Immutable real CSR matrix.

    Parameters
    ----------
    data : scipy sparse matrix, ndarray or SparseMatrix
        Anything :func:`scipy.sparse.csr_array` accepts. Duplicate entries are
        summed and column indices sorted, so the stored pattern is canonical.
    """

    __slots__ = ("_csr",)

    def __init__(self, data):
        if isinstance(data, SparseMatrix):
            csr = data._csr
        else:
            csr = sp.csr_array(data, dtype=np.float64, copy=True)
            csr.sum_duplicates()
            csr.sort_indices()
        for arr in (csr.data, csr.indices, csr.indptr):
            arr.flags.writeable = False
        self._csr = csr

    @classmethod
    def from_csr(cls, n_rows, n_cols, row_offsets, col_indices, values) -> "SparseMatrix":
        """Build from raw CSR arrays, validating the storage invariants."""
        row_offsets = np.asarray(row_offsets, dtype=np.int64)
        col_indices = np.asarray(col_indices, dtype=np.int64)
        values = np.asarray(values, dtype=np.float64)
        if row_offsets.shape != (n_rows + 1,) or row_offsets[0] != 0:
            raise ShapeError("row_offsets must have length n_rows+1 and start at 0")
        if np.any(np.diff(row_offsets) < 0):
            raise ShapeError("row_offsets must be non-decreasing")
        if row_offsets[-1] != len(values) or len(col_indices) != len(values):
            raise ShapeError("last row offset must equal the number of stored values")
        if len(col_indices) and (col_indices.min() < 0 or col_indices.max() >= n_cols):
            raise ShapeError("column index out of range")
        for i in range(n_rows):
            cols = col_indices[row_offsets[i]:row_offsets[i + 1]]
            if np.any(np.diff(cols) <= 0):
                raise ShapeError(f"row {i}: column indices must be strictly increasing")
        csr = sp.csr_array((values, col_indices, row_offsets), shape=(n_rows, n_cols))
        return cls(csr)

    @classmethod
    def identity(cls, n: int) -> "SparseMatrix":
        return cls(sp.identity(n, format="csr"))

    # -- storage view -------------------------------------------------------
    @property
    def csr(self) -> sp.csr_array:
        """Underlying scipy array (read-only buffers)."""
        return self._csr

    @property
    def shape(self) -> tuple[int, int]:
        return self._csr.shape

    @property
    def n_rows(self) -> int:
        return self._csr.shape[0]

    @property
    def n_cols(self) -> int:
        return self._csr.shape[1]

    @property
    def row_offsets(self) -> np.ndarray:
        return self._csr.indptr

    @property
    def col_indices(self) -> np.ndarray:
        return self._csr.indices

    @property
    def values(self) -> np.ndarray:
        return self._csr.data

    @property
    def nnz(self) -> int:
        return self._csr.nnz

    # -- arithmetic ---------------------------------------------------------
    @property
    def T(self) -> "SparseMatrix":
        return SparseMatrix(self._csr.T)

    def toarray(self) -> np.ndarray:
        return self._csr.toarray()

    def diagonal(self) -> np.ndarray:
        return self._csr.diagonal()

    def __matmul__(self, other):
        if isinstance(other, SparseMatrix):
            return SparseMatrix(self._csr @ other._csr)
        return spmv(self, other)

    def __add__(self, other: "SparseMatrix") -> "SparseMatrix":
        return SparseMatrix(self._csr + as_sparse(other)._csr)

    def __sub__(self, other: "SparseMatrix") -> "SparseMatrix":
        return SparseMatrix(self._csr - as_sparse(other)._csr)

    def __neg__(self) -> "SparseMatrix":
        return SparseMatrix(-self._csr)

    def __mul__(self, alpha: float) -> "SparseMatrix":
        return SparseMatrix(self._csr * float(alpha))

    __rmul__ = __mul__

    def frobenius(self) -> float:
        return float(np.linalg.norm(self._csr.data))

    def is_symmetric(self, tol: float = 0.0) -> bool:
        if self.n_rows != self.n_cols:
            return False
        d = (self._csr - self._csr.T).tocsr()
        return d.nnz == 0 or float(abs(d).max()) <= tol * max(self.frobenius(), 1.0)

    def __repr__(self) -> str:
        return f"SparseMatrix(shape={self.shape}, nnz={self.nnz})"


def as_sparse(a) -> SparseMatrix:
    return a if isinstance(a, SparseMatrix) else SparseMatrix(a)


def spmv(a, x) -> np.ndarray:
    """Return ``a @ x`` for a sparse matrix and a dense vector (or block of vectors)."""
    a = as_sparse(a)
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != a.n_cols:
        raise ShapeError(f"spmv: matrix has {a.n_cols} columns, vector has length {x.shape[0]}")
    return a.csr @ x


@dataclass(frozen=True)
class SplitOperator:
    """Operator ``a`` with symmetric part ``h`` and skew-symmetric part ``s``.

    ``grid`` optionally records the interior grid shape of a structured
    discretization; geometric multigrid needs it.
    """

    a: SparseMatrix
    h: SparseMatrix
    s: SparseMatrix
    grid: Optional[tuple[int, ...]] = field(default=None, compare=False)

    @property
    def n(self) -> int:
        return self.a.n_rows

    @classmethod
    def from_parts(cls, h, s, grid=None) -> "SplitOperator":
        """Assemble ``a = h + s`` from explicitly given parts (no re-splitting)."""
        h, s = as_sparse(h), as_sparse(s)
        if h.shape != s.shape or h.n_rows != h.n_cols:
            raise ShapeError("symmetric and skew parts must be square and of equal shape")
        return cls(h + s, h, s, grid)

    def check(self, tol: float = 0.0) -> None:
        """Raise ``ValueError`` unless h = hᵀ, s = -sᵀ and h + s = a."""
        if not self.h.is_symmetric(tol):
            raise ValueError("symmetric part is not symmetric")
        d = (self.s.csr + self.s.csr.T).tocsr()
        if d.nnz and float(abs(d).max()) > tol * max(self.s.frobenius(), 1.0):
            raise ValueError("skew part is not skew-symmetric")
        r = (self.h.csr + self.s.csr - self.a.csr).tocsr()
        if r.nnz and float(abs(r).max()) > max(tol, 1e-15) * max(self.a.frobenius(), 1.0):
            raise ValueError("h + s differs from a")


def split(a) -> SplitOperator:
    """Split a square matrix into ``h = (a + aᵀ)/2`` and ``s = (a - aᵀ)/2``.

    Both parts are stored on the symmetrized pattern of ``a`` (explicit zeros
    kept), so ``h`` and ``s`` share one sparsity structure.
    """
    a = as_sparse(a)
    if a.n_rows != a.n_cols:
        raise ShapeError(f"split needs a square matrix, got {a.shape}")
    coo = a.csr.tocoo()
    r, c, v = coo.row, coo.col, 0.5 * coo.data
    rows, cols = np.concatenate([r, c]), np.concatenate([c, r])
    # identical coordinate lists: duplicates are summed, explicit zeros survive
    h = sp.csr_array((np.concatenate([v, v]), (rows, cols)), shape=a.shape)
    s = sp.csr_array((np.concatenate([v, -v]), (rows, cols)), shape=a.shape)
    return SplitOperator(a, SparseMatrix(h), SparseMatrix(s))


class LinearOperator:
    """Matrix-free linear map ``R^dim_in -> R^dim_out``.

    Parameters
    ----------
    dim_in, dim_out : int
    apply : callable
        ``x -> A x``.
    apply_adjoint : callable, optional
        ``y -> Aᵀ y``.
    """

    def __init__(
        self,
        dim_in: int,
        dim_out: int,
        apply: Callable[[np.ndarray], np.ndarray],
        apply_adjoint: Optional[Callable[[np.ndarray], np.ndarray]] = None,
        symmetric: bool = False,
    ):
        self.dim_in = int(dim_in)
        self.dim_out = int(dim_out)
        self._apply = apply
        self._adjoint = apply_adjoint
        self.symmetric = symmetric
        if symmetric and apply_adjoint is None:
            self._adjoint = apply

    @property
    def shape(self) -> tuple[int, int]:
        return (self.dim_out, self.dim_in)

    @property
    def has_adjoint(self) -> bool:
        return self._adjoint is not None

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[0] != self.dim_in:
            raise ShapeError(f"operator expects length {self.dim_in}, got {x.shape[0]}")
        return np.asarray(self._apply(x), dtype=np.float64)

    def apply_adjoint(self, y: np.ndarray) -> np.ndarray:
        if self._adjoint is None:
            raise NotImplementedError("operator has no adjoint")
        y = np.asarray(y, dtype=np.float64)
        if y.shape[0] != self.dim_out:
            raise ShapeError(f"adjoint expects length {self.dim_out}, got {y.shape[0]}")
        return np.asarray(self._adjoint(y), dtype=np.float64)

    __call__ = apply

    def __matmul__(self, x):
        return self.apply(x)

    @property
    def T(self) -> "LinearOperator":
        if self._adjoint is None:
            raise NotImplementedError("operator has no adjoint")
        return LinearOperator(self.dim_out, self.dim_in, self._adjoint, self._apply, self.symmetric)

    def to_dense(self) -> np.ndarray:
        """Materialize column by column; meant for small test sizes."""
        eye = np.eye(self.dim_in)
        return np.column_stack([self.apply(eye[:, j]) for j in range(self.dim_in)])


def aslinearoperator(a) -> LinearOperator:
    """Wrap a sparse/dense matrix (or pass through a LinearOperator)."""
    if isinstance(a, LinearOperator):
        return a
    if isinstance(a, SplitOperator):
        a = a.a
    if isinstance(a, np.ndarray):
        m = a
        return LinearOperator(m.shape[1], m.shape[0], lambda x: m @ x, lambda y: m.T @ y)
    m = as_sparse(a).csr
    mt = m.T.tocsr()
    return LinearOperator(m.shape[1], m.shape[0], lambda x: m @ x, lambda y: mt @ y)
