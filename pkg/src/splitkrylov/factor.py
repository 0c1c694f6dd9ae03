"""Incomplete Cholesky and incomplete LU factorizations with a drop tolerance.

Both factorizations keep every entry of the input sparsity pattern and drop
*fill* entries whose Schur-complement value is below ``drop_tol`` times the
2-norm of the corresponding row of the input. With ``drop_tol = 0`` nothing is
dropped and the exact factors are returned.
"""
from __future__ import annotations

import heapq
import math

import numpy as np
import scipy.sparse as sp

__all__ = ["BreakdownError", "incomplete_cholesky", "incomplete_lu"]


class BreakdownError(ArithmeticError):
    """Non-positive (or zero) pivot during an incomplete factorization."""

    def __init__(self, row: int, pivot: float):
        super().__init__(f"factorization breakdown at pivot row {row} (pivot {pivot:.3e})")
        self.row = row
        self.pivot = pivot


def _row_norms(a: sp.csr_array) -> np.ndarray:
    sq = a.copy()
    sq.data = sq.data**2
    return np.sqrt(np.asarray(sq.sum(axis=1)).ravel())


def incomplete_cholesky(a, drop_tol: float = 0.0) -> sp.csc_array:
    """Left-looking incomplete Cholesky ``a ≈ L Lᵀ``.

    Parameters
    ----------
    a : sparse symmetric positive definite matrix
    drop_tol : float
        Relative drop tolerance for fill entries.

    Returns
    -------
    L : scipy.sparse.csc_array
        Lower triangular factor including the diagonal.

    Raises
    ------
    BreakdownError
        If a pivot is not positive.
    """
    a = sp.csc_array(a)
    a.sort_indices()
    n = a.shape[0]
    norms = _row_norms(sp.csr_array(a))
    indptr, indices, data = a.indptr, a.indices, a.data

    lrows: list[np.ndarray] = [None] * n  # strictly-lower rows of column k, sorted
    lvals: list[np.ndarray] = [None] * n
    diag = np.zeros(n)
    ptr = np.zeros(n, dtype=np.int64)
    # link[j]: columns k < j whose next unused entry sits in row j
    link: list[list[int]] = [[] for _ in range(n)]

    w = np.zeros(n)
    touched = np.zeros(n, dtype=bool)
    original = np.zeros(n, dtype=bool)

    for j in range(n):
        s, e = indptr[j], indptr[j + 1]
        rows = indices[s:e]
        sel = rows >= j
        rows = rows[sel]
        w[rows] = data[s:e][sel]
        touched[rows] = True
        original[rows] = True
        active = list(rows)

        for k in link[j]:
            p = ptr[k]
            rk, vk = lrows[k], lvals[k]
            ljk = vk[p]
            idx = rk[p:]
            new = idx[~touched[idx]]
            if new.size:
                touched[new] = True
                active.extend(new.tolist())
            w[idx] -= vk[p:] * ljk
            ptr[k] = p + 1
            if p + 1 < rk.size:
                link[rk[p + 1]].append(k)
        link[j] = []

        pivot = w[j]
        if not pivot > 0.0:
            raise BreakdownError(j, float(pivot))
        ljj = math.sqrt(pivot)
        diag[j] = ljj

        cand = np.array(sorted(r for r in active if r > j), dtype=np.int64)
        vals = w[cand]
        keep = (original[cand] | (np.abs(vals) >= drop_tol * norms[j])) & (vals != 0.0)
        cand, vals = cand[keep], vals[keep] / ljj
        lrows[j], lvals[j] = cand, vals
        if cand.size:
            link[cand[0]].append(j)

        act = np.asarray(active, dtype=np.int64)
        w[act] = 0.0
        touched[act] = False
        original[act] = False

    counts = np.array([1 + lrows[j].size for j in range(n)], dtype=np.int64)
    colptr = np.concatenate([[0], np.cumsum(counts)])
    rowind = np.empty(colptr[-1], dtype=np.int64)
    vals = np.empty(colptr[-1])
    for j in range(n):
        s = colptr[j]
        rowind[s] = j
        vals[s] = diag[j]
        rowind[s + 1:colptr[j + 1]] = lrows[j]
        vals[s + 1:colptr[j + 1]] = lvals[j]
    return sp.csc_array((vals, rowind.astype(np.int32), colptr.astype(np.int32)), shape=(n, n))


def incomplete_lu(a, drop_tol: float = 0.0) -> tuple[sp.csr_array, sp.csr_array]:
    """Row-oriented (IKJ) incomplete LU without pivoting, ``a ≈ L U``.

    Returns
    -------
    L : csr_array
        Unit lower triangular (unit diagonal stored).
    U : csr_array
        Upper triangular.
    """
    a = sp.csr_array(a)
    a.sort_indices()
    n = a.shape[0]
    norms = _row_norms(a)
    indptr, indices, data = a.indptr, a.indices, a.data

    ucols: list[np.ndarray] = [None] * n  # strictly-upper part of row k
    uvals: list[np.ndarray] = [None] * n
    udiag = np.zeros(n)
    lrows_c, lrows_v = [], []

    w = np.zeros(n)
    touched = np.zeros(n, dtype=bool)
    original = np.zeros(n, dtype=bool)

    for i in range(n):
        s, e = indptr[i], indptr[i + 1]
        cols = indices[s:e]
        w[cols] = data[s:e]
        touched[cols] = True
        original[cols] = True
        active = cols.tolist()
        heap = [c for c in active if c < i]
        heapq.heapify(heap)
        tau = drop_tol * norms[i]
        lc, lv = [], []
        while heap:
            k = heapq.heappop(heap)
            val = w[k]
            if val == 0.0:
                continue
            if not original[k] and abs(val) < tau:
                w[k] = 0.0
                continue
            lik = val / udiag[k]
            lc.append(k)
            lv.append(lik)
            idx = ucols[k]
            if idx.size:
                new = idx[~touched[idx]]
                if new.size:
                    touched[new] = True
                    active.extend(new.tolist())
                    for c in new[new < i].tolist():
                        heapq.heappush(heap, c)
                w[idx] -= lik * uvals[k]
        lrows_c.append(np.array(lc + [i], dtype=np.int64))
        lrows_v.append(np.array(lv + [1.0]))

        act = np.asarray(active, dtype=np.int64)
        up = np.sort(act[act > i])
        vals = w[up]
        keep = (original[up] | (np.abs(vals) >= tau)) & (vals != 0.0)
        ucols[i], uvals[i] = up[keep], vals[keep]
        udiag[i] = w[i]
        if udiag[i] == 0.0:
            raise BreakdownError(i, 0.0)
        w[act] = 0.0
        touched[act] = False
        original[act] = False

    L = _rows_to_csr(lrows_c, lrows_v, n)
    U = _rows_to_csr(
        [np.concatenate([[i], ucols[i]]) for i in range(n)],
        [np.concatenate([[udiag[i]], uvals[i]]) for i in range(n)],
        n,
    )
    return L, U


def _rows_to_csr(cols, vals, n) -> sp.csr_array:
    counts = np.array([c.size for c in cols], dtype=np.int64)
    indptr = np.concatenate([[0], np.cumsum(counts)])
    m = sp.csr_array(
        (np.concatenate(vals), np.concatenate(cols).astype(np.int32), indptr.astype(np.int32)), shape=(n, n)
    )
    m.sort_indices()
    return m
