"""Matrix Market coordinate-format reader and writer (real general/symmetric)."""
from __future__ import annotations

from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .sparse import SparseMatrix, as_sparse

__all__ = ["MatrixMarketError", "mm_read", "mm_write", "vector_read", "vector_write"]


class MatrixMarketError(ValueError):
    """Malformed or unsupported Matrix Market file."""

    def __init__(self, path, lineno: int, msg: str):
        super().__init__(f"{path}:{lineno}: {msg}")
        self.lineno = lineno


def _parse_header(path, line: str):
    tokens = line.strip().lower().split()
    if len(tokens) != 5 or tokens[0] != "%%matrixmarket":
        raise MatrixMarketError(path, 1, "missing %%MatrixMarket banner")
    _, obj, fmt, field, symmetry = tokens
    if obj != "matrix":
        raise MatrixMarketError(path, 1, f"unsupported object {obj!r}")
    if fmt not in ("coordinate", "array"):
        raise MatrixMarketError(path, 1, f"unsupported format {fmt!r}")
    if field not in ("real", "double", "integer"):
        raise MatrixMarketError(path, 1, f"unsupported field {field!r} (only real)")
    if symmetry not in ("general", "symmetric"):
        raise MatrixMarketError(path, 1, f"unsupported symmetry {symmetry!r}")
    return fmt, symmetry


def _data_lines(fh, start: int):
    for lineno, line in enumerate(fh, start=start):
        s = line.strip()
        if s and not s.startswith("%"):
            yield lineno, s


def mm_read(path) -> SparseMatrix:
    """Read a coordinate Matrix Market file.

    Symmetric storage is expanded to full storage; duplicate entries are summed.
    """
    path = Path(path)
    with path.open() as fh:
        header = fh.readline()
        fmt, symmetry = _parse_header(path, header)
        if fmt != "coordinate":
            raise MatrixMarketError(path, 1, "only coordinate matrices are supported; use vector_read")
        lines = _data_lines(fh, 2)
        try:
            lineno, size = next(lines)
        except StopIteration:
            raise MatrixMarketError(path, 2, "missing size line") from None
        try:
            n_rows, n_cols, nnz = (int(t) for t in size.split())
        except ValueError:
            raise MatrixMarketError(path, lineno, f"bad size line {size!r}") from None
        rows = np.empty(nnz, dtype=np.int64)
        cols = np.empty(nnz, dtype=np.int64)
        vals = np.empty(nnz, dtype=np.float64)
        k = 0
        for lineno, s in lines:
            if k >= nnz:
                raise MatrixMarketError(path, lineno, "more entries than declared")
            parts = s.split()
            if len(parts) != 3:
                raise MatrixMarketError(path, lineno, f"expected 'row col value', got {s!r}")
            try:
                i, j, v = int(parts[0]), int(parts[1]), float(parts[2])
            except ValueError:
                raise MatrixMarketError(path, lineno, f"cannot parse entry {s!r}") from None
            if not (1 <= i <= n_rows and 1 <= j <= n_cols):
                raise MatrixMarketError(path, lineno, f"index ({i}, {j}) out of range")
            if symmetry == "symmetric" and j > i:
                raise MatrixMarketError(path, lineno, "symmetric storage must be lower triangular")
            rows[k], cols[k], vals[k] = i - 1, j - 1, v
            k += 1
        if k != nnz:
            raise MatrixMarketError(path, lineno if nnz else 2, f"declared {nnz} entries, found {k}")
    if symmetry == "symmetric":
        off = rows != cols
        rows, cols, vals = (
            np.concatenate([rows, cols[off]]),
            np.concatenate([cols, rows[off]]),
            np.concatenate([vals, vals[off]]),
        )
    return SparseMatrix(sp.coo_array((vals, (rows, cols)), shape=(n_rows, n_cols)))


def mm_write(path, a, symmetric: bool = False) -> None:
    """Write ``a`` in coordinate format with round-trip exact values (``repr`` floats)."""
    a = as_sparse(a)
    coo = a.csr.tocoo()
    rows, cols, vals = coo.row, coo.col, coo.data
    if symmetric:
        if not a.is_symmetric():
            raise ValueError("matrix is not symmetric")
        keep = rows >= cols
        rows, cols, vals = rows[keep], cols[keep], vals[keep]
    kind = "symmetric" if symmetric else "general"
    with Path(path).open("w") as fh:
        fh.write(f"%%MatrixMarket matrix coordinate real {kind}\n")
        fh.write(f"{a.n_rows} {a.n_cols} {len(vals)}\n")
        fh.writelines(f"{i + 1} {j + 1} {float(v)!r}\n" for i, j, v in zip(rows, cols, vals))


def vector_write(path, x) -> None:
    """Write a dense vector as a Matrix Market ``array`` file (n x 1)."""
    x = np.asarray(x, dtype=np.float64).ravel()
    with Path(path).open("w") as fh:
        fh.write("%%MatrixMarket matrix array real general\n")
        fh.write(f"{len(x)} 1\n")
        fh.writelines(f"{float(v)!r}\n" for v in x)


def vector_read(path) -> np.ndarray:
    """Read a right-hand side stored as ``array`` (n x 1) or coordinate (n x 1) file."""
    path = Path(path)
    with path.open() as fh:
        fmt, _ = _parse_header(path, fh.readline())
        if fmt == "coordinate":
            return mm_read(path).toarray().ravel()
        lines = _data_lines(fh, 2)
        lineno, size = next(lines)
        parts = size.split()
        if len(parts) != 2 or int(parts[1]) != 1:
            raise MatrixMarketError(path, lineno, "vector file must have a single column")
        n = int(parts[0])
        vals = []
        for lineno, s in lines:
            try:
                vals.append(float(s))
            except ValueError:
                raise MatrixMarketError(path, lineno, f"cannot parse value {s!r}") from None
        if len(vals) != n:
            raise MatrixMarketError(path, lineno, f"declared {n} values, found {len(vals)}")
        return np.array(vals)
