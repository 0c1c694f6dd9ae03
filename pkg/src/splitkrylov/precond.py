"""Preconditioner construction and application.

A :class:`PrecondSpec` names a variant and its parameters; :func:`build` turns
it into a :class:`Preconditioner` for a concrete matrix. ``apply`` approximates
``target⁻¹ r``.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .factor import BreakdownError, incomplete_cholesky, incomplete_lu
from .multigrid import HierarchyError, MultigridHierarchy
from .sparse import LinearOperator, ShapeError, as_sparse

__all__ = [
    "BreakdownError",
    "HierarchyError",
    "NotPositiveDefiniteError",
    "PrecondSpec",
    "Preconditioner",
    "build",
    "apply",
    "EXACT_DIRECT_LIMIT",
]

KINDS = ("identity", "jacobi", "exact", "ichol", "ilu", "multigrid", "diagonal", "lu")

#: Above this size the exact symmetric solve switches from sparse LU to inner CG.
EXACT_DIRECT_LIMIT = 50_000


class NotPositiveDefiniteError(ValueError):
    """Target of a symmetric preconditioner is not symmetric positive definite."""


@dataclass(frozen=True)
class PrecondSpec:
    """Preconditioner variant and its parameters.

    ``kind`` is one of ``identity``, ``jacobi``, ``exact`` (symmetric part solved
    to machine accuracy), ``ichol``, ``ilu``, ``multigrid``, ``diagonal`` (inverse
    diagonal of a given matrix, e.g. a mass matrix) and ``lu`` (exact sparse LU
    of a general matrix).
    """

    kind: str = "identity"
    drop_tol: float = 1e-2
    levels: Optional[int] = None
    cycles: int = 2
    smoother_weight: float = 2.0 / 3.0
    sweeps: int = 2

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown preconditioner kind {self.kind!r}; expected one of {KINDS}")
        if self.drop_tol < 0:
            raise ValueError("drop_tol must be non-negative")
        if self.cycles < 1 or self.sweeps < 1:
            raise ValueError("cycles and sweeps must be >= 1")

    @classmethod
    def parse(cls, text: str) -> "PrecondSpec":
        """Parse ``kind[:param]``, e.g. ``ichol:1e-2``, ``multigrid:4`` (cycles), ``exact``."""
        kind, _, arg = text.strip().lower().partition(":")
        aliases = {"none": "identity", "mg": "multigrid", "ic": "ichol", "direct": "lu", "sym": "exact"}
        kind = aliases.get(kind, kind)
        if not arg:
            return cls(kind)
        if kind in ("ichol", "ilu"):
            return cls(kind, drop_tol=float(arg))
        if kind == "multigrid":
            return cls(kind, cycles=int(arg))
        raise ValueError(f"preconditioner {kind!r} takes no parameter")

    @property
    def is_exact(self) -> bool:
        return self.kind in ("exact", "lu")

    def label(self) -> str:
        if self.kind in ("ichol", "ilu"):
            return f"{self.kind}({self.drop_tol:g})"
        if self.kind == "multigrid":
            return f"multigrid({self.cycles}c)"
        return self.kind


class Preconditioner:
    """Prepared preconditioner; ``apply(r) ≈ target⁻¹ r``."""

    def __init__(
        self,
        spec: PrecondSpec,
        n: int,
        solve: Callable[[np.ndarray], np.ndarray],
        symmetric: bool,
        setup_time: float = 0.0,
        solve_adjoint: Optional[Callable[[np.ndarray], np.ndarray]] = None,
        factors=None,
    ):
        self.spec = spec
        self.n = n
        self._solve = solve
        self._solve_adjoint = solve_adjoint if solve_adjoint is not None else (solve if symmetric else None)
        self.symmetric = symmetric
        self.setup_time = setup_time
        self.factors = factors

    @property
    def exact(self) -> bool:
        return self.spec.is_exact

    def apply(self, r: np.ndarray) -> np.ndarray:
        r = np.asarray(r, dtype=np.float64)
        if r.shape[0] != self.n:
            raise ShapeError(f"preconditioner of size {self.n} applied to vector of length {r.shape[0]}")
        return self._solve(r)

    __call__ = apply

    def apply_adjoint(self, r: np.ndarray) -> np.ndarray:
        if self._solve_adjoint is None:
            raise NotImplementedError("preconditioner has no adjoint")
        return self._solve_adjoint(np.asarray(r, dtype=np.float64))

    def as_operator(self) -> LinearOperator:
        return LinearOperator(self.n, self.n, self.apply, self._solve_adjoint, self.symmetric)

    def __repr__(self) -> str:
        return f"Preconditioner({self.spec.label()}, n={self.n})"


def _symmetric_lu(a: sp.csc_array):
    # diagonal pivoting on a symmetric ordering keeps LU = P A Pᵀ, so U's diagonal are LDLᵀ pivots
    lu = spla.splu(a, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0, options={"SymmetricMode": True})
    if np.any(lu.U.diagonal() <= 0.0):
        raise NotPositiveDefiniteError("matrix is not positive definite (non-positive pivot)")
    return lu


def _exact_symmetric(a: sp.csr_array):
    n = a.shape[0]
    if n <= EXACT_DIRECT_LIMIT:
        lu = _symmetric_lu(sp.csc_array(a))
        return lu.solve, lu
    from .krylov import SolverConfig, cg_solve  # local import: krylov depends on this module

    inner = build(PrecondSpec("ichol", drop_tol=1e-3), a)
    cfg = SolverConfig(method="cg", tol=1e-14, max_iter=10 * n)

    def solve(r):
        x, _ = cg_solve(a, r, cfg, precond=inner)
        return x

    return solve, inner


def build(spec, target, grid_hint=None) -> Preconditioner:
    """Prepare a preconditioner for ``target``.

    Parameters
    ----------
    spec : PrecondSpec or str
    target : sparse matrix
        Matrix to approximate the inverse of (for ``diagonal``, the matrix whose
        diagonal is inverted).
    grid_hint : tuple of int, optional
        Interior grid shape; required by ``multigrid``.
    """
    if isinstance(spec, str):
        spec = PrecondSpec.parse(spec)
    a = as_sparse(target).csr
    n, m = a.shape
    if n != m:
        raise ShapeError(f"preconditioner target must be square, got {a.shape}")
    t0 = time.perf_counter()
    symmetric_kinds = ("exact", "ichol", "multigrid")
    if spec.kind in symmetric_kinds and not as_sparse(target).is_symmetric(1e-14):
        raise NotPositiveDefiniteError(f"{spec.kind} preconditioner requires a symmetric target")

    adjoint = None
    factors = None
    if spec.kind == "identity":
        solve, sym = (lambda r: r.copy()), True
    elif spec.kind in ("jacobi", "diagonal"):
        d = a.diagonal()
        if np.any(d == 0.0):
            raise ValueError("zero on the diagonal; Jacobi preconditioner undefined")
        inv = 1.0 / d
        solve, sym = (lambda r: inv * r), True
    elif spec.kind == "exact":
        solve, factors = _exact_symmetric(a)
        sym = True
    elif spec.kind == "lu":
        lu = spla.splu(sp.csc_array(a))
        solve, adjoint, sym, factors = lu.solve, (lambda r: lu.solve(r, trans="T")), False, lu
    elif spec.kind == "ichol":
        L = incomplete_cholesky(a, spec.drop_tol)
        Lr = sp.csr_array(L)
        Lt = sp.csr_array(L.T)

        def solve(r):
            y = spla.spsolve_triangular(Lr, r, lower=True, unit_diagonal=False)
            return spla.spsolve_triangular(Lt, y, lower=False, unit_diagonal=False)

        sym, factors = True, L
    elif spec.kind == "ilu":
        L, U = incomplete_lu(a, spec.drop_tol)
        Lt, Ut = sp.csr_array(L.T), sp.csr_array(U.T)

        def solve(r):
            y = spla.spsolve_triangular(L, r, lower=True, unit_diagonal=True)
            return spla.spsolve_triangular(U, y, lower=False)

        def adjoint(r):
            y = spla.spsolve_triangular(Ut, r, lower=True)
            return spla.spsolve_triangular(Lt, y, lower=False, unit_diagonal=True)

        sym, factors = False, (L, U)
    elif spec.kind == "multigrid":
        if grid_hint is None:
            raise HierarchyError("multigrid needs the structured grid shape (grid_hint)")
        mg = MultigridHierarchy(a, grid_hint, spec.levels, spec.smoother_weight, spec.sweeps)
        cycles = spec.cycles
        solve, sym, factors = (lambda r: mg.solve(r, cycles)), True, mg
    else:  # pragma: no cover - guarded by PrecondSpec
        raise ValueError(spec.kind)
    return Preconditioner(spec, n, solve, sym, time.perf_counter() - t0, adjoint, factors)


def apply(p: Preconditioner, r: np.ndarray) -> np.ndarray:
    """Functional form of :meth:`Preconditioner.apply`."""
    return p.apply(r)


def with_kind(spec: PrecondSpec, kind: str) -> PrecondSpec:
    return replace(spec, kind=kind)
