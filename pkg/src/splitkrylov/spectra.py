"""Condition numbers and spectral widths of explicit and matrix-free operators.

``cond2`` reports the spectral condition number ``σ_max / σ_min``. Small
operators are materialized and handed to a dense SVD; larger ones use power
iteration on ``opᵀop`` for ``σ_max`` and inverse iteration for ``σ_min``.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .discretize import BlockSystem, ProblemSpec, assemble, schur_operator
from .precond import PrecondSpec, Preconditioner, build
from .sparse import LinearOperator, SparseMatrix, SplitOperator, aslinearoperator

__all__ = [
    "SpectrumError",
    "SpectrumReport",
    "DenseSpectrum",
    "cond2",
    "spectral_width",
    "dense_eig_oracle",
    "refinement_study",
    "TARGETS",
    "DENSE_LIMIT",
    "loglog_slope",
]

DENSE_LIMIT = 2000
_SINGULAR_RTOL = 1e-13


class SpectrumError(RuntimeError):
    """Spectral quantity cannot be computed (e.g. no inverse for ``σ_min``)."""


@dataclass
class SpectrumReport:
    """Extreme singular values of an operator.

    ``status`` is ``"ok"`` or ``"singular"`` (then ``kappa2`` is ``inf``).
    """

    sigma_max: float
    sigma_min: float
    kappa2: float
    n: int
    method: str
    lambda_width: Optional[float] = None
    status: str = "ok"
    eigenvalues: Optional[np.ndarray] = None


@dataclass
class DenseSpectrum:
    singular_values: np.ndarray  # descending
    eigenvalues: np.ndarray  # ascending for symmetric input, unordered complex otherwise
    symmetric: bool


def _to_dense(op) -> np.ndarray:
    if isinstance(op, np.ndarray):
        return op
    if isinstance(op, SplitOperator):
        return op.a.toarray()
    if isinstance(op, SparseMatrix):
        return op.toarray()
    if sp.issparse(op):
        return op.toarray()
    if isinstance(op, LinearOperator):
        return op.to_dense()
    raise TypeError(f"cannot materialize {type(op).__name__}")


def dense_eig_oracle(a, limit: int = DENSE_LIMIT) -> DenseSpectrum:
    """All singular values and eigenvalues of a small operator.

    Eigenvalues are real and ascending when the input is symmetric.

    Raises
    ------
    SpectrumError
        If the dimension exceeds ``limit``.
    """
    n = a.shape[0] if not isinstance(a, LinearOperator) else a.dim_in
    if n > limit:
        raise SpectrumError(f"dense oracle limited to n <= {limit}, got {n}")
    m = np.asarray(_to_dense(a), dtype=np.float64)
    sv = np.linalg.svd(m, compute_uv=False)
    symmetric = m.shape[0] == m.shape[1] and np.array_equal(m, m.T)
    if symmetric:
        ev = np.linalg.eigvalsh(m)
    elif m.shape[0] == m.shape[1]:
        ev = np.linalg.eigvals(m)
    else:
        ev = np.array([])
    return DenseSpectrum(sv, ev, symmetric)


def _complement_basis(kernel: np.ndarray) -> np.ndarray:
    """Orthonormal basis of the orthogonal complement of ``span(kernel)``."""
    kernel = np.atleast_2d(np.asarray(kernel, dtype=np.float64))
    if kernel.shape[0] < kernel.shape[1]:
        kernel = kernel.T
    q, _ = np.linalg.qr(kernel, mode="complete")
    return q[:, kernel.shape[1]:]


def _report_from_sv(sv: np.ndarray, method: str, n: int) -> SpectrumReport:
    smax, smin = float(sv[0]), float(sv[-1])
    if smax == 0.0 or smin <= _SINGULAR_RTOL * smax:
        return SpectrumReport(smax, smin, math.inf, n, method, status="singular")
    return SpectrumReport(smax, smin, smax / smin, n, method)


def _converged(hist: list[float], tol: float, window: int) -> bool:
    if len(hist) <= window:
        return False
    ref = hist[-1]
    return all(abs(ref - v) <= tol * abs(ref) for v in hist[-window - 1:-1])


def _power_sym(apply: Callable, n: int, rng, tol: float, max_sweeps: int, project=None) -> float:
    """Largest eigenvalue of a symmetric positive semidefinite map by power iteration."""
    x = rng.standard_normal(n)
    if project is not None:
        x = project(x)
    x /= np.linalg.norm(x)
    hist: list[float] = []
    for _ in range(max_sweeps):
        y = apply(x)
        if project is not None:
            y = project(y)
        hist.append(float(x @ y))
        ny = float(np.linalg.norm(y))
        if ny == 0.0:
            return 0.0
        x = y / ny
        if _converged(hist, tol, 10):
            break
    return hist[-1]


def _gmres_inverse(op: LinearOperator) -> Callable:
    from .krylov import SolverConfig, gmres_solve

    # inverse iteration tolerates a modest inner accuracy; give up only when far off
    cfg = SolverConfig("gmres", tol=1e-10, max_iter=max(3 * op.dim_in, 50))

    def solve(y):
        x, rep = gmres_solve(op, y, cfg)
        if not rep.final_relres <= 1e-6:
            raise SpectrumError("inverse iteration: inner solve did not converge; σ_min unavailable")
        return x

    return solve


def cond2(
    op,
    method: str = "auto",
    inverse=None,
    kernel: Optional[np.ndarray] = None,
    tol: float = 1e-8,
    max_sweeps: int = 5000,
    seed: int = 0,
    dense_limit: int = DENSE_LIMIT,
) -> SpectrumReport:
    """Spectral condition number of a square operator.

    Parameters
    ----------
    op : sparse matrix, ndarray, SplitOperator or LinearOperator
    method : {"auto", "dense", "power"}
        ``auto`` picks ``dense`` up to ``dense_limit`` unknowns.
    inverse : LinearOperator or callable, optional
        Applies ``op⁻¹`` for inverse iteration; its adjoint is used when
        present. Sparse matrices are factorized when omitted; otherwise
        ``op⁻¹`` falls back to an inner GMRES solve.
    kernel : ndarray, optional
        Basis of a known null space; the condition number is taken on its
        orthogonal complement (assumed invariant under ``op``).
    tol : float
        Relative change of the Rayleigh estimate over 10 sweeps that stops
        the power iterations.

    Raises
    ------
    SpectrumError
        When ``σ_min`` cannot be obtained.
    """
    lin = aslinearoperator(op)
    n = lin.dim_in
    if lin.dim_out != n:
        raise SpectrumError(f"operator must be square, got {lin.shape}")
    if method == "auto":
        method = "dense" if n <= dense_limit else "power"
    if method == "dense":
        m = _to_dense(op if not isinstance(op, LinearOperator) else lin)
        if kernel is not None:
            q = _complement_basis(kernel)
            m = q.T @ m @ q
        sv = np.linalg.svd(m, compute_uv=False)
        return _report_from_sv(sv, "Dense", n)
    if method != "power":
        raise ValueError(f"unknown method {method!r}")

    rng = np.random.default_rng(seed)
    project = None
    if kernel is not None:
        z = np.atleast_2d(np.asarray(kernel, dtype=np.float64))
        z = z.T if z.shape[0] < z.shape[1] else z
        z, _ = np.linalg.qr(z)
        project = lambda x: x - z @ (z.T @ x)  # noqa: E731
    if not lin.has_adjoint:
        raise SpectrumError("power iteration needs the adjoint of the operator")
    smax2 = _power_sym(lambda x: lin.apply_adjoint(lin.apply(x)), n, rng, tol, max_sweeps, project)

    if inverse is None:
        if isinstance(op, (SparseMatrix, SplitOperator)) or sp.issparse(op) or isinstance(op, np.ndarray):
            mat = op.a.csr if isinstance(op, SplitOperator) else (op.csr if isinstance(op, SparseMatrix) else op)
            try:
                lu = spla.splu(sp.csc_array(mat))
            except RuntimeError:
                return SpectrumReport(math.sqrt(smax2), 0.0, math.inf, n, "PowerIteration", status="singular")
            inv_f, inv_a = lu.solve, (lambda y: lu.solve(y, trans="T"))
        else:
            inv_f = _gmres_inverse(lin)
            inv_a = _gmres_inverse(lin.T)
    else:
        inv = inverse if isinstance(inverse, LinearOperator) else LinearOperator(n, n, inverse)
        inv_f = inv.apply
        inv_a = inv.apply_adjoint if inv.has_adjoint else _gmres_inverse(lin.T)
    inv_max2 = _power_sym(lambda x: inv_f(inv_a(x)), n, rng, tol, max_sweeps, project)
    smax = math.sqrt(max(smax2, 0.0))
    if not np.isfinite(inv_max2) or inv_max2 <= 0:
        raise SpectrumError("inverse iteration failed; σ_min unavailable")
    smin = 1.0 / math.sqrt(inv_max2)
    if smin <= _SINGULAR_RTOL * smax:
        return SpectrumReport(smax, smin, math.inf, n, "PowerIteration", status="singular")
    return SpectrumReport(smax, smin, smax / smin, n, "PowerIteration")


def spectral_width(split_op: SplitOperator, h_solver: Optional[Preconditioner] = None, tol: float = 1e-12) -> float:
    """Half-width ``λ`` of the imaginary spectrum of ``H⁻¹S``.

    Runs the H-inner-product Lanczos process (with full reorthogonalization)
    from a random start. Its projection of ``H⁻¹S`` is a skew tridiagonal
    matrix whose largest eigenvalue modulus converges to ``λ`` from below,
    like a power iteration for ``-(H⁻¹S)²`` accelerated by the Krylov space.
    """
    from .krylov import _Lanczos

    if split_op.s.nnz == 0 or split_op.s.frobenius() == 0.0:
        return 0.0
    if h_solver is None:
        h_solver = build(PrecondSpec("exact"), split_op.h)
    n = split_op.n
    rng = np.random.default_rng(12345)
    start = split_op.h.csr @ rng.standard_normal(n)
    lz = _Lanczos(split_op.h.csr, split_op.s.csr, h_solver.apply, start, reorthogonalize=True)
    hist: list[float] = []
    while lz.k < n and lz.step():
        k = lz.k
        off = np.asarray(lz.t_sub[: k - 1])
        # a skew tridiagonal with subdiagonal t is unitarily similar to i times
        # the symmetric tridiagonal with off-diagonal t
        est = 0.0 if k == 1 else float(np.max(np.abs(sla.eigvalsh_tridiagonal(np.zeros(k), off))))
        hist.append(est)
        if lz.breakdown or _converged(hist, tol, 3) and k > 5:
            break
    return hist[-1] if hist else 0.0


# -- refinement studies -----------------------------------------------------------

TARGETS = ("A", "H", "S", "H^-1A", "P^-1A", "W", "H_W^-1W", "M_p^-1W", "A11", "A12", "H11^-1A11")
_KEYS = {re.sub(r"[^a-z0-9]", "", t.lower()): t for t in TARGETS}


def _canonical_target(name: str) -> str:
    key = re.sub(r"[^a-z0-9]", "", name.lower())
    if key not in _KEYS:
        raise ValueError(f"unknown target {name!r}; expected one of {TARGETS}")
    return _KEYS[key]


def _dense_solve(a, b) -> np.ndarray:
    return sla.lu_solve(sla.lu_factor(a), b)


def _split_target(sop: SplitOperator, target: str, precond: Optional[PrecondSpec], method: str):
    n = sop.n
    if target in ("A", "H", "S"):
        mat = {"A": sop.a, "H": sop.h, "S": sop.s}[target]
        return cond2(mat, method)
    if target == "H^-1A":
        if method == "dense" or (method == "auto" and n <= DENSE_LIMIT):
            return cond2(_dense_solve(sop.h.toarray(), sop.a.toarray()), "dense")
        hl = spla.splu(sp.csc_array(sop.h.csr))
        al = spla.splu(sp.csc_array(sop.a.csr))
        a, h = sop.a.csr, sop.h.csr
        op = LinearOperator(n, n, lambda x: hl.solve(a @ x), lambda y: a.T @ hl.solve(y))
        inv = LinearOperator(n, n, lambda y: al.solve(h @ y), lambda x: h @ al.solve(x, trans="T"))
        return cond2(op, "power", inverse=inv)
    if target == "P^-1A":
        if precond is None:
            raise ValueError("target P^-1A needs a preconditioner spec")
        pc = build(precond, sop.h, sop.grid)
        a = sop.a.csr
        op = LinearOperator(n, n, lambda x: pc.apply(a @ x), lambda y: a.T @ pc.apply_adjoint(y))
        return cond2(op, method)
    raise ValueError(f"target {target} needs a block system")


def _block_target(bs: BlockSystem, target: str, method: str, kernel):
    if target in ("A11", "A12"):
        return cond2(bs.a11.a if target == "A11" else bs.a12, method)
    if target == "H11^-1A11":
        return _split_target(bs.a11, "H^-1A", None, method)
    if target in ("A", "H", "S"):
        return _split_target(bs.a11, target, None, method)
    w = schur_operator(bs)
    n2 = bs.n2
    if n2 > DENSE_LIMIT and method != "dense":
        if target != "W":
            raise SpectrumError(f"{target} is only available densely (n <= {DENSE_LIMIT})")
        return cond2(w, "power", kernel=kernel)
    wd = w.to_dense()
    if target == "W":
        m = wd
    elif target == "H_W^-1W":
        hw = 0.5 * (wd + wd.T)
        if kernel is not None:
            q = _complement_basis(kernel)
            m = np.linalg.solve(q.T @ hw @ q, q.T @ wd @ q)
            return _report_from_sv(np.linalg.svd(m, compute_uv=False), "Dense", n2)
        m = np.linalg.solve(hw, wd)
    elif target == "M_p^-1W":
        m = wd / bs.mass_p.diagonal()[:, None]
    else:
        raise ValueError(f"target {target} needs a split operator")
    return cond2(m, "dense", kernel=kernel)


def _oseen_kernel(spec: ProblemSpec, bs: BlockSystem):
    if spec.kind != "oseen":
        return None
    ones = np.ones(bs.n2)
    return (ones / np.linalg.norm(ones))[:, None]


def refinement_study(
    spec: ProblemSpec,
    levels: int,
    targets,
    precond=None,
    method: str = "auto",
    width: bool = True,
) -> list[dict]:
    """Condition numbers of selected operators over successive refinements.

    Parameters
    ----------
    spec : ProblemSpec
        Coarsest problem; each level applies :meth:`ProblemSpec.refine`.
    levels : int
        Number of levels (at least 3).
    targets : iterable of str
        Any of :data:`TARGETS`. Block-system targets (``W`` and friends) apply
        to Oseen and beam problems; the Oseen Schur complement is measured on
        the complement of the constant pressure.
    precond : PrecondSpec or str, optional
        Preconditioner for ``P^-1A`` (built from ``H``).

    Returns
    -------
    list of dict
        Rows with keys ``h, dofs, target, kappa2, lambda_width, method, status``.
    """
    if levels < 3:
        raise ValueError("a refinement study needs at least 3 levels")
    targets = [_canonical_target(t) for t in targets]
    if isinstance(precond, str):
        precond = PrecondSpec.parse(precond)
    rows = []
    cur = spec
    for _ in range(levels):
        system = assemble(cur)
        if isinstance(system, BlockSystem):
            kernel = _oseen_kernel(cur, system)
            sop, dofs = system.a11, system.n1 + system.n2
        else:
            kernel, sop, dofs = None, system, system.n
        lam = None
        if width:
            try:
                lam = spectral_width(sop)
            except Exception:  # width is informational only
                lam = None
        for t in targets:
            row = {"h": cur.h, "dofs": dofs, "target": t, "lambda_width": lam}
            try:
                if isinstance(system, BlockSystem):
                    rep = _block_target(system, t, method, kernel)
                else:
                    rep = _split_target(system, t, precond, method)
                row.update(kappa2=rep.kappa2, method=rep.method, status=rep.status)
            except (SpectrumError, ValueError, RuntimeError, ArithmeticError) as exc:
                row.update(kappa2=math.nan, method=method, status=f"error: {exc}")
            rows.append(row)
        cur = cur.refine()
    return rows


def loglog_slope(h, values) -> float:
    """Least-squares slope of ``log(values)`` against ``log(h)``."""
    return float(np.polyfit(np.log(np.asarray(h, float)), np.log(np.asarray(values, float)), 1)[0])
