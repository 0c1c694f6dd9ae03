"""Krylov solvers: PCG, left-preconditioned restarted GMRES, and the short-recurrence
Widlund and Rapoport methods for ``(H + S) x = b``.

The short-recurrence methods build an H-orthonormal basis of the Krylov space of
``K = H⁻¹S``. Because ``K`` is skew-adjoint in the H inner product the Lanczos
relation ``K V_k = V_{k+1} T_{k+1,k}`` has a tridiagonal ``T`` with a zero
diagonal, so each step needs one H-solve and two stored vectors.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from .precond import PrecondSpec, Preconditioner, build
from .sparse import ShapeError, SplitOperator, aslinearoperator, as_sparse, split

__all__ = [
    "IndefiniteError",
    "StructureError",
    "SolverConfig",
    "SolveReport",
    "LanczosState",
    "h_lanczos",
    "widlund_solve",
    "rapoport_solve",
    "gmres_solve",
    "cg_solve",
    "solve",
    "METHODS",
]

METHODS = ("cg", "gmres", "widlund", "rapoport", "direct")


class IndefiniteError(ArithmeticError):
    """CG met a search direction of non-positive curvature."""


class StructureError(ValueError):
    """Solver requirements on operator structure are violated."""


@dataclass(frozen=True)
class SolverConfig:
    """Method, stopping rule and preconditioner of a linear solve.

    ``precond`` accepts a :class:`PrecondSpec` or its string form
    (``"exact"``, ``"ichol:1e-2"``, ``"multigrid:2"``...).
    """

    method: str = "gmres"
    tol: float = 1e-8
    max_iter: int = 1000
    restart: Optional[int] = None
    precond: PrecondSpec = field(default_factory=PrecondSpec)
    reorthogonalize: bool = False

    def __post_init__(self):
        method = self.method.lower()
        if method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        object.__setattr__(self, "method", method)
        if isinstance(self.precond, str):
            object.__setattr__(self, "precond", PrecondSpec.parse(self.precond))
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.restart is not None and self.restart < 1:
            raise ValueError("restart must be >= 1")


@dataclass
class SolveReport:
    """Outcome of a solve.

    ``residual_history[0]`` belongs to the initial guess. ``inner_iterations``
    counts preconditioner applications, or the cumulative iterations of an
    inner iterative solver when one is used.
    """

    method: str
    iterations: int
    residual_history: list[float]
    converged: bool
    wall_time: float = 0.0
    inner_iterations: int = 0
    tol: float = 0.0
    flags: set[str] = field(default_factory=set)
    extras: dict = field(default_factory=dict)

    @property
    def final_relres(self) -> float:
        return self.residual_history[-1]


@dataclass
class LanczosState:
    """H-orthonormal Lanczos basis and tridiagonal coefficients.

    After ``k`` steps ``v_basis`` has ``k + 1`` columns and ``t_coeffs`` has
    shape ``(k + 1, k)``. On lucky breakdown the last column of ``v_basis`` is
    absent and the last row of ``t_coeffs`` is zero: the span of the ``k``
    vectors is invariant under ``H⁻¹S``.
    """

    v_basis: np.ndarray
    t_coeffs: np.ndarray
    b_hat_norm: float
    breakdown: bool = False
    h_basis: Optional[np.ndarray] = None  # H v_j, kept for cheap residuals

    @property
    def k(self) -> int:
        return self.t_coeffs.shape[1]


class _Lanczos:
    """Incremental H-inner-product Lanczos for ``K = H⁻¹S`` started at ``H⁻¹b``."""

    def __init__(self, h, s, h_solve, b, reorthogonalize=False):
        self.h, self.s, self.h_solve = h, s, h_solve
        self.reorth = reorthogonalize
        b_hat = h_solve(b)
        hb = h @ b_hat
        self.beta = float(np.sqrt(max(b_hat @ hb, 0.0)))
        n = b.shape[0]
        self.v: list[np.ndarray] = []
        self.hv: list[np.ndarray] = []
        self.sv: list[np.ndarray] = []
        self.alpha: list[float] = []
        self.t_sub: list[float] = []  # t_{j+1,j}
        self.breakdown = self.beta == 0.0
        self.n_hsolves = 1
        if not self.breakdown:
            self.v.append(b_hat / self.beta)
            self.hv.append(hb / self.beta)
        self._n = n
        self._scale = 0.0

    @property
    def k(self) -> int:
        return len(self.t_sub)

    def step(self) -> bool:
        """Advance one step; return False if the space was already invariant."""
        if self.breakdown:
            return False
        j = len(self.v) - 1
        vj = self.v[j]
        sv = self.s @ vj
        self.sv.append(sv)
        w = self.h_solve(sv)
        self.n_hsolves += 1
        kv_norm = float(np.sqrt(max(w @ sv, 0.0)))  # ‖K v_j‖_H, since H w = S v_j
        alpha = float(self.hv[j] @ w)
        w = w - alpha * vj
        if j > 0:
            w = w + self.t_sub[j - 1] * self.v[j - 1]
        if self.reorth:
            for vi, hvi in zip(self.v, self.hv):
                w = w - (hvi @ w) * vi
        hw = self.h @ w
        tn = float(np.sqrt(max(w @ hw, 0.0)))
        self.alpha.append(alpha)
        self._scale = max(self._scale, kv_norm, tn)
        if tn <= 1e-14 * self._scale or tn == 0.0:
            self.t_sub.append(0.0)
            self.breakdown = True
        else:
            self.t_sub.append(tn)
            self.v.append(w / tn)
            self.hv.append(hw / tn)
        return True

    def t_matrix(self) -> np.ndarray:
        """``T_{k+1,k}``; superdiagonal mirrors the subdiagonal with opposite sign."""
        k = self.k
        t = np.zeros((k + 1, k))
        for j in range(k):
            t[j, j] = self.alpha[j]
            t[j + 1, j] = self.t_sub[j]
            if j > 0:
                t[j - 1, j] = -self.t_sub[j - 1]
        return t

    def state(self) -> LanczosState:
        m = len(self.v)
        V = np.column_stack(self.v) if m else np.zeros((self._n, 0))
        HV = np.column_stack(self.hv) if m else np.zeros((self._n, 0))
        return LanczosState(V, self.t_matrix(), self.beta, self.breakdown, HV)


def _as_split(op) -> SplitOperator:
    if isinstance(op, SplitOperator):
        return op
    return split(op)


def _h_solver(sop: SplitOperator, spec: PrecondSpec, h_solver=None, grid_hint=None) -> Preconditioner:
    if h_solver is not None:
        return h_solver
    if spec.kind == "identity":
        spec = PrecondSpec("exact")
    return build(spec, sop.h, grid_hint if grid_hint is not None else sop.grid)


def h_lanczos(split_op: SplitOperator, h_solver: Preconditioner, b, k: int, reorthogonalize=False) -> LanczosState:
    """Run ``k`` steps of Lanczos for ``H⁻¹S`` in the H inner product from ``H⁻¹b``.

    Stops early on lucky breakdown (new vector with negligible H-norm).

    Raises
    ------
    StructureError
        If ``h_solver`` is not a symmetric operator.
    """
    if not h_solver.symmetric:
        raise StructureError("H-Lanczos needs a symmetric H-solver")
    b = np.asarray(b, dtype=np.float64)
    if b.shape != (split_op.n,):
        raise ShapeError(f"right-hand side has shape {b.shape}, expected ({split_op.n},)")
    lz = _Lanczos(split_op.h.csr, split_op.s.csr, h_solver.apply, b, reorthogonalize)
    for _ in range(k):
        if not lz.step():
            break
    return lz.state()


_DENSE_CHECK = 64
_CHECK_STRIDE = 8


def _short_recurrence(split_op, b, cfg: SolverConfig, h_solver, grid_hint, variant: str):
    sop = _as_split(split_op)
    b = np.asarray(b, dtype=np.float64)
    if b.shape != (sop.n,):
        raise ShapeError(f"right-hand side has shape {b.shape}, expected ({sop.n},)")
    t_setup = time.perf_counter()
    hs = _h_solver(sop, cfg.precond, h_solver, grid_hint)
    t0 = time.perf_counter()
    setup_time = t0 - t_setup if h_solver is None else 0.0
    if not hs.symmetric:
        raise StructureError(f"{variant} needs a symmetric approximation of H")
    flags = set()
    if not hs.exact:
        flags.add("symmetry-degraded")
    a = sop.a.csr
    bnorm = float(np.linalg.norm(b))
    report = SolveReport(variant, 0, [1.0 if bnorm > 0 else 0.0], bnorm == 0.0, tol=cfg.tol, flags=flags)
    report.extras["setup_time"] = setup_time
    x = np.zeros_like(b)
    if bnorm == 0.0:
        report.wall_time = time.perf_counter() - t0
        return x, report

    lz = _Lanczos(sop.h.csr, sop.s.csr, hs.apply, b, cfg.reorthogonalize)
    beta = lz.beta
    hinv_hist = [1.0]
    checked = [0]
    report.extras["residual_iterations"] = checked
    n = sop.n
    cap = min(cfg.max_iter, 32)
    V = np.empty((n, cap))
    AV = np.empty((n, cap))
    band = np.zeros((3, cap))  # banded (I + T) for Widlund, banded R for Rapoport
    cs, sn = np.zeros(cap), np.zeros(cap)
    g = np.zeros(cap + 1)
    g[0] = beta
    for it in range(1, cfg.max_iter + 1):
        lz.step()
        k = lz.k
        j = k - 1
        if k > cap:
            cap = min(2 * cap, cfg.max_iter)
            V = np.concatenate([V, np.empty((n, cap - V.shape[1]))], axis=1)
            AV = np.concatenate([AV, np.empty((n, cap - AV.shape[1]))], axis=1)
            band = np.concatenate([band, np.zeros((3, cap - band.shape[1]))], axis=1)
            cs, sn = np.resize(cs, cap), np.resize(sn, cap)
            g = np.concatenate([g, np.zeros(cap + 1 - g.size)])
        V[:, j] = lz.v[j]
        AV[:, j] = lz.hv[j] + lz.sv[j]
        t_up = -lz.t_sub[j - 1] if j > 0 else 0.0  # entry (j-1, j) of T
        t_down = lz.t_sub[j]  # entry (j+1, j)
        diag = 1.0 + lz.alpha[j]
        if variant == "widlund":
            band[0, j], band[1, j] = t_up, diag
            if j > 0:
                band[2, j - 1] = lz.t_sub[j - 1]
            rhs = np.zeros(k)
            rhs[0] = beta
            y = sla.solve_banded((1, 1), band[:, :k], rhs)
        else:
            # incremental Givens QR of the (k+1) x k matrix Ĩ + T
            col = [0.0, t_up, diag, t_down]  # rows j-2, j-1, j, j+1
            for i, (lo, hi) in ((j - 2, (0, 1)), (j - 1, (1, 2))):
                if i >= 0:
                    a_, b_ = col[lo], col[hi]
                    col[lo] = cs[i] * a_ + sn[i] * b_
                    col[hi] = -sn[i] * a_ + cs[i] * b_
            cs[j], sn[j] = _givens(col[2], col[3])
            col[2] = cs[j] * col[2] + sn[j] * col[3]
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            band[0, j], band[1, j], band[2, j] = col[0], col[1], col[2]
            y = sla.solve_banded((0, 2), band[:, :k], g[:k])
            hinv_hist.append(abs(float(g[j + 1])) / beta)
        report.iterations = it
        # the true residual costs O(n k); past the first iterations it is sampled
        if k <= _DENSE_CHECK or k % _CHECK_STRIDE == 0 or lz.breakdown or it == cfg.max_iter:
            x = V[:, :k] @ y
            rel = float(np.linalg.norm(b - AV[:, :k] @ y)) / bnorm
            report.residual_history.append(rel)
            checked.append(it)
            if rel <= cfg.tol:
                report.converged = True
                break
        if lz.breakdown:
            # invariant subspace reached; a larger residual signals an inexact H-solve
            flags.add("breakdown")
            break
    report.inner_iterations = lz.n_hsolves
    if variant == "rapoport":
        report.extras["hinv_residual"] = hinv_hist
    report.wall_time = time.perf_counter() - t0
    return x, report


def widlund_solve(split_op, b, cfg: SolverConfig, h_solver: Optional[Preconditioner] = None, grid_hint=None):
    """Widlund's method: Galerkin condition in the H inner product.

    At step ``k`` solves ``(I + T_kk) y = ‖H⁻¹b‖_H e₁`` and sets ``x = V_k y``.
    The H-solver comes from ``h_solver`` or ``cfg.precond`` applied to
    ``split_op.h`` (``identity`` is promoted to the exact solve).

    Returns
    -------
    x : ndarray
    report : SolveReport
        ``residual_history`` holds ``‖b - A x_k‖ / ‖b‖`` at the iterations
        listed in ``extras["residual_iterations"]`` (every step up to 64,
        then every 8th). The flag ``symmetry-degraded`` marks an inexact
        H-solve.
    """
    return _short_recurrence(split_op, b, cfg, h_solver, grid_hint, "widlund")


def rapoport_solve(split_op, b, cfg: SolverConfig, h_solver: Optional[Preconditioner] = None, grid_hint=None):
    """Rapoport's method: minimal residual in the H⁻¹ norm.

    At step ``k`` solves ``min ‖β e₁ - (Ĩ + T_{k+1,k}) y‖`` by QR, where ``Ĩ``
    is the identity padded with a zero row. ``report.extras["hinv_residual"]``
    holds the (monotone) relative H⁻¹-norm residuals.
    """
    return _short_recurrence(split_op, b, cfg, h_solver, grid_hint, "rapoport")


def _givens(a: float, b: float) -> tuple[float, float]:
    if b == 0.0:
        return 1.0, 0.0
    r = np.hypot(a, b)
    return a / r, b / r


def gmres_solve(op, b, cfg: SolverConfig, precond: Optional[Preconditioner] = None, x0=None):
    """Left-preconditioned restarted GMRES with modified Gram-Schmidt.

    Minimizes ``‖M⁻¹(b - A x)‖`` over the Krylov space; stops when that
    residual relative to ``‖M⁻¹b‖`` is at most ``cfg.tol``. A restart cycle
    that fails to reduce the residual sets the ``stagnation`` flag and ends
    the solve.
    """
    A = aslinearoperator(op)
    n = A.dim_in
    b = np.asarray(b, dtype=np.float64)
    if A.dim_out != n or b.shape != (n,):
        raise ShapeError(f"GMRES needs a square operator and matching rhs, got {A.shape} and {b.shape}")
    t0 = time.perf_counter()
    m_apply = precond.apply if precond is not None else (lambda r: r)
    n_prec = 0
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=np.float64)
    zb = m_apply(b)
    n_prec += 1
    znorm_b = float(np.linalg.norm(zb))
    report = SolveReport("gmres", 0, [], False, tol=cfg.tol)
    if znorm_b == 0.0:
        report.residual_history.append(0.0)
        report.converged = True
        return x, report
    restart = min(cfg.restart or cfg.max_iter, n + 1)

    r = m_apply(b - A @ x) if x0 is not None else zb
    n_prec += x0 is not None
    beta = float(np.linalg.norm(r))
    report.residual_history.append(beta / znorm_b)
    total = 0
    while total < cfg.max_iter and beta / znorm_b > cfg.tol:
        cycle_start = beta
        V = np.zeros((n, restart + 1))
        Hm = np.zeros((restart + 1, restart))
        cs, sn = np.zeros(restart), np.zeros(restart)
        g = np.zeros(restart + 1)
        g[0] = beta
        V[:, 0] = r / beta
        j_done = 0
        for j in range(restart):
            w = m_apply(A @ V[:, j])
            n_prec += 1
            for i in range(j + 1):
                Hm[i, j] = V[:, i] @ w
                w -= Hm[i, j] * V[:, i]
            Hm[j + 1, j] = float(np.linalg.norm(w))
            for i in range(j):
                hi, hi1 = Hm[i, j], Hm[i + 1, j]
                Hm[i, j] = cs[i] * hi + sn[i] * hi1
                Hm[i + 1, j] = -sn[i] * hi + cs[i] * hi1
            cs[j], sn[j] = _givens(Hm[j, j], Hm[j + 1, j])
            hnext = Hm[j + 1, j]
            Hm[j, j] = cs[j] * Hm[j, j] + sn[j] * hnext
            Hm[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            total += 1
            j_done = j + 1
            rel = float(abs(g[j + 1])) / znorm_b
            report.residual_history.append(rel)
            if rel <= cfg.tol or total >= cfg.max_iter or hnext <= 1e-14 * abs(g[0]):
                break
            V[:, j + 1] = w / hnext
        y = sla.solve_triangular(Hm[:j_done, :j_done], g[:j_done])
        x = x + V[:, :j_done] @ y
        r = m_apply(b - A @ x)
        n_prec += 1
        beta = float(np.linalg.norm(r))
        report.residual_history[-1] = beta / znorm_b
        if beta / znorm_b > cfg.tol and beta >= cycle_start * (1.0 - 1e-12):
            report.flags.add("stagnation")
            break
    report.iterations = total
    report.converged = report.residual_history[-1] <= cfg.tol
    report.inner_iterations = n_prec
    report.wall_time = time.perf_counter() - t0
    return x, report


def cg_solve(op, b, cfg: SolverConfig, precond: Optional[Preconditioner] = None, x0=None):
    """Preconditioned conjugate gradients.

    Stops when ``‖b - A x‖ / ‖b‖ ≤ cfg.tol``.

    Raises
    ------
    IndefiniteError
        If a search direction has ``pᵀ A p ≤ 0``.
    """
    A = aslinearoperator(op)
    n = A.dim_in
    b = np.asarray(b, dtype=np.float64)
    if A.dim_out != n or b.shape != (n,):
        raise ShapeError(f"CG needs a square operator and matching rhs, got {A.shape} and {b.shape}")
    t0 = time.perf_counter()
    m_apply = precond.apply if precond is not None else (lambda r: r.copy())
    bnorm = float(np.linalg.norm(b))
    report = SolveReport("cg", 0, [], False, tol=cfg.tol)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=np.float64)
    if bnorm == 0.0:
        report.residual_history.append(0.0)
        report.converged = True
        return np.zeros(n), report
    r = b - A @ x if x0 is not None else b.copy()
    report.residual_history.append(float(np.linalg.norm(r)) / bnorm)
    z = m_apply(r)
    n_prec = 1
    p = z.copy()
    rz = float(r @ z)
    it = 0
    while report.residual_history[-1] > cfg.tol and it < cfg.max_iter:
        ap = A @ p
        curv = float(p @ ap)
        if not curv > 0.0:
            raise IndefiniteError(f"non-positive curvature pᵀAp = {curv:.3e} at iteration {it + 1}")
        alpha = rz / curv
        x += alpha * p
        r -= alpha * ap
        it += 1
        report.residual_history.append(float(np.linalg.norm(r)) / bnorm)
        if report.residual_history[-1] <= cfg.tol:
            break
        z = m_apply(r)
        n_prec += 1
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    report.iterations = it
    report.converged = report.residual_history[-1] <= cfg.tol
    report.inner_iterations = n_prec
    report.wall_time = time.perf_counter() - t0
    return x, report


def _precond_target(sop: SplitOperator, spec: PrecondSpec):
    # ILU and LU approximate the full operator; the others the symmetric part
    return sop.a if spec.kind in ("ilu", "lu") else sop.h


def solve(system, b, cfg: SolverConfig, grid_hint=None):
    """Dispatch a solve of ``system x = b`` on ``cfg.method``.

    ``system`` is a :class:`SplitOperator` or a sparse matrix (split on the
    fly). ``report.wall_time`` covers the iteration only; preconditioner
    setup is in ``report.extras["setup_time"]``. For GMRES the preconditioner
    is built from the symmetric part, except ``ilu``/``lu`` which use the
    full matrix; CG uses the matrix itself.
    """
    sop = _as_split(system)
    grid = grid_hint if grid_hint is not None else sop.grid
    b = np.asarray(b, dtype=np.float64)
    if cfg.method == "widlund":
        return widlund_solve(sop, b, cfg, grid_hint=grid)
    if cfg.method == "rapoport":
        return rapoport_solve(sop, b, cfg, grid_hint=grid)
    if cfg.method == "direct":
        t0 = time.perf_counter()
        lu = spla.splu(as_sparse(sop.a).csr.tocsc())
        x = lu.solve(b)
        bnorm = float(np.linalg.norm(b)) or 1.0
        rel = float(np.linalg.norm(b - sop.a.csr @ x)) / bnorm
        return x, SolveReport("direct", 1, [1.0, rel], True, time.perf_counter() - t0, tol=cfg.tol)
    if cfg.method == "cg":
        pc = None if cfg.precond.kind == "identity" else build(cfg.precond, sop.a, grid)
        x, rep = cg_solve(sop.a, b, cfg, pc)
    else:
        pc = None if cfg.precond.kind == "identity" else build(cfg.precond, _precond_target(sop, cfg.precond), grid)
        x, rep = gmres_solve(sop.a, b, cfg, pc)
    rep.extras["setup_time"] = pc.setup_time if pc is not None else 0.0
    return x, rep
