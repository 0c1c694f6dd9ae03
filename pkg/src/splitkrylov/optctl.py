"""Linear-quadratic optimal control with a split PDE constraint.

Minimize ``½‖C x - y_ref‖² + (λ/2)‖u - u_ref‖²`` subject to ``A x - B u = f``.
The optimality system in the unknowns ``(x, u, p)`` is::

    [CᵀC   0    Aᵀ ] [x]   [Cᵀ y_ref ]
    [ 0   λI   -Bᵀ ] [u] = [λ u_ref  ]
    [ A   -B    0  ] [p]   [f        ]

Three solution routes are provided: CG on the control-reduced operator,
projected preconditioned CG on the full system with the constraint
preconditioner, and CG on the adjoint Schur complement when ``C`` is
invertible. Every ``A``-solve goes through a configurable inner solver.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .discretize import InnerSolveError
from .krylov import (
    IndefiniteError,
    SolveReport,
    SolverConfig,
    cg_solve,
    gmres_solve,
    rapoport_solve,
    widlund_solve,
)
from .precond import Preconditioner, build
from .sparse import LinearOperator, ShapeError, SparseMatrix, SplitOperator, as_sparse

__all__ = [
    "OcpProblem",
    "KktSolution",
    "InnerSolver",
    "UnsupportedObservationError",
    "assemble_kkt",
    "reduced_apply",
    "reduced_gradient",
    "cost",
    "condensed_solve",
    "constraint_precond_apply",
    "ppcg_solve",
    "kkt_schur_solve",
    "midpoint_step",
]

DIRECT = SolverConfig("direct")


class UnsupportedObservationError(ValueError):
    """The observation operator does not give an invertible ``CᵀC``."""


@dataclass(frozen=True)
class OcpProblem:
    """Data of the control problem; ``u_ref`` defaults to zero."""

    a_split: SplitOperator
    b_in: SparseMatrix
    c_out: SparseMatrix
    lambda_reg: float
    f: np.ndarray
    y_ref: np.ndarray
    u_ref: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "b_in", as_sparse(self.b_in))
        object.__setattr__(self, "c_out", as_sparse(self.c_out))
        n = self.a_split.n
        m = self.b_in.n_cols
        q = self.c_out.n_rows
        f = np.asarray(self.f, dtype=np.float64)
        y = np.asarray(self.y_ref, dtype=np.float64)
        u = np.zeros(m) if self.u_ref is None else np.asarray(self.u_ref, dtype=np.float64)
        object.__setattr__(self, "f", f)
        object.__setattr__(self, "y_ref", y)
        object.__setattr__(self, "u_ref", u)
        if self.b_in.n_rows != n or self.c_out.n_cols != n:
            raise ShapeError(f"B must be {n}×m and C q×{n}; got {self.b_in.shape} and {self.c_out.shape}")
        if f.shape != (n,) or y.shape != (q,) or u.shape != (m,):
            raise ShapeError("f, y_ref, u_ref must have lengths n, q, m")
        if not self.lambda_reg > 0:
            raise ValueError("lambda_reg must be positive")

    @property
    def n(self) -> int:
        return self.a_split.n

    @property
    def m(self) -> int:
        return self.b_in.n_cols


@dataclass
class KktSolution:
    """State, control and adjoint with the outer solve report.

    ``inner_totals`` counts state solves, adjoint solves and their cumulative
    inner iterations. ``kkt_residual`` is ``‖rhs - K z‖ / ‖rhs‖``.
    """

    x: np.ndarray
    u: np.ndarray
    p: np.ndarray
    outer_report: SolveReport
    inner_totals: dict = field(default_factory=dict)
    kkt_residual: float = float("nan")


class InnerSolver:
    """Repeated solves with ``A`` and ``Aᵀ`` sharing one prepared preconditioner.

    ``cfg.method`` selects ``direct`` (sparse LU, factored once), ``gmres``,
    ``widlund``, ``rapoport`` or ``cg`` (symmetric ``A`` only).
    """

    def __init__(self, a_split: SplitOperator, cfg: SolverConfig = DIRECT):
        self.split = a_split
        self.cfg = cfg
        self.totals = {"state_solves": 0, "adjoint_solves": 0, "inner_iterations": 0}
        self.setup_time = 0.0
        t0 = time.perf_counter()
        a = a_split.a.csr
        self._at = a.T.tocsr()
        self._split_t = SplitOperator(a_split.a.T, a_split.h, -a_split.s, a_split.grid)
        self._lu = None
        self._pc: Optional[Preconditioner] = None
        self._pc_t: Optional[Preconditioner] = None
        kind = cfg.precond.kind
        if cfg.method == "direct":
            self._lu = spla.splu(sp.csc_array(a))
        elif cfg.method in ("widlund", "rapoport"):
            spec = cfg.precond if kind != "identity" else replace(cfg.precond, kind="exact")
            self._pc = build(spec, a_split.h, a_split.grid)
            self._pc_t = self._pc
        elif kind != "identity":
            target = a_split.a if kind in ("ilu", "lu") else (a_split.h if cfg.method == "gmres" else a_split.a)
            self._pc = build(cfg.precond, target, a_split.grid)
            if self._pc.symmetric:
                self._pc_t = self._pc
            else:
                pc = self._pc
                self._pc_t = Preconditioner(pc.spec, pc.n, pc.apply_adjoint, False, 0.0, pc.apply)
        self.setup_time = time.perf_counter() - t0

    def _iterate(self, transpose: bool, y: np.ndarray) -> np.ndarray:
        cfg = self.cfg
        if cfg.method in ("widlund", "rapoport"):
            fn = widlund_solve if cfg.method == "widlund" else rapoport_solve
            x, rep = fn(self._split_t if transpose else self.split, y, cfg, h_solver=self._pc)
        else:
            mat = self._at if transpose else self.split.a.csr
            pc = self._pc_t if transpose else self._pc
            fn = gmres_solve if cfg.method == "gmres" else cg_solve
            x, rep = fn(mat, y, cfg, pc)
        self.totals["inner_iterations"] += rep.iterations
        if not rep.converged:
            raise InnerSolveError(rep, "adjoint solve" if transpose else "state solve")
        return x

    def solve(self, y: np.ndarray) -> np.ndarray:
        """``A⁻¹ y``."""
        self.totals["state_solves"] += 1
        if self._lu is not None:
            self.totals["inner_iterations"] += 1
            return self._lu.solve(y)
        return self._iterate(False, y)

    def solve_adjoint(self, y: np.ndarray) -> np.ndarray:
        """``A⁻ᵀ y``."""
        self.totals["adjoint_solves"] += 1
        if self._lu is not None:
            self.totals["inner_iterations"] += 1
            return self._lu.solve(y, trans="T")
        return self._iterate(True, y)


def assemble_kkt(ocp: OcpProblem) -> tuple[SparseMatrix, np.ndarray]:
    """Symmetric KKT matrix and right-hand side, unknowns ordered ``(x, u, p)``."""
    a, b, c = ocp.a_split.a.csr, ocp.b_in.csr, ocp.c_out.csr
    lam = ocp.lambda_reg
    K = sp.bmat(
        [
            [c.T @ c, None, a.T],
            [None, lam * sp.identity(ocp.m, format="csr"), -b.T],
            [a, -b, None],
        ],
        format="csr",
    )
    # all three block pairs are exact transposes, so K is symmetric bit for bit
    rhs = np.concatenate([c.T @ ocp.y_ref, lam * ocp.u_ref, ocp.f])
    return SparseMatrix(K), rhs


def _kkt_residual(ocp: OcpProblem, x, u, p) -> float:
    K, rhs = assemble_kkt(ocp)
    r = rhs - K.csr @ np.concatenate([x, u, p])
    return float(np.linalg.norm(r)) / max(float(np.linalg.norm(rhs)), np.finfo(float).tiny)


def _reduced(ocp: OcpProblem, solver: InnerSolver, u: np.ndarray) -> np.ndarray:
    b, c = ocp.b_in.csr, ocp.c_out.csr
    v = solver.solve(b @ u)
    w = solver.solve_adjoint(c.T @ (c @ v))
    return b.T @ w + ocp.lambda_reg * u


def reduced_apply(ocp: OcpProblem, inner: SolverConfig, u) -> np.ndarray:
    """``(C A⁻¹ B)ᵀ (C A⁻¹ B) u + λ u`` with one state and one adjoint solve."""
    return _reduced(ocp, InnerSolver(ocp.a_split, inner), np.asarray(u, dtype=np.float64))


def _reduced_rhs(ocp: OcpProblem, solver: InnerSolver) -> np.ndarray:
    b, c = ocp.b_in.csr, ocp.c_out.csr
    x0 = solver.solve(ocp.f)
    return -(b.T @ solver.solve_adjoint(c.T @ (c @ x0 - ocp.y_ref))) + ocp.lambda_reg * ocp.u_ref


def cost(ocp: OcpProblem, u) -> float:
    """Objective value at control ``u`` (state from an exact solve)."""
    u = np.asarray(u, dtype=np.float64)
    x = spla.spsolve(sp.csc_array(ocp.a_split.a.csr), ocp.b_in.csr @ u + ocp.f)
    mis = ocp.c_out.csr @ x - ocp.y_ref
    return 0.5 * float(mis @ mis) + 0.5 * ocp.lambda_reg * float((u - ocp.u_ref) @ (u - ocp.u_ref))


def reduced_gradient(ocp: OcpProblem, u, inner: SolverConfig = DIRECT) -> np.ndarray:
    """Gradient of :func:`cost` by the adjoint method: ``Bᵀ A⁻ᵀ Cᵀ(C x - y_ref) + λ(u - u_ref)``."""
    u = np.asarray(u, dtype=np.float64)
    solver = InnerSolver(ocp.a_split, inner)
    b, c = ocp.b_in.csr, ocp.c_out.csr
    x = solver.solve(b @ u + ocp.f)
    return b.T @ solver.solve_adjoint(c.T @ (c @ x - ocp.y_ref)) + ocp.lambda_reg * (u - ocp.u_ref)


def _with_tol(inner: SolverConfig, tol: Optional[float]) -> SolverConfig:
    if inner.method == "direct" or tol is None:
        return inner
    return replace(inner, tol=tol)


def condensed_solve(
    ocp: OcpProblem,
    inner: SolverConfig = DIRECT,
    cgtol: float = 1e-8,
    max_iter: int = 500,
    inner_tol: Optional[float] = None,
) -> KktSolution:
    """CG on the control-reduced (condensed) system.

    The reduced right-hand side is ``-Bᵀ A⁻ᵀ Cᵀ(C A⁻¹ f - y_ref) + λ u_ref``.
    Iterative inner solvers run to ``inner_tol``, by default ``cgtol / 10``.
    The reported time includes preconditioner setup.
    """
    t0 = time.perf_counter()
    inner = _with_tol(inner, inner_tol if inner_tol is not None else cgtol / 10)
    solver = InnerSolver(ocp.a_split, inner)
    g = _reduced_rhs(ocp, solver)
    op = LinearOperator(ocp.m, ocp.m, lambda v: _reduced(ocp, solver, v), symmetric=True)
    u, rep = cg_solve(op, g, SolverConfig("cg", tol=cgtol, max_iter=max_iter))
    b, c = ocp.b_in.csr, ocp.c_out.csr
    x = solver.solve(b @ u + ocp.f)
    p = -solver.solve_adjoint(c.T @ (c @ x - ocp.y_ref))
    rep.method = "condensed"
    rep.inner_iterations = solver.totals["inner_iterations"]
    rep.wall_time = time.perf_counter() - t0
    return KktSolution(x, u, p, rep, dict(solver.totals), _kkt_residual(ocp, x, u, p))


def _precond_apply(ocp: OcpProblem, solver: InnerSolver, r: np.ndarray) -> np.ndarray:
    n, m = ocp.n, ocp.m
    r1, r2, r3 = r[:n], r[n:n + m], r[n + m:]
    p = solver.solve_adjoint(r1)
    u = (ocp.b_in.csr.T @ p + r2) / ocp.lambda_reg
    x = solver.solve(r3 + ocp.b_in.csr @ u)
    return np.concatenate([x, u, p])


def constraint_precond_apply(ocp: OcpProblem, inner: SolverConfig, r) -> np.ndarray:
    """Apply the inverse of ``P = [[0, 0, Aᵀ], [0, λI, -Bᵀ], [A, -B, 0]]``.

    ``r`` is the stacked vector ``(r1, r2, r3)`` (or a 3-tuple); the result is
    ``(x, u, p)`` stacked, computed with one ``Aᵀ``- and one ``A``-solve.
    """
    if isinstance(r, (tuple, list)):
        r = np.concatenate([np.asarray(v, dtype=np.float64) for v in r])
    r = np.asarray(r, dtype=np.float64)
    if r.shape != (2 * ocp.n + ocp.m,):
        raise ShapeError(f"expected a vector of length {2 * ocp.n + ocp.m}, got {r.shape}")
    return _precond_apply(ocp, InnerSolver(ocp.a_split, inner), r)


def ppcg_solve(
    ocp: OcpProblem,
    inner: SolverConfig = DIRECT,
    cgtol: float = 1e-8,
    max_iter: int = 500,
    inner_tol: Optional[float] = 1e-6,
) -> KktSolution:
    """Projected preconditioned CG on the full KKT system.

    Starts from the admissible point ``x = A⁻¹f, u = 0, p = 0`` and uses the
    constraint preconditioner, so with exact inner solves every iterate stays
    feasible. Stops on the true KKT residual relative to the right-hand side.
    ``report.extras["feasibility"]`` records ``‖A x - B u - f‖`` per
    iteration; drift above ``1e-6·max(1, ‖f‖)`` sets the
    ``feasibility-degraded`` flag. Once the control has converged to
    round-off the preconditioned residual only moves the adjoint; that step
    is taken with unit length (``extras["multiplier_corrections"]``).
    """
    t0 = time.perf_counter()
    inner = _with_tol(inner, inner_tol)
    solver = InnerSolver(ocp.a_split, inner)
    K, rhs = assemble_kkt(ocp)
    K = K.csr
    n, m = ocp.n, ocp.m
    a, b = ocp.a_split.a.csr, ocp.b_in.csr
    fnorm = float(np.linalg.norm(ocp.f))
    rhs_norm = float(np.linalg.norm(rhs)) or 1.0
    feas_scale = max(1.0, fnorm)

    z = np.concatenate([solver.solve(ocp.f), np.zeros(m), np.zeros(n)])

    def feasibility(z):
        return float(np.linalg.norm(a @ z[:n] - b @ z[n:n + m] - ocp.f))

    r = rhs - K @ z
    rep = SolveReport("ppcg", 0, [float(np.linalg.norm(r)) / rhs_norm], False, tol=cgtol)
    feas = [feasibility(z)]
    w = _precond_apply(ocp, solver, r)
    d = w.copy()
    rw = float(r @ w)
    wu0 = float(np.linalg.norm(w[n:n + m])) or 1.0
    while rep.residual_history[-1] > cgtol and rep.iterations < max_iter:
        if np.linalg.norm(w[n:n + m]) <= 1e-13 * wu0:
            # control converged: w only corrects the adjoint, where K and P coincide
            z = z + w
            r = rhs - K @ z
            rep.iterations += 1
            rep.residual_history.append(float(np.linalg.norm(r)) / rhs_norm)
            feas.append(feasibility(z))
            rep.extras["multiplier_corrections"] = rep.extras.get("multiplier_corrections", 0) + 1
            w = _precond_apply(ocp, solver, r)
            d = w.copy()
            rw = float(r @ w)
            if rep.extras["multiplier_corrections"] > 2:
                break
            continue
        kd = K @ d
        curv = float(d @ kd)
        if not curv > 0.0:
            rep.flags.add("indefinite-direction")
            break
        alpha = rw / curv
        z = z + alpha * d
        r = r - alpha * kd
        rep.iterations += 1
        true_r = rhs - K @ z
        rep.residual_history.append(float(np.linalg.norm(true_r)) / rhs_norm)
        feas.append(feasibility(z))
        if feas[-1] > 1e-6 * feas_scale:
            rep.flags.add("feasibility-degraded")
        if rep.residual_history[-1] <= cgtol:
            break
        w = _precond_apply(ocp, solver, r)
        rw_new = float(r @ w)
        d = w + (rw_new / rw) * d
        rw = rw_new
    rep.converged = rep.residual_history[-1] <= cgtol
    rep.extras["feasibility"] = feas
    rep.inner_iterations = solver.totals["inner_iterations"]
    rep.wall_time = time.perf_counter() - t0
    x, u, p = z[:n], z[n:n + m], z[n + m:]
    return KktSolution(x, u, p, rep, dict(solver.totals), _kkt_residual(ocp, x, u, p))


def kkt_schur_solve(ocp: OcpProblem, cgtol: float = 1e-10, max_iter: Optional[int] = None) -> KktSolution:
    """Eliminate state and control and solve for the adjoint.

    With ``CᵀC`` invertible the adjoint solves
    ``(A (CᵀC)⁻¹ Aᵀ + (1/λ) B Bᵀ) p = A (CᵀC)⁻¹ Cᵀ y_ref - B u_ref - f``
    by CG (operator applied matrix-free, at most ``max_iter`` iterations,
    default ``10 n``); then ``u = u_ref + Bᵀp/λ`` and
    ``x = (CᵀC)⁻¹(Cᵀ y_ref - Aᵀ p)``.

    Raises
    ------
    UnsupportedObservationError
        If ``C`` is not square or ``CᵀC`` is singular.
    """
    t0 = time.perf_counter()
    c = ocp.c_out.csr
    if c.shape[0] != c.shape[1]:
        raise UnsupportedObservationError("the adjoint Schur route needs a square observation operator")
    ctc = sp.csc_array(c.T @ c)
    try:
        lu = spla.splu(ctc)
    except RuntimeError as exc:
        raise UnsupportedObservationError(f"CᵀC is singular: {exc}") from None
    if not np.all(np.isfinite(lu.U.diagonal())) or np.any(lu.U.diagonal() == 0):
        raise UnsupportedObservationError("CᵀC is singular")
    a, b = ocp.a_split.a.csr, ocp.b_in.csr
    at = a.T.tocsr()
    lam = ocp.lambda_reg
    n = ocp.n
    count = {"observation_solves": 0}

    def ctc_solve(v):
        count["observation_solves"] += 1
        return lu.solve(v)

    op = LinearOperator(n, n, lambda q: a @ ctc_solve(at @ q) + (b @ (b.T @ q)) / lam, symmetric=True)
    g = a @ ctc_solve(c.T @ ocp.y_ref) - b @ ocp.u_ref - ocp.f
    try:
        p, rep = cg_solve(op, g, SolverConfig("cg", tol=cgtol, max_iter=max_iter or 10 * n))
    except IndefiniteError as exc:
        raise UnsupportedObservationError(f"adjoint Schur operator is not definite: {exc}") from None
    u = ocp.u_ref + (b.T @ p) / lam
    x = ctc_solve(c.T @ ocp.y_ref - at @ p)
    rep.method = "schur"
    rep.inner_iterations = count["observation_solves"]
    rep.wall_time = time.perf_counter() - t0
    return KktSolution(x, u, p, rep, dict(count), _kkt_residual(ocp, x, u, p))


def midpoint_step(m_split: SplitOperator, dt: float, x, cfg: SolverConfig) -> np.ndarray:
    """One implicit-midpoint step for ``x' = -M x``.

    Solves ``(I + (dt/2) M) x⁺ = (I - (dt/2) M) x`` as a split system with
    ``H = I + (dt/2) M_H`` and ``S = (dt/2) M_S``.

    Raises
    ------
    InnerSolveError
        If the configured solver does not converge.
    """
    from .krylov import solve

    if not dt > 0:
        raise ValueError("dt must be positive")
    x = np.asarray(x, dtype=np.float64)
    half = 0.5 * dt
    eye = sp.identity(m_split.n, format="csr")
    step = SplitOperator.from_parts(SparseMatrix(eye + half * m_split.h.csr), SparseMatrix(half * m_split.s.csr), m_split.grid)
    rhs = x - half * (m_split.a.csr @ x)
    x_new, rep = solve(step, rhs, cfg)
    if not rep.converged:
        raise InnerSolveError(rep, "midpoint step")
    return x_new
