"""Finite-difference assembly of the model operators on uniform tensor grids.

Scalar problems (advection-diffusion-reaction, wave, beam) use nodal finite
differences with boundary values eliminated. Stokes and Oseen use a staggered
(marker-and-cell) grid: velocity components on cell faces, pressure at cell
centres. Unknowns are ordered lexicographically with the last axis fastest.
All operators are in strong (pointwise) scaling, so mass matrices are
identities times a coefficient.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .sparse import LinearOperator, SparseMatrix, SplitOperator

__all__ = [
    "AssemblyError",
    "ProblemSpec",
    "BlockSystem",
    "assemble",
    "assemble_advdiff",
    "assemble_stokes",
    "assemble_oseen",
    "assemble_wave",
    "assemble_beam",
    "schur_operator",
    "InnerSolveError",
    "KINDS",
]

KINDS = ("advdiff", "stokes", "oseen", "wave", "beam")

_DEFAULTS = {
    "nu": 1.0,
    "b": 1.0,
    "c": 0.0,
    "s1": 1.0,
    "s2": 0.0,
    "rho": 1.0,
    "eta": 1.0,
    "mu": 1.0,
}


class AssemblyError(ValueError):
    """Problem parameters cannot be discretized as requested."""


class InnerSolveError(RuntimeError):
    """An inner iterative solve did not reach its tolerance."""

    def __init__(self, report, context: str = ""):
        where = f" ({context})" if context else ""
        super().__init__(
            f"inner {report.method} solve{where} stopped after {report.iterations} iterations "
            f"at relative residual {report.final_relres:.3e} (tol {report.tol:.1e})"
        )
        self.report = report
        self.context = context


@dataclass(frozen=True)
class ProblemSpec:
    """Model problem, grid resolution and coefficients.

    Parameters
    ----------
    kind : {"advdiff", "stokes", "oseen", "wave", "beam"}
    dim : int
        Spatial dimension (1-3 for ``advdiff``; 2 for Stokes/Oseen; 1 otherwise).
    cells_per_side : int
        Grid cells along each axis; the mesh width along axis ``d`` is
        ``domain_box[d] / cells_per_side``.
    params : dict
        ``nu`` diffusivity, ``b`` advection (scalar or per-axis), ``c``
        reaction, ``s1``/``s2`` pressure stabilization, ``rho``/``eta`` wave
        coefficients, ``mu`` Oseen viscosity. Missing keys take defaults.
    domain_box : tuple of float, optional
        Axis lengths; unit cube by default.
    """

    kind: str
    dim: int = 1
    cells_per_side: int = 16
    params: dict = field(default_factory=dict)
    domain_box: Optional[tuple] = None

    def __post_init__(self):
        kind = self.kind.lower()
        if kind not in KINDS:
            raise AssemblyError(f"unknown problem kind {self.kind!r}; expected one of {KINDS}")
        object.__setattr__(self, "kind", kind)
        unknown = set(self.params) - set(_DEFAULTS)
        if unknown:
            raise AssemblyError(f"unknown parameters {sorted(unknown)}")
        if self.cells_per_side < 2:
            raise AssemblyError("cells_per_side must be >= 2")
        if self.param("nu") <= 0 or self.param("mu") <= 0:
            raise AssemblyError("viscosity/diffusivity must be positive")
        if self.param("c") < 0:
            raise AssemblyError("reaction coefficient must be non-negative")
        if self.param("rho") < 0 or self.param("eta") < 0:
            raise AssemblyError("wave coefficients must be non-negative")
        box = self.domain_box if self.domain_box is not None else (1.0,) * self.dim
        box = tuple(float(x) for x in box)
        if len(box) != self.dim or min(box) <= 0:
            raise AssemblyError(f"domain_box needs {self.dim} positive extents, got {box}")
        object.__setattr__(self, "domain_box", box)

    def param(self, name: str):
        return self.params.get(name, _DEFAULTS[name])

    def advection(self) -> tuple[float, ...]:
        b = self.param("b")
        if callable(b):
            raise AssemblyError("advection field must be constant")
        b = np.atleast_1d(np.asarray(b, dtype=np.float64))
        if b.size == 1:
            b = np.concatenate([b, np.zeros(self.dim - 1)])
        if b.size != self.dim:
            raise AssemblyError(f"advection vector needs {self.dim} components, got {b.size}")
        return tuple(float(x) for x in b)

    @property
    def h(self) -> float:
        """Mesh width along the first axis."""
        return self.domain_box[0] / self.cells_per_side

    def refine(self) -> "ProblemSpec":
        """Next finer grid.

        Even cell counts double. Odd counts go to ``2N - 1``, which doubles the
        (even) number of interior nodes so that a centered skew part stays
        nonsingular on every level.
        """
        n = self.cells_per_side
        return replace(self, cells_per_side=2 * n if n % 2 == 0 else 2 * n - 1)


@dataclass(frozen=True)
class BlockSystem:
    """Two-by-two block operator ``[[a11, a12], [a21, 0]]``."""

    a11: SplitOperator
    a12: SparseMatrix
    a21: SparseMatrix
    mass_p: SparseMatrix
    h_grid: float

    @property
    def n1(self) -> int:
        return self.a11.n

    @property
    def n2(self) -> int:
        return self.a12.n_cols

    def full(self) -> SparseMatrix:
        return SparseMatrix(sp.bmat([[self.a11.a.csr, self.a12.csr], [self.a21.csr, None]], format="csr"))


# -- 1D building blocks ---------------------------------------------------------

def _second_difference(m: int, h: float) -> sp.csr_array:
    """``tridiag(-1, 2, -1) / h²`` on ``m`` interior nodes (Dirichlet)."""
    e = np.ones(m)
    return sp.csr_array(sp.diags([-e[1:], 2 * e, -e[1:]], [-1, 0, 1]) / h**2)


def _centered_difference(m: int, h: float) -> sp.csr_array:
    """``tridiag(-1, 0, 1) / (2h)``; exactly skew-symmetric."""
    e = np.ones(m - 1)
    return sp.csr_array(sp.diags([-e, e], [-1, 1], shape=(m, m)) / (2 * h))


def _kron_axis(mats: list, axis: int, sizes: list[int]) -> sp.csr_array:
    """Embed a 1D operator acting along ``axis`` into the tensor grid."""
    out = None
    for d, m in enumerate(sizes):
        f = mats if d == axis else sp.identity(m, format="csr")
        out = f if out is None else sp.kron(out, f, format="csr")
    return sp.csr_array(out)


def _exact_skew(s: sp.csr_array) -> SparseMatrix:
    # average with the negated transpose so skewness holds bit for bit
    s = sp.csr_array(s)
    return SparseMatrix(0.5 * (s - s.T))


def _exact_sym(h: sp.csr_array) -> SparseMatrix:
    h = sp.csr_array(h)
    return SparseMatrix(0.5 * (h + h.T))


# -- problem assemblies ---------------------------------------------------------

def assemble_advdiff(spec: ProblemSpec) -> SplitOperator:
    """Advection-diffusion-reaction ``-ν Δu + b·∇u + c u`` with homogeneous Dirichlet data.

    ``H = ν (discrete negative Laplacian) + c I`` and ``S`` is the centered
    first difference scaled by the components of ``b``. The split records the
    interior grid shape for multigrid.
    """
    if spec.kind != "advdiff":
        raise AssemblyError(f"expected an advdiff spec, got {spec.kind}")
    if spec.dim not in (1, 2, 3):
        raise AssemblyError(f"advdiff supports dim 1-3, got {spec.dim}")
    nu, c = spec.param("nu"), spec.param("c")
    b = spec.advection()
    n_cells = spec.cells_per_side
    sizes = [n_cells - 1] * spec.dim
    hs = [length / n_cells for length in spec.domain_box]
    n = int(np.prod(sizes))
    H = sp.csr_array((n, n))
    S = sp.csr_array((n, n))
    for d in range(spec.dim):
        H = H + nu * _kron_axis(_second_difference(sizes[d], hs[d]), d, sizes)
        if b[d] != 0.0:
            S = S + b[d] * _kron_axis(_centered_difference(sizes[d], hs[d]), d, sizes)
    if c:
        H = H + c * sp.identity(n, format="csr")
    return SplitOperator.from_parts(_exact_sym(H), _exact_skew(S), tuple(sizes))


def _mac_parts(n: int, h: float):
    """Staggered-grid Laplacians and pressure gradient on ``n × n`` cells.

    u lives on vertical faces (``(n-1) × n``), v on horizontal faces
    (``n × (n-1)``), p at cell centres (``n × n``). Tangential no-slip walls
    use a mirrored ghost value, giving a diagonal ``3/h²`` in wall rows.
    """
    normal = _second_difference(n - 1, h)
    tangential = _second_difference(n, h).tolil()
    tangential[0, 0] = tangential[n - 1, n - 1] = 3.0 / h**2
    tangential = sp.csr_array(tangential)
    lap_u = sp.kron(normal, sp.identity(n)) + sp.kron(sp.identity(n - 1), tangential)
    lap_v = sp.kron(tangential, sp.identity(n - 1)) + sp.kron(sp.identity(n), normal)
    e = np.ones(n - 1)
    dx = sp.diags([-e, e], [0, 1], shape=(n - 1, n)) / h  # cell centres -> interior faces
    grad = sp.vstack([sp.kron(dx, sp.identity(n)), sp.kron(sp.identity(n), dx)])
    neumann = _second_difference(n, h).tolil()
    neumann[0, 0] = neumann[n - 1, n - 1] = 1.0 / h**2
    neumann = sp.csr_array(neumann)
    lap_p = sp.kron(neumann, sp.identity(n)) + sp.kron(sp.identity(n), neumann)
    return (sp.csr_array(lap_u), sp.csr_array(lap_v), sp.csr_array(grad), sp.csr_array(lap_p))


def _square_h(spec: ProblemSpec) -> float:
    if spec.dim != 2:
        raise AssemblyError(f"{spec.kind} is assembled in 2D only")
    lx, ly = spec.domain_box
    if lx != ly:
        raise AssemblyError(f"{spec.kind} needs a square domain")
    return lx / spec.cells_per_side


def assemble_stokes(spec: ProblemSpec) -> SplitOperator:
    """Pressure-regularized Stokes ``[[-νΔ, ∇], [div, s1 - s2 Δ]]``.

    ``H = diag(ν L_u, ν L_v, s1 I + s2 L_p)`` with a Neumann pressure
    Laplacian ``L_p``, and ``S = [[0, G], [-Gᵀ, 0]]`` with the face gradient
    ``G``.

    Raises
    ------
    AssemblyError
        If ``s1 <= 0``: the Neumann pressure Laplacian is singular, so the
        symmetric part would be singular.
    """
    if spec.kind != "stokes":
        raise AssemblyError(f"expected a stokes spec, got {spec.kind}")
    h = _square_h(spec)
    nu, s1, s2 = spec.param("nu"), spec.param("s1"), spec.param("s2")
    if s1 < 0 or s2 < 0:
        raise AssemblyError("stabilization weights must be non-negative")
    if s1 == 0:
        raise AssemblyError("s1 = 0 leaves the symmetric part singular (constant pressure)")
    n = spec.cells_per_side
    lap_u, lap_v, grad, lap_p = _mac_parts(n, h)
    hp = s1 * sp.identity(n * n, format="csr") + s2 * lap_p
    H = sp.block_diag([nu * lap_u, nu * lap_v, hp], format="csr")
    S = sp.bmat([[None, grad], [-grad.T, None]], format="csr")
    return SplitOperator.from_parts(_exact_sym(H), _exact_skew(S))


def _strain_energy(n: int, h: float, mu: float) -> sp.csr_array:
    """``2μ ∫ ε(u):ε(u)`` on the staggered grid, divided by the cell area.

    Normal strains sit at cell centres; the shear strain sits at vertices,
    with one-sided differences against the no-slip wall and trapezoidal
    weights on the boundary.
    """
    nu_ = (n - 1) * n

    def uid(i, j):  # u on face x_i, cell row j
        return (i - 1) * n + j

    def vid(i, j):  # v in cell column i, face y_j
        return nu_ + i * (n - 1) + (j - 1)

    rows, cols, vals, weights = [], [], [], []

    def add(entries, w):
        r = len(weights)
        for col, v in entries:
            rows.append(r)
            cols.append(col)
            vals.append(v)
        weights.append(w)

    for i in range(n):
        for j in range(n):
            e = []
            if i + 1 <= n - 1:
                e.append((uid(i + 1, j), 1 / h))
            if i >= 1:
                e.append((uid(i, j), -1 / h))
            add(e, h * h)
            e = []
            if j + 1 <= n - 1:
                e.append((vid(i, j + 1), 1 / h))
            if j >= 1:
                e.append((vid(i, j), -1 / h))
            add(e, h * h)
    for i in range(n + 1):
        for j in range(n + 1):
            e = []
            if 1 <= i <= n - 1:
                if 1 <= j <= n - 1:
                    e += [(uid(i, j), 0.5 / h), (uid(i, j - 1), -0.5 / h)]
                elif j == 0:
                    e.append((uid(i, 0), 1 / h))
                else:
                    e.append((uid(i, n - 1), -1 / h))
            if 1 <= j <= n - 1:
                if 1 <= i <= n - 1:
                    e += [(vid(i, j), 0.5 / h), (vid(i - 1, j), -0.5 / h)]
                elif i == 0:
                    e.append((vid(0, j), 1 / h))
                else:
                    e.append((vid(n - 1, j), -1 / h))
            w = h * h * (0.5 if i in (0, n) else 1.0) * (0.5 if j in (0, n) else 1.0)
            add(e, 2 * w)  # ε12 and ε21 both contribute
    E = sp.csr_array((vals, (rows, cols)), shape=(len(weights), 2 * nu_))
    return sp.csr_array(2 * mu * (E.T @ sp.diags(weights) @ E) / (h * h))


def assemble_oseen(spec: ProblemSpec) -> BlockSystem:
    """Oseen blocks: ``a11 = -div(2μ ε(u)) + (b·∇)u``, ``a12 = ∇``, ``a21 = -a12ᵀ``.

    The pressure mass matrix is the identity (strong scaling). The Schur
    complement has the constant pressure in its kernel.
    """
    if spec.kind != "oseen":
        raise AssemblyError(f"expected an oseen spec, got {spec.kind}")
    h = _square_h(spec)
    n = spec.cells_per_side
    bx, by = spec.advection()
    visc = _strain_energy(n, h, spec.param("mu"))
    adv_u = bx * sp.kron(_centered_difference(n - 1, h), sp.identity(n)) + by * sp.kron(
        sp.identity(n - 1), _centered_difference(n, h)
    )
    adv_v = bx * sp.kron(_centered_difference(n, h), sp.identity(n - 1)) + by * sp.kron(
        sp.identity(n), _centered_difference(n - 1, h)
    )
    adv = sp.block_diag([adv_u, adv_v], format="csr")
    _, _, grad, _ = _mac_parts(n, h)
    a11 = SplitOperator.from_parts(_exact_sym(visc), _exact_skew(adv))
    g = SparseMatrix(grad)
    return BlockSystem(a11, g, -g.T, SparseMatrix.identity(n * n), h)


def assemble_wave(spec: ProblemSpec) -> SplitOperator:
    """Damped first-order wave system in 1D.

    Velocity ``p`` at ``N`` cell centres, stress ``q`` at the ``N - 1``
    interior nodes (``q = 0`` at both ends). ``H = diag(ρ I, η I)`` and
    ``S = [[0, Gᵀ], [-G, 0]]`` with ``G`` the node-centred difference.
    The skew part has odd size and is therefore always singular.
    """
    if spec.kind != "wave":
        raise AssemblyError(f"expected a wave spec, got {spec.kind}")
    if spec.dim != 1:
        raise AssemblyError("wave is assembled in 1D only")
    rho, eta = spec.param("rho"), spec.param("eta")
    if rho <= 0 or eta <= 0:
        raise AssemblyError("rho and eta must be positive for a nonsingular symmetric part")
    n, h = spec.cells_per_side, spec.h
    e = np.ones(n - 1)
    g = sp.csr_array(sp.diags([-e, e], [0, 1], shape=(n - 1, n)) / h)
    H = sp.block_diag([rho * sp.identity(n), eta * sp.identity(n - 1)], format="csr")
    S = sp.bmat([[None, g.T], [-g, None]], format="csr")
    return SplitOperator.from_parts(_exact_sym(H), _exact_skew(S))


def assemble_beam(spec: ProblemSpec) -> BlockSystem:
    """Strongly damped beam in 1D, clamped at ``x = 0`` and free at ``x = L``.

    Deflections ``p_1..p_N`` with ``p_0 = 0``; the free end uses the mirror
    ghost ``p_{N+1} = p_{N-1}``. With the second difference ``D2`` and the
    trapezoidal weights ``W``: ``a11 = D2ᵀ W D2``, ``a12 = D2ᵀ W`` and
    ``a21 = -W D2 = -a12ᵀ``, so the Schur complement equals ``W``.
    """
    if spec.kind != "beam":
        raise AssemblyError(f"expected a beam spec, got {spec.kind}")
    if spec.dim != 1:
        raise AssemblyError("beam is assembled in 1D only")
    n, h = spec.cells_per_side, spec.h
    if n < 4:
        raise AssemblyError("beam needs at least 4 cells for the fourth-difference stencil")
    d2 = _second_difference(n, h).tolil()
    d2 = -d2
    d2[n - 1, n - 2] = 2.0 / h**2
    d2 = sp.csr_array(d2)
    w = np.full(n, h)
    w[-1] = h / 2
    W = sp.diags(w, format="csr")
    a11 = _exact_sym(d2.T @ W @ d2)
    a12 = SparseMatrix(d2.T @ W)
    zero = SparseMatrix(sp.csr_array((n, n)))
    return BlockSystem(SplitOperator.from_parts(a11, zero), a12, -a12.T, SparseMatrix(W), h)


def assemble(spec: ProblemSpec):
    """Assemble any kind; returns a SplitOperator or a BlockSystem."""
    return {
        "advdiff": assemble_advdiff,
        "stokes": assemble_stokes,
        "oseen": assemble_oseen,
        "wave": assemble_wave,
        "beam": assemble_beam,
    }[spec.kind](spec)


def schur_operator(blocks: BlockSystem, inner=None) -> LinearOperator:
    """Matrix-free Schur complement ``W v = -a21 a11⁻¹ (a12 v)``.

    Parameters
    ----------
    blocks : BlockSystem
    inner : SolverConfig, optional
        How ``a11`` is solved; default (or method ``direct``) is a sparse LU
        factorization reused for every application.

    Returns
    -------
    LinearOperator
        With an adjoint. ``op.stats["inner_iterations"]`` accumulates inner
        iteration counts.

    Raises
    ------
    InnerSolveError
        From ``apply`` when an iterative inner solve does not converge.
    """
    from .krylov import solve  # local import: krylov builds on discretize-free modules only

    a11 = blocks.a11
    a12, a21 = blocks.a12.csr, blocks.a21.csr
    stats = {"inner_iterations": 0}
    if inner is None or inner.method == "direct":
        lu = spla.splu(sp.csc_array(a11.a.csr))

        def fwd(y):
            stats["inner_iterations"] += 1
            return lu.solve(y)

        def adj(y):
            stats["inner_iterations"] += 1
            return lu.solve(y, trans="T")
    else:
        a11t = SplitOperator(a11.a.T, a11.h, -a11.s, a11.grid)

        def _iter(system, y):
            x, rep = solve(system, y, inner)
            stats["inner_iterations"] += rep.iterations
            if not rep.converged:
                raise InnerSolveError(rep)
            return x

        def fwd(y):
            return _iter(a11, y)

        def adj(y):
            return _iter(a11t, y)

    op = LinearOperator(
        blocks.n2,
        blocks.n2,
        lambda v: -(a21 @ fwd(a12 @ v)),
        lambda v: -(a12.T @ adj(a21.T @ v)),
    )
    op.stats = stats
    return op
