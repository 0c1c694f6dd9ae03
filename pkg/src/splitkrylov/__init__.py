"""Split-operator Krylov solvers, model discretizations and conditioning studies.

A nonsymmetric matrix ``A`` is split into its symmetric part ``H`` and skew
part ``S``. With an exact ``H``-solve the Krylov space of ``H⁻¹S`` admits short
recurrences (Widlund's and Rapoport's methods); the package also provides
PCG/GMRES, preconditioners, finite-difference model problems, condition-number
estimators and optimal-control KKT solvers.
"""
from .discretize import BlockSystem, ProblemSpec, assemble, schur_operator
from .krylov import SolveReport, SolverConfig, cg_solve, gmres_solve, h_lanczos, rapoport_solve, solve, widlund_solve
from .mmio import mm_read, mm_write
from .optctl import OcpProblem, condensed_solve, kkt_schur_solve, midpoint_step, ppcg_solve
from .precond import PrecondSpec, Preconditioner, build
from .sparse import LinearOperator, SparseMatrix, SplitOperator, split, spmv
from .spectra import cond2, refinement_study, spectral_width

__version__ = "0.1.0"

__all__ = [
    "BlockSystem",
    "LinearOperator",
    "OcpProblem",
    "PrecondSpec",
    "Preconditioner",
    "ProblemSpec",
    "SolveReport",
    "SolverConfig",
    "SparseMatrix",
    "SplitOperator",
    "assemble",
    "build",
    "cg_solve",
    "condensed_solve",
    "cond2",
    "gmres_solve",
    "h_lanczos",
    "kkt_schur_solve",
    "midpoint_step",
    "mm_read",
    "mm_write",
    "ppcg_solve",
    "rapoport_solve",
    "refinement_study",
    "schur_operator",
    "solve",
    "spectral_width",
    "split",
    "spmv",
    "widlund_solve",
]
