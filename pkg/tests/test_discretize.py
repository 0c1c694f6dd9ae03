import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from splitkrylov.discretize import AssemblyError, BlockSystem, InnerSolveError, ProblemSpec, assemble, schur_operator
from splitkrylov.krylov import SolverConfig
from splitkrylov.mmio import mm_read, mm_write
from splitkrylov.spectra import cond2, loglog_slope

SPECS = [
    ProblemSpec("advdiff", 1, 20, {"b": 3.0, "c": 1.0}),
    ProblemSpec("advdiff", 2, 8, {"b": (1.0, -2.0)}),
    ProblemSpec("advdiff", 3, 5, {"b": (1.0, 0.5, 0.25)}),
    ProblemSpec("stokes", 2, 6, {"s2": 1.0}),
    ProblemSpec("wave", 1, 12),
]
BLOCKS = [ProblemSpec("oseen", 2, 6, {"b": (1.0, 1.0)}), ProblemSpec("beam", 1, 10)]


def _skew_form_bound(s, seed):
    x = np.random.default_rng(seed).standard_normal(s.n_rows)
    return abs(x @ (s.csr @ x)), 1e-12 * max(s.frobenius(), 1e-300) * (x @ x)


@pytest.mark.parametrize("spec", SPECS, ids=lambda s: f"{s.kind}{s.dim}")
@given(seed=st.integers(0, 2**31 - 1))
def test_split_structure_exact(spec, seed):
    so = assemble(spec)
    h, s, a = so.h.toarray(), so.s.toarray(), so.a.toarray()
    assert np.array_equal(h, h.T)
    assert np.array_equal(s, -s.T)
    assert np.array_equal(h + s, a)
    val, bound = _skew_form_bound(so.s, seed)
    assert val <= bound + 1e-300
    assert np.linalg.eigvalsh(h).min() > 0


@pytest.mark.parametrize("spec", BLOCKS, ids=lambda s: s.kind)
def test_block_structure(spec):
    bs = assemble(spec)
    assert isinstance(bs, BlockSystem)
    assert np.array_equal(bs.a21.toarray(), -bs.a12.toarray().T)
    so = bs.a11
    assert np.array_equal(so.h.toarray(), so.h.toarray().T)
    assert np.array_equal(so.s.toarray(), -so.s.toarray().T)
    assert bs.full().shape == (bs.n1 + bs.n2,) * 2


def test_advdiff_1d_stencil():
    so = assemble(ProblemSpec("advdiff", 1, 4, {"nu": 1.0, "b": 2.0, "c": 3.0}))
    h = 0.25
    a = so.a.toarray()
    assert np.allclose(np.diag(a), 2 / h**2 + 3.0)
    assert np.allclose(np.diag(a, 1), -1 / h**2 + 2.0 / (2 * h))
    assert np.allclose(np.diag(a, -1), -1 / h**2 - 2.0 / (2 * h))
    assert so.grid == (3,)


def test_refine_rule():
    assert ProblemSpec("advdiff", 1, 8).refine().cells_per_side == 16
    assert ProblemSpec("advdiff", 1, 5).refine().cells_per_side == 9
    assert ProblemSpec("advdiff", 1, 8).refine().h == pytest.approx(1 / 16)


def test_stiffness_scaling():
    hs, ks = [], []
    spec = ProblemSpec("advdiff", 1, 8, {"b": 0.0})
    for _ in range(4):
        so = assemble(spec)
        hs.append(spec.h)
        ks.append(cond2(so.h, method="dense").kappa2)
        spec = spec.refine()
    assert abs(loglog_slope(hs, ks) + 2) <= 0.25


@pytest.mark.parametrize(
    "spec_args",
    [
        ("stokes", 2, 4, {"s1": 0.0}),
        ("stokes", 1, 4, {}),
        ("beam", 1, 3, {}),
        ("wave", 1, 4, {"rho": 0.0}),
        ("advdiff", 2, 4, {"b": (1.0, 2.0, 3.0)}),
    ],
)
def test_assembly_errors(spec_args):
    kind, dim, cells, params = spec_args
    with pytest.raises(AssemblyError):
        assemble(ProblemSpec(kind, dim, cells, params))


def test_spec_validation():
    with pytest.raises(AssemblyError):
        ProblemSpec("heat")
    with pytest.raises(AssemblyError):
        ProblemSpec("advdiff", 1, 8, {"kappa": 1.0})
    with pytest.raises(AssemblyError):
        ProblemSpec("advdiff", 1, 1)
    with pytest.raises(AssemblyError):
        ProblemSpec("advdiff", 1, 8, {"nu": 0.0})


def test_beam_schur_is_weight_matrix():
    bs = assemble(ProblemSpec("beam", 1, 12))
    w = schur_operator(bs).to_dense()
    assert np.allclose(w, bs.mass_p.toarray(), atol=1e-10 * bs.h_grid)


def test_oseen_schur_direct_vs_iterative():
    bs = assemble(ProblemSpec("oseen", 2, 6, {"b": (1.0, 0.0)}))
    a11 = bs.a11.a.toarray()
    dense = -bs.a21.toarray() @ np.linalg.solve(a11, bs.a12.toarray())
    direct = schur_operator(bs)
    iterative = schur_operator(bs, SolverConfig("gmres", tol=1e-12, precond="exact"))
    v = np.random.default_rng(0).standard_normal(bs.n2)
    assert np.allclose(direct.apply(v), dense @ v, atol=1e-10)
    assert np.allclose(iterative.apply(v), dense @ v, atol=1e-8)
    assert np.allclose(direct.apply_adjoint(v), dense.T @ v, atol=1e-10)
    assert iterative.stats["inner_iterations"] > 1
    # constant pressure is in the kernel
    assert np.linalg.norm(direct.apply(np.ones(bs.n2))) < 1e-10


def test_inner_solve_failure_raises():
    bs = assemble(ProblemSpec("oseen", 2, 8, {"b": (50.0, 0.0)}))
    op = schur_operator(bs, SolverConfig("gmres", tol=1e-14, max_iter=2))
    with pytest.raises(InnerSolveError):
        op.apply(np.random.default_rng(0).standard_normal(bs.n2))


def test_export_round_trip(tmp_path):
    so = assemble(ProblemSpec("advdiff", 2, 6))
    mm_write(tmp_path / "a.mtx", so.a)
    assert np.array_equal(mm_read(tmp_path / "a.mtx").toarray(), so.a.toarray())
