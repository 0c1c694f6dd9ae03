import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_split
from splitkrylov.discretize import ProblemSpec, assemble
from splitkrylov.krylov import SolverConfig
from splitkrylov.optctl import (
    OcpProblem,
    UnsupportedObservationError,
    assemble_kkt,
    condensed_solve,
    constraint_precond_apply,
    cost,
    kkt_schur_solve,
    midpoint_step,
    ppcg_solve,
    reduced_apply,
    reduced_gradient,
)
from splitkrylov.sparse import ShapeError, SplitOperator


def random_ocp(n, seed, m=None, q=None, lam=None, square_c=False):
    rng = np.random.default_rng(seed)
    m = m or max(1, n // 2)
    q = n if square_c else (q or n)
    b = sp.random(n, m, density=0.4, random_state=rng, format="csr") + sp.eye(n, m)
    c = sp.identity(n) + 0.1 * sp.random(q, n, density=0.3, random_state=rng) if square_c else sp.random(
        q, n, density=0.4, random_state=rng
    ) + sp.eye(q, n)
    return OcpProblem(
        random_split(n, seed),
        b,
        c,
        lam if lam is not None else float(10 ** rng.uniform(-3, 1)),
        rng.standard_normal(n),
        rng.standard_normal(q),
        rng.standard_normal(m),
    )


def test_scalar_example():
    one = np.ones((1, 1))
    ocp = OcpProblem(SplitOperator.from_parts(one, np.zeros((1, 1))), one, one, 1.0, np.zeros(1), np.ones(1))
    for sol in (condensed_solve(ocp), ppcg_solve(ocp), kkt_schur_solve(ocp)):
        assert np.allclose([sol.x[0], sol.u[0], sol.p[0]], 0.5, atol=1e-12)


@given(n=st.integers(2, 50), seed=st.integers(0, 2**31 - 1))
def test_gradient_matches_finite_differences(n, seed):
    ocp = random_ocp(n, seed)
    rng = np.random.default_rng(seed + 7)
    u = rng.standard_normal(ocp.m)
    g = reduced_gradient(ocp, u)
    step = 1e-5
    fd = np.array([(cost(ocp, u + step * e) - cost(ocp, u - step * e)) / (2 * step) for e in np.eye(ocp.m)])
    assert np.linalg.norm(g - fd) <= 1e-6 * max(np.linalg.norm(fd), 1.0)


@given(n=st.integers(2, 40), seed=st.integers(0, 2**31 - 1))
def test_routes_agree_and_satisfy_kkt(n, seed):
    ocp = random_ocp(n, seed, square_c=True, lam=float(np.random.default_rng(seed).uniform(0.05, 5)))
    cgtol = 1e-10
    sols = [condensed_solve(ocp, cgtol=cgtol), ppcg_solve(ocp, cgtol=cgtol), kkt_schur_solve(ocp, cgtol=cgtol)]
    ref = sols[0].u
    K, rhs = assemble_kkt(ocp)
    for s in sols:
        assert np.linalg.norm(s.u - ref) <= 1e-6 * max(np.linalg.norm(ref), 1e-12)
        r = rhs - K.csr @ np.concatenate([s.x, s.u, s.p])
        assert np.linalg.norm(r) <= 10 * cgtol * np.linalg.norm(rhs)
        assert s.outer_report.converged


def test_kkt_is_symmetric():
    K, _ = assemble_kkt(random_ocp(10, 1))
    d = K.toarray()
    assert np.array_equal(d, d.T)


@pytest.mark.parametrize("lam", [0.1, 1.0, 10.0])
def test_closed_form_identity_problem(lam):
    n = 20
    y = np.random.default_rng(0).standard_normal(n)
    eye = sp.identity(n)
    ocp = OcpProblem(SplitOperator.from_parts(eye, sp.csr_array((n, n))), eye, eye, lam, np.zeros(n), y)
    for sol in (condensed_solve(ocp), ppcg_solve(ocp), kkt_schur_solve(ocp)):
        assert np.allclose(sol.u, y / (1 + lam), atol=1e-10)


@given(seed=st.integers(0, 2**31 - 1))
def test_ppcg_iterates_stay_feasible(seed):
    ocp = random_ocp(30, seed)
    sol = ppcg_solve(ocp, cgtol=1e-10)
    feas = sol.outer_report.extras["feasibility"]
    assert max(feas) <= 1e-8 * max(1.0, np.linalg.norm(ocp.f))
    assert "feasibility-degraded" not in sol.outer_report.flags


@given(n=st.integers(1, 100), seed=st.integers(0, 2**31 - 1))
def test_constraint_preconditioner_round_trip(n, seed):
    ocp = random_ocp(n, seed)
    rng = np.random.default_rng(seed)
    r = rng.standard_normal(2 * n + ocp.m)
    z = constraint_precond_apply(ocp, SolverConfig("direct"), r)
    a, b = ocp.a_split.a.csr, ocp.b_in.csr
    P = sp.bmat(
        [[None, None, a.T], [None, ocp.lambda_reg * sp.identity(ocp.m), -b.T], [a, -b, None]], format="csr"
    )
    P = P + sp.csr_array((2 * n + ocp.m,) * 2)
    assert np.linalg.norm(P @ z - r) <= 1e-10 * max(np.linalg.norm(r), 1.0) * max(1.0, np.linalg.norm(z))


def test_constraint_preconditioner_shape_check():
    ocp = random_ocp(5, 0)
    with pytest.raises(ShapeError):
        constraint_precond_apply(ocp, SolverConfig("direct"), np.ones(3))


def test_reduced_operator_is_spd():
    ocp = random_ocp(12, 4)
    m = np.column_stack([reduced_apply(ocp, SolverConfig("direct"), e) for e in np.eye(ocp.m)])
    assert np.allclose(m, m.T, atol=1e-10)
    assert np.linalg.eigvalsh(0.5 * (m + m.T)).min() >= ocp.lambda_reg * (1 - 1e-8)


@pytest.mark.parametrize("inner", ["gmres+exact", "widlund+exact", "rapoport+exact", "gmres+ilu:1e-4"])
def test_iterative_inner_solvers(inner):
    method, prec = inner.split("+")
    so = assemble(ProblemSpec("advdiff", 1, 32, {"b": 5.0}))
    n = so.n
    eye = sp.identity(n)
    ocp = OcpProblem(so, eye, eye, 1e-2, np.ones(n), np.linspace(0, 1, n))
    ref = condensed_solve(ocp, cgtol=1e-10)
    cfg = SolverConfig(method, precond=prec)
    for sol in (condensed_solve(ocp, cfg, cgtol=1e-8), ppcg_solve(ocp, cfg, cgtol=1e-8, inner_tol=1e-12)):
        assert np.linalg.norm(sol.u - ref.u) <= 1e-5 * np.linalg.norm(ref.u)
        assert sol.inner_totals["inner_iterations"] > sol.inner_totals["state_solves"]


def test_schur_route_requires_square_observation():
    ocp = random_ocp(6, 0, q=3)
    with pytest.raises(UnsupportedObservationError):
        kkt_schur_solve(ocp)
    singular = OcpProblem(random_split(3, 0), sp.identity(3), sp.diags([1.0, 0.0, 1.0]), 1.0, np.zeros(3), np.ones(3))
    with pytest.raises(UnsupportedObservationError):
        kkt_schur_solve(singular)


def test_problem_validation():
    so = random_split(4, 0)
    with pytest.raises(ShapeError):
        OcpProblem(so, sp.identity(3), sp.identity(4), 1.0, np.zeros(4), np.zeros(4))
    with pytest.raises(ValueError):
        OcpProblem(so, sp.identity(4), sp.identity(4), 0.0, np.zeros(4), np.zeros(4))


def test_midpoint_step_is_dissipative():
    rng = np.random.default_rng(5)
    for i in range(100):
        so = random_split(15, i, skew_scale=3.0)
        x = rng.standard_normal(15)
        dt = float(10 ** rng.uniform(-3, 1))
        method = ("direct", "gmres", "widlund", "rapoport")[i % 4]
        x_new = midpoint_step(so, dt, x, SolverConfig(method, tol=1e-13, precond="exact"))
        assert np.linalg.norm(x_new) <= np.linalg.norm(x) * (1 + 1e-10)


def test_midpoint_step_preserves_norm_without_damping():
    k = sp.random(10, 10, density=0.4, random_state=1)
    so = SplitOperator.from_parts(sp.csr_array((10, 10)), k - k.T)
    x = np.arange(10.0)
    x_new = midpoint_step(so, 0.5, x, SolverConfig("direct"))
    assert np.linalg.norm(x_new) == pytest.approx(np.linalg.norm(x), rel=1e-12)
