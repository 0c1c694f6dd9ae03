import math

import numpy as np
import pytest
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_split
from oracles import dense_width
from splitkrylov.discretize import ProblemSpec, assemble
from splitkrylov.sparse import LinearOperator
from splitkrylov.spectra import (
    SpectrumError,
    cond2,
    dense_eig_oracle,
    loglog_slope,
    refinement_study,
    spectral_width,
)


@given(n=st.integers(2, 120), seed=st.integers(0, 2**31 - 1))
def test_power_matches_dense(n, seed):
    so = random_split(n, seed, skew_scale=1.5)
    d = cond2(so.a, method="dense")
    p = cond2(so.a, method="power", tol=1e-10)
    assert abs(p.kappa2 - d.kappa2) <= 0.02 * d.kappa2


@pytest.mark.parametrize("cells, with_inverse", [(400, True), (60, False)])
def test_power_matches_dense_matrix_free(cells, with_inverse):
    so = assemble(ProblemSpec("advdiff", 1, cells, {"b": 30.0}))
    a = so.a.csr
    op = LinearOperator(so.n, so.n, lambda x: a @ x, lambda y: a.T @ y)
    inv = None
    if with_inverse:
        lu = spla.splu(sp.csc_array(a))
        inv = LinearOperator(so.n, so.n, lu.solve, lambda y: lu.solve(y, trans="T"))
    d = cond2(so.a, method="dense")
    p = cond2(op, method="power", inverse=inv, tol=1e-10)
    assert abs(p.kappa2 - d.kappa2) <= 0.02 * d.kappa2
    assert p.method == "PowerIteration" and d.method == "Dense"


def test_cond2_known_values():
    assert cond2(np.diag([1.0, 4.0, 2.0])).kappa2 == pytest.approx(4.0)
    rep = cond2(sp.diags([1.0, 0.0, 2.0]), method="power")
    assert rep.status == "singular" and math.isinf(rep.kappa2)
    assert cond2(np.diag([1.0, 0.0])).status == "singular"


def test_cond2_kernel_projection():
    a = np.array([[1.0, -1.0], [-1.0, 1.0]])
    ker = np.ones((2, 1)) / np.sqrt(2)
    assert cond2(a, kernel=ker).kappa2 == pytest.approx(1.0)
    assert cond2(a, method="power", kernel=ker, inverse=lambda y: y / 2.0).kappa2 == pytest.approx(1.0)


def test_power_without_adjoint_fails():
    op = LinearOperator(3, 3, lambda x: 2 * x)
    with pytest.raises(SpectrumError):
        cond2(op, method="power")


def test_dense_oracle_limit():
    with pytest.raises(SpectrumError):
        dense_eig_oracle(np.eye(5), limit=4)
    spec = dense_eig_oracle(np.diag([3.0, 1.0, 2.0]))
    assert spec.symmetric and np.allclose(spec.eigenvalues, [1, 2, 3])


@given(n=st.integers(2, 120), seed=st.integers(0, 2**31 - 1), scale=st.floats(0.01, 50.0))
def test_spectral_width_matches_dense(n, seed, scale):
    so = random_split(n, seed, skew_scale=scale)
    ref = dense_width(so.h.toarray(), so.s.toarray())
    assert spectral_width(so) == pytest.approx(ref, rel=1e-6)


def test_spectral_width_of_symmetric_is_zero():
    so = random_split(10, 0, skew_scale=0.0)
    assert spectral_width(so) == 0.0


@pytest.mark.parametrize(
    "spec",
    [
        ProblemSpec("advdiff", 1, 32, {"b": 20.0}),
        ProblemSpec("advdiff", 2, 8, {"b": (3.0, 1.0)}),
        ProblemSpec("stokes", 2, 5, {"s2": 1.0}),
        ProblemSpec("wave", 1, 16),
    ],
    ids=lambda s: f"{s.kind}{s.dim}",
)
def test_spectral_inclusion(spec):
    so = assemble(spec)
    lam = spectral_width(so)
    ev = np.linalg.eigvals(np.linalg.solve(so.h.toarray(), so.a.toarray()))
    assert np.allclose(ev.real, 1.0, atol=1e-8 * max(1.0, lam))
    assert np.abs(ev.imag).max() <= lam * (1 + 1e-8) + 1e-12
    kappa = cond2(np.linalg.solve(so.h.toarray(), so.a.toarray())).kappa2
    assert kappa >= 1.0


def test_refinement_study_rows():
    rows = refinement_study(ProblemSpec("advdiff", 1, 8), 3, ["H", "S", "H^-1A", "P^-1A"], precond="jacobi")
    assert len(rows) == 12
    assert set(rows[0]) == {"h", "dofs", "target", "kappa2", "lambda_width", "method", "status"}
    assert [r["dofs"] for r in rows[::4]] == [7, 15, 31]
    hs = [r["h"] for r in rows if r["target"] == "H"]
    ks = [r["kappa2"] for r in rows if r["target"] == "H"]
    assert loglog_slope(hs, ks) == pytest.approx(-2.0, abs=0.25)


def test_refinement_study_errors():
    with pytest.raises(ValueError):
        refinement_study(ProblemSpec("advdiff", 1, 8), 2, ["H"])
    with pytest.raises(ValueError):
        refinement_study(ProblemSpec("advdiff", 1, 8), 3, ["Q"])
    rows = refinement_study(ProblemSpec("advdiff", 1, 8), 3, ["W"], width=False)
    assert all(r["status"].startswith("error") for r in rows)


def test_block_targets():
    rows = refinement_study(ProblemSpec("beam", 1, 8), 3, ["A11", "W", "M_p^-1W"])
    w = [r["kappa2"] for r in rows if r["target"] == "W"]
    assert all(k == pytest.approx(2.0, rel=1e-8) for k in w)
    mw = [r["kappa2"] for r in rows if r["target"] == "M_p^-1W"]
    assert all(k == pytest.approx(1.0, rel=1e-8) for k in mw)


def test_loglog_slope():
    h = np.array([0.1, 0.05, 0.025])
    assert loglog_slope(h, 3 * h**-2) == pytest.approx(-2.0)
