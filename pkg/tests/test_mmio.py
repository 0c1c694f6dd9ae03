import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from splitkrylov.mmio import MatrixMarketError, mm_read, mm_write, vector_read, vector_write
from splitkrylov.sparse import SparseMatrix


@given(st.integers(1, 30), st.integers(1, 30), st.integers(0, 2**31 - 1))
def test_round_trip_general(tmp_path_factory, m, n, seed):
    rng = np.random.default_rng(seed)
    a = sp.random(m, n, density=0.3, random_state=rng, format="csr", data_rvs=rng.standard_normal)
    path = tmp_path_factory.mktemp("mm") / "a.mtx"
    mm_write(path, a)
    b = mm_read(path)
    assert b.shape == (m, n)
    assert np.array_equal(b.toarray(), a.toarray())


def test_round_trip_symmetric(tmp_path):
    a = np.array([[4.0, 1.0, 0.0], [1.0, 3.0, -2.5], [0.0, -2.5, 1.0 / 3.0]])
    mm_write(tmp_path / "s.mtx", a, symmetric=True)
    text = (tmp_path / "s.mtx").read_text()
    assert "symmetric" in text.splitlines()[0]
    assert np.array_equal(mm_read(tmp_path / "s.mtx").toarray(), a)


def test_symmetric_write_rejects_nonsymmetric(tmp_path):
    with pytest.raises(ValueError):
        mm_write(tmp_path / "x.mtx", np.array([[1.0, 2.0], [0.0, 1.0]]), symmetric=True)


def test_duplicates_summed_and_one_based(tmp_path):
    p = tmp_path / "d.mtx"
    p.write_text("%%MatrixMarket matrix coordinate real general\n% comment\n2 2 3\n1 2 1.5\n1 2 2.5\n2 1 -1\n")
    a = mm_read(p)
    assert np.array_equal(a.toarray(), [[0.0, 4.0], [-1.0, 0.0]])


@pytest.mark.parametrize(
    "body, line",
    [
        ("%%MatrixMarket matrix coordinate complex general\n1 1 1\n1 1 1\n", 1),
        ("%%MatrixMarket matrix coordinate real general\n2 2 1\n3 1 1.0\n", 3),
        ("%%MatrixMarket matrix coordinate real general\n2 2 2\n1 1 1.0\n", 3),
        ("%%MatrixMarket matrix coordinate real general\n2 2 1\n1 1 abc\n", 3),
    ],
)
def test_malformed_input_reports_line(tmp_path, body, line):
    p = tmp_path / "bad.mtx"
    p.write_text(body)
    with pytest.raises(MatrixMarketError) as info:
        mm_read(p)
    assert info.value.lineno == line


def test_vector_round_trip(tmp_path):
    x = np.array([1.0, -2.0 / 3.0, 1e-300])
    vector_write(tmp_path / "b.mtx", x)
    assert np.array_equal(vector_read(tmp_path / "b.mtx"), x)
    mm_write(tmp_path / "c.mtx", SparseMatrix(x.reshape(-1, 1)))
    assert np.array_equal(vector_read(tmp_path / "c.mtx"), x)
