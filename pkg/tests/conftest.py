import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import settings

from splitkrylov.sparse import SplitOperator

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")


def random_split(n: int, seed: int, skew_scale: float = 1.0, density: float = 0.3) -> SplitOperator:
    """SPD ``h`` plus sparse skew ``s`` of dimension ``n``."""
    rng = np.random.default_rng(seed)
    m = sp.random(n, n, density=density, random_state=rng, format="csr")
    h = (m @ m.T + n * 0.1 * sp.identity(n) + sp.identity(n)).tocsr()
    k = sp.random(n, n, density=density, random_state=rng, format="csr")
    s = skew_scale * (k - k.T)
    return SplitOperator.from_parts(h, s)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# -- acceptance summary ------------------------------------------------------------

_CRITERIA: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


@pytest.fixture
def detail():
    """Free-form measurements a criterion test reports in the summary line."""
    return {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    num = marker.args[0]
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        info = item.funcargs.get("detail") or {}
        text = ", ".join(f"{k}={v}" for k, v in info.items())
        if hasattr(rep, "wasxfail"):
            status = "XFAIL"
        else:
            status = "PASS" if rep.passed else ("SKIP" if rep.skipped else "FAIL")
        _CRITERIA[num] = (status, text)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for num in sorted(_CRITERIA):
        status, text = _CRITERIA[num]
        terminalreporter.write_line(f"criterion {num:2d}: {status}  {text}")
