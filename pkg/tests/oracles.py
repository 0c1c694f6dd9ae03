"""Independent dense reference computations shared by the tests."""
import numpy as np
import scipy.linalg as sla


def dense_width(h: np.ndarray, s: np.ndarray) -> float:
    """max |Im μ| over the eigenvalues of H⁻¹S (purely imaginary for SPD H)."""
    return float(np.max(np.abs(sla.eigvals(s, h).imag))) if s.any() else 0.0


def widlund_rate(lam: float) -> float:
    r = np.sqrt(1.0 + lam * lam)
    return (r - 1.0) / (r + 1.0)


def rapoport_rate(lam: float) -> float:
    return lam / (np.sqrt(1.0 + lam * lam) + 1.0)


def h_norm(h: np.ndarray, x: np.ndarray) -> float:
    return float(np.sqrt(x @ h @ x))


def hinv_norm(h: np.ndarray, r: np.ndarray) -> float:
    return float(np.sqrt(r @ np.linalg.solve(h, r)))
