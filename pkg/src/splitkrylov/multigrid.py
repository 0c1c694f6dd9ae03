"""Geometric multigrid V-cycles on vertex-centred tensor grids.

The fine grid has ``2**k - 1`` interior points per axis. Coarsening keeps every
other point, prolongation is (bi/tri)linear interpolation, restriction its
transpose, and coarse operators are Galerkin products ``Pᵀ A P``. Smoothing is
damped Jacobi.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

__all__ = ["HierarchyError", "MultigridHierarchy", "interpolation_1d"]


class HierarchyError(ValueError):
    """Grid cannot be coarsened as requested."""


def interpolation_1d(m_coarse: int) -> sp.csr_array:
    """Linear interpolation from ``m_coarse`` to ``2*m_coarse + 1`` interior points."""
    m_fine = 2 * m_coarse + 1
    j = np.arange(m_coarse)
    rows = np.concatenate([2 * j, 2 * j + 1, 2 * j + 2])
    cols = np.concatenate([j, j, j])
    vals = np.concatenate([np.full(m_coarse, 0.5), np.ones(m_coarse), np.full(m_coarse, 0.5)])
    return sp.csr_array((vals, (rows, cols)), shape=(m_fine, m_coarse))


def _levels_available(m: int) -> int:
    k = int(round(np.log2(m + 1)))
    if m < 1 or 2**k - 1 != m:
        raise HierarchyError(f"grid size {m} is not of the form 2**k - 1")
    return k


@dataclass
class _Level:
    a: sp.csr_array
    inv_diag: np.ndarray
    p: sp.csr_array | None  # prolongation from the next coarser level


class MultigridHierarchy:
    """V-cycle hierarchy for an SPD matrix on a structured grid.

    Parameters
    ----------
    a : sparse SPD matrix
        Ordered lexicographically with the last axis fastest.
    shape : tuple of int
        Interior points per axis, each ``2**k - 1``.
    levels : int, optional
        Number of levels including the finest; default coarsens until some
        axis has a single point.
    smoother_weight : float
        Damped-Jacobi weight.
    sweeps : int
        Pre- and post-smoothing sweeps.
    """

    def __init__(self, a, shape, levels=None, smoother_weight=2.0 / 3.0, sweeps=2):
        shape = tuple(int(s) for s in shape)
        a = sp.csr_array(a)
        if int(np.prod(shape)) != a.shape[0]:
            raise HierarchyError(f"grid {shape} does not match matrix of size {a.shape[0]}")
        available = min(_levels_available(s) for s in shape)
        if levels is None:
            levels = available
        if not 1 <= levels <= available:
            raise HierarchyError(f"grid {shape} supports at most {available} levels, asked {levels}")
        self.shape = shape
        self.weight = float(smoother_weight)
        self.sweeps = int(sweeps)
        self.levels: list[_Level] = []
        for _ in range(levels - 1):
            coarse = tuple((s - 1) // 2 for s in shape)
            p = interpolation_1d(coarse[0])
            for mc in coarse[1:]:
                p = sp.kron(p, interpolation_1d(mc), format="csr")
            self.levels.append(_Level(a, 1.0 / a.diagonal(), sp.csr_array(p)))
            a = sp.csr_array(p.T @ a @ p)
            shape = coarse
        self.levels.append(_Level(a, 1.0 / a.diagonal(), None))
        self._coarse = sla.cho_factor(a.toarray())

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    def vcycle(self, b: np.ndarray, level: int = 0) -> np.ndarray:
        """One V-cycle for ``A x = b`` from a zero initial guess."""
        lv = self.levels[level]
        if lv.p is None:
            return sla.cho_solve(self._coarse, b)
        a, dinv, w = lv.a, lv.inv_diag, self.weight
        x = w * dinv * b
        for _ in range(self.sweeps - 1):
            x += w * dinv * (b - a @ x)
        r = b - a @ x
        x += lv.p @ self.vcycle(lv.p.T @ r, level + 1)
        for _ in range(self.sweeps):
            x += w * dinv * (b - a @ x)
        return x

    def solve(self, b: np.ndarray, cycles: int = 1) -> np.ndarray:
        """``cycles`` V-cycles from zero; a fixed symmetric linear map of ``b``."""
        x = self.vcycle(b)
        a = self.levels[0].a
        for _ in range(cycles - 1):
            x += self.vcycle(b - a @ x)
        return x
