"""
lbanded.py:  Algebra for L-banded matrices.

A t x t matrix V is L-banded when V[i, j] = v[max(i, j)] for a diagonal
vector v.  Such a matrix is the covariance of a sequence of estimates in
which every new estimate is a sufficient statistic of all the earlier ones.
Its inverse is tridiagonal with entries given by the gaps between
consecutive diagonal values, so everything here is O(t).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ssmamp.errors import SingularLBanded

DEFAULT_GAP_RTOL = 1e-12
DEFAULT_EPS_FLOOR = 1e-30


@dataclass(frozen=True)
class LBandedMatrix:
    """L-banded matrix stored by its diagonal.

    Any real diagonal is accepted; use :meth:`covariance` when the matrix
    must be a valid covariance.
    """

    diag: np.ndarray

    def __post_init__(self):
        d = np.atleast_1d(np.asarray(self.diag, dtype=float))
        if d.ndim != 1 or d.size == 0:
            raise ValueError("diag must be a non-empty vector")
        object.__setattr__(self, "diag", d)

    @classmethod
    def covariance(cls, diag) -> "LBandedMatrix":
        """Construct and require a valid covariance: nonnegative, nonincreasing."""
        m = cls(diag)
        if not m.is_covariance():
            raise ValueError(
                "an L-banded covariance needs a nonnegative, nonincreasing diagonal")
        return m

    @property
    def t(self) -> int:
        return self.diag.size

    def is_covariance(self, atol: float = 0.0) -> bool:
        # PSD <=> v_t >= 0 and v_i - v_{i+1} >= 0, since
        # V = sum_k (v_k - v_{k+1}) 1_{<=k} 1_{<=k}^T with v_{t+1} = 0.
        d = self.diag
        return bool(d[-1] >= -atol and np.all(np.diff(d) <= atol))

    def expand(self) -> np.ndarray:
        return expand(self)


@dataclass(frozen=True)
class TridiagonalMatrix:
    """Symmetric tridiagonal matrix: main diagonal (t) and off diagonal (t-1)."""

    main: np.ndarray
    off: np.ndarray

    def __post_init__(self):
        main = np.atleast_1d(np.asarray(self.main, dtype=float))
        off = np.atleast_1d(np.asarray(self.off, dtype=float)) if np.size(self.off) else np.zeros(0)
        if off.size != main.size - 1:
            raise ValueError("off diagonal must have length t-1")
        object.__setattr__(self, "main", main)
        object.__setattr__(self, "off", off)

    def to_dense(self) -> np.ndarray:
        return np.diag(self.main) + np.diag(self.off, 1) + np.diag(self.off, -1)

    def matvec(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = self.main * x
        out[:-1] += self.off * x[1:]
        out[1:] += self.off * x[:-1]
        return out


def _as_lbanded(m) -> LBandedMatrix:
    return m if isinstance(m, LBandedMatrix) else LBandedMatrix(m)


def expand(m) -> np.ndarray:
    """Dense matrix with entry (i, j) equal to diag[max(i, j)]."""
    d = _as_lbanded(m).diag
    idx = np.arange(d.size)
    return d[np.maximum.outer(idx, idx)]


def gaps(m) -> np.ndarray:
    """delta_i = v_i - v_{i+1}, with v_{t+1} = 0 (so delta_t = v_t)."""
    d = _as_lbanded(m).diag
    return d - np.append(d[1:], 0.0)


def is_invertible(m, gap_rtol: float = DEFAULT_GAP_RTOL) -> bool:
    d = _as_lbanded(m).diag
    scale = np.max(np.abs(d))
    if scale == 0.0:
        return False
    # det V = prod(delta_i).  For a monotone diagonal this is the same as
    # pairwise distinctness of the entries plus v_t != 0.
    return bool(np.min(np.abs(gaps(d))) > gap_rtol * scale)


def lbanded_inverse(m, gap_rtol: float = DEFAULT_GAP_RTOL) -> TridiagonalMatrix:
    """Closed-form tridiagonal inverse of an invertible L-banded matrix.

    main[i] = 1/delta_{i-1} + 1/delta_i (with 1/delta_0 = 0),
    off[i]  = -1/delta_i.
    """
    m = _as_lbanded(m)
    if not is_invertible(m, gap_rtol):
        raise SingularLBanded(
            f"diagonal entries are not pairwise distinct (or v_t = 0): {m.diag}")
    inv_gap = 1.0 / gaps(m)
    main = inv_gap + np.concatenate(([0.0], inv_gap[:-1]))
    off = -inv_gap[:-1]
    return TridiagonalMatrix(main, off)


def lbanded_quadratic_sums(m, gap_rtol: float = DEFAULT_GAP_RTOL):
    """Return (1^T V^{-1}, 1^T V^{-1} 1) for an invertible L-banded V.

    Both follow from the tridiagonal inverse: the row sums telescope to
    (0, ..., 0, 1/v_t).
    """
    m = _as_lbanded(m)
    if not is_invertible(m, gap_rtol):
        raise SingularLBanded(
            f"diagonal entries are not pairwise distinct (or v_t = 0): {m.diag}")
    row_sums = np.zeros(m.t)
    row_sums[-1] = 1.0 / m.diag[-1]
    return row_sums, 1.0 / m.diag[-1]


def is_lbanded(V, tol: float, eps_floor: float = DEFAULT_EPS_FLOOR):
    """Check a dense symmetric matrix for L-band structure.

    Returns ``(flag, max_deviation)`` where the deviation of entry (i, j) is
    ``|V[i,j] - V[k,k]| / max(|V[k,k]|, eps_floor)`` with k = max(i, j).
    """
    V = np.asarray(V, dtype=float)
    if V.ndim != 2 or V.shape[0] != V.shape[1]:
        raise ValueError("V must be square")
    d = np.diag(V)
    idx = np.arange(d.size)
    band = d[np.maximum.outer(idx, idx)]
    dev = np.abs(V - band) / np.maximum(np.abs(band), eps_floor)
    max_dev = float(dev.max()) if dev.size else 0.0
    return max_dev <= tol, max_dev
