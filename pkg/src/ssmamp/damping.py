"""
damping.py:  Optimal damping of unbiased estimates of a common signal.

Given t estimates x_i = x + n_i with error covariance V, the unbiased
combination with least error variance uses weights

    zeta = V^{-1} 1 / (1^T V^{-1} 1),

and reaches variance 1 / (1^T V^{-1} 1).  When V is singular the previous
weights are extended with a zero, so the newest estimate is ignored.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from ssmamp.errors import DimensionMismatch, MissingPrev, SingularKKT

DEFAULT_TAU = 1e-10


@dataclass(frozen=True)
class CovarianceDiagnostics:
    invertible: bool
    sufficient_statistic: bool
    condition_estimate: float


def _square(V) -> np.ndarray:
    V = np.atleast_2d(np.asarray(V, dtype=float))
    if V.ndim != 2 or V.shape[0] != V.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {V.shape}")
    return V


def condition_estimate(V) -> float:
    """Eigenvalue ratio lambda_max / lambda_min of a symmetric matrix (inf if lambda_min <= 0)."""
    V = _square(V)
    lam = np.linalg.eigvalsh(0.5 * (V + V.T))
    if lam[-1] <= 0.0:
        return np.inf
    return float(lam[-1] / lam[0]) if lam[0] > 0.0 else np.inf


def is_invertible(V, tau: float = DEFAULT_TAU) -> bool:
    """Numerical invertibility: lambda_min > tau * lambda_max."""
    V = _square(V)
    lam = np.linalg.eigvalsh(0.5 * (V + V.T))
    return bool(lam[-1] > 0.0 and lam[0] > tau * lam[-1])


def _solve_ones(V) -> np.ndarray:
    # Factorization-based V u = 1; never forms V^{-1}.
    ones = np.ones(V.shape[0])
    try:
        return sla.solve(V, ones, assume_a="pos", check_finite=False)
    except (np.linalg.LinAlgError, sla.LinAlgError):
        return sla.solve(V, ones, assume_a="sym", check_finite=False)


def optimal_damping(V, prev=None, tau: float = DEFAULT_TAU) -> np.ndarray:
    """Variance-minimizing weights (summing to one) for estimates with covariance V.

    If V fails the invertibility test, returns ``[prev, 0]``.  At t = 1 the
    answer is always ``(1,)``.
    """
    V = _square(V)
    t = V.shape[0]
    if prev is not None:
        prev = np.asarray(prev, dtype=float).ravel()
        if prev.size != t - 1:
            raise DimensionMismatch(
                f"prev has length {prev.size}, expected {t - 1}")
    if t == 1:
        return np.ones(1)
    if not is_invertible(V, tau):
        if prev is None:
            raise MissingPrev("covariance is singular and no previous damping vector was given")
        return np.append(prev, 0.0)
    u = _solve_ones(0.5 * (V + V.T))
    return u / u.sum()


def damped_variance(V, zeta) -> float:
    """zeta^T V zeta."""
    V = _square(V)
    zeta = np.asarray(zeta, dtype=float).ravel()
    if zeta.size != V.shape[0]:
        raise DimensionMismatch(
            f"zeta has length {zeta.size}, V is {V.shape[0]}x{V.shape[0]}")
    return float(zeta @ V @ zeta)


def optimal_variance(V) -> float:
    """1 / (1^T V^{-1} 1) for an invertible V."""
    V = _square(V)
    return float(1.0 / _solve_ones(0.5 * (V + V.T)).sum())


def qp_oracle_damping(V, cond_max: float = 1e14):
    """Solve min 1/2 z^T V z subject to 1^T z = 1 through its KKT system.

    Independent of :func:`optimal_damping`: stationarity V z = c 1 together
    with the constraint gives the bordered system

        [ V   -1 ] [z]   [0]
        [ 1^T  0 ] [c] = [1].

    Returns ``(zeta, c)``; at the optimum c equals the minimum objective
    value zeta^T V zeta.
    """
    V = _square(V)
    t = V.shape[0]
    K = np.zeros((t + 1, t + 1))
    K[:t, :t] = V
    K[:t, t] = -1.0
    K[t, :t] = 1.0
    rhs = np.zeros(t + 1)
    rhs[t] = 1.0
    if np.linalg.cond(K) > cond_max:
        raise SingularKKT("KKT matrix is numerically singular")
    try:
        sol = np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularKKT(str(exc)) from exc
    return sol[:t], float(sol[t])


def sufficient_statistic_check(V, tol: float = 1e-10, tau: float = DEFAULT_TAU,
                               eps_floor: float = 1e-30) -> CovarianceDiagnostics:
    """Is the last estimate a sufficient statistic of all of them?

    For Gaussian errors this holds exactly when every entry of the last row
    and last column equals the bottom-right entry.  ``tol`` is relative to
    that entry.
    """
    V = _square(V)
    vtt = V[-1, -1]
    scale = max(abs(vtt), eps_floor)
    dev = max(np.max(np.abs(V[-1, :] - vtt)), np.max(np.abs(V[:, -1] - vtt))) / scale
    return CovarianceDiagnostics(
        invertible=is_invertible(V, tau),
        sufficient_statistic=bool(dev <= tol),
        condition_estimate=condition_estimate(V),
    )
