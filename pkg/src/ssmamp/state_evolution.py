"""
state_evolution.py:  Large-system predictions of the error variances.

The linear side is closed form: every input covariance entry v maps to
a v + b (see :func:`ssmamp.processors.mle_se_coefficients`).  The denoiser
side is evaluated by Gauss-Hermite quadrature, in 2-D for cross terms,
assuming the denoiser inputs carry jointly Gaussian noise.

In ``ss`` mode the damping is applied to the predicted raw covariances with
the same active-set rule as the engine, so the damped covariances are
L-banded by construction and only their diagonals need storing.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from ssmamp.damping import DEFAULT_TAU
from ssmamp.engine import CONV_PATIENCE, CONV_RTOL, CSV_COLUMNS, ss_damp_step
from ssmamp.lbanded import expand
from ssmamp.processors import GH_NODES, MleSpec, mle_error_moments, pair_error_moment
from ssmamp.system import SignalPrior, SpectrumSpec, spectral_moments

SE_MODES = ("plain", "ss")
EXACT_FLOOR = 1e-20


@dataclass
class SETrajectory:
    """v_gamma[t-1] = v^gamma_t (t = 1..T); v_phi[t-1] = v^phi_t (t = 1..T+1), v_phi[0] = 1."""

    mode: str
    v_gamma: np.ndarray
    v_phi: np.ndarray
    cov_gamma: np.ndarray | None = None
    cov_phi: np.ndarray | None = None
    zeta_phi: list = field(default_factory=list)
    excluded_gamma: list = field(default_factory=list)
    excluded_phi: list = field(default_factory=list)
    converged: bool = False
    iterations: int = 0
    max_clamp: float = 0.0      # largest amount the monotone clamp removed (ss mode)

    def rows(self):
        for i in range(self.iterations):
            yield {
                "t": i + 1,
                "mse_phi": float(self.v_phi[i + 1]),
                "mse_gamma": float(self.v_gamma[i]),
                "v_gamma_t": float(self.v_gamma[i]),
                "v_phi_t": float(self.v_phi[i + 1]),
                # the predicted covariances carry no sampling error
                "lband_dev_gamma": 0.0 if self.mode == "ss" else float("nan"),
                "lband_dev_phi": 0.0 if self.mode == "ss" else float("nan"),
                "orth_max": 0.0,
                "zeta_last": float(self.zeta_phi[i][-1]) if self.zeta_phi else 1.0,
                "source": "se",
            }

    def to_csv(self, fh=None) -> str:
        buf = io.StringIO() if fh is None else fh
        w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS + ("source",), lineterminator="\n")
        w.writeheader()
        for row in self.rows():
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
        return buf.getvalue() if fh is None else ""


def _eigs(spec_or_eigs):
    if isinstance(spec_or_eigs, SpectrumSpec):
        lam = np.zeros(spec_or_eigs.N)
        s = spec_or_eigs.singular_values()
        lam[:s.size] = s**2
        return lam
    return np.asarray(spec_or_eigs, dtype=float)


def se_gamma_step(mle: MleSpec, spec_or_eigs, v_phi_block, noise_var: float):
    """Predicted MLE error (cross-)covariances for input error (cross-)covariances."""
    return mle_error_moments(mle, _eigs(spec_or_eigs), v_phi_block, noise_var)


def se_phi_step(v_gamma_block, prior: SignalPrior, orthogonalize: bool = True,
                n_gh: int = GH_NODES):
    """Predicted NLE error covariance for a PSD input noise covariance.

    Row/column ``None`` entries are not used here; the all-zero first
    estimate is handled by :func:`run_se`.
    """
    C = np.atleast_2d(np.asarray(v_gamma_block, dtype=float))
    k = C.shape[0]
    out = np.empty((k, k))
    for i in range(k):
        for j in range(i + 1):
            va, vb = C[i, i], C[j, j]
            out[i, j] = out[j, i] = pair_error_moment(va, vb, C[i, j], prior, orthogonalize, n_gh)
    return out if out.size > 1 else float(out[0, 0])


def _converged_step(hist, streak, v1):
    if len(hist) < 2:
        return streak
    return streak + 1 if abs(hist[-1] - hist[-2]) < CONV_RTOL * v1 else 0


def run_se(spec_or_eigs, prior: SignalPrior, noise_var: float, T: int, mode: str = "ss",
           mle: MleSpec | None = None, full_cov: bool = False, tau: float = DEFAULT_TAU,
           n_gh: int = GH_NODES) -> SETrajectory:
    """Iterate the state evolution from v_phi_1 = 1 (the estimate x_1 = 0).

    ``mode="plain"`` tracks the diagonal recursion (and, with ``full_cov``,
    all cross terms).  ``mode="ss"`` builds the predicted raw covariances,
    damps them, and keeps the damped diagonals.  Both stop early under the
    engine's convergence rule.
    """
    if mode not in SE_MODES:
        raise ValueError(f"mode must be one of {SE_MODES}, got {mode!r}")
    if T < 1:
        raise ValueError("T must be >= 1")
    lam = _eigs(spec_or_eigs)
    if mle is None:
        mle = MleSpec.matched_filter(spectral_moments(np.sqrt(lam[lam > 0]), 2, N=lam.size))
    if mode == "plain":
        return _run_plain(mle, lam, prior, noise_var, T, full_cov, n_gh)
    return _run_ss(mle, lam, prior, noise_var, T, tau, n_gh)


def _run_plain(mle, lam, prior, noise_var, T, full_cov, n_gh):
    vg, vp = [], [1.0]
    Cg = np.zeros((T, T))
    Cp = np.zeros((T + 1, T + 1))
    Cp[0, 0] = 1.0
    streak, it, converged = 0, 0, False
    for t in range(1, T + 1):
        it = t
        row = np.asarray(se_gamma_step(mle, lam, Cp[t - 1, :t], noise_var)) if full_cov else None
        v = float(se_gamma_step(mle, lam, vp[-1], noise_var))
        vg.append(v)
        if full_cov:
            Cg[t - 1, :t] = Cg[:t, t - 1] = row
        if v <= EXACT_FLOOR:
            vp.append(0.0)
            converged = True
            break
        vp.append(pair_error_moment(v, v, v, prior, True, n_gh))
        Cp[t, t] = vp[-1]
        if full_cov:
            Cp[t, 0] = Cp[0, t] = pair_error_moment(None, v, None, prior, True, n_gh)
            for j in range(1, t):
                Cp[t, j] = Cp[j, t] = pair_error_moment(v, vg[j - 1], Cg[t - 1, j - 1],
                                                        prior, True, n_gh)
        streak = _converged_step(vp, streak, vp[0])
        if streak >= CONV_PATIENCE:
            converged = True
            break
    traj = SETrajectory("plain", np.array(vg), np.array(vp), converged=converged, iterations=it)
    if full_cov:
        traj.cov_gamma = Cg[:it, :it]
        traj.cov_phi = Cp[:it + 1, :it + 1]
    return traj


def _run_ss(mle, lam, prior, noise_var, T, tau, n_gh):
    a_b = se_gamma_step(mle, lam, np.array([0.0, 1.0]), noise_var)
    b, a = float(a_b[0]), float(a_b[1] - a_b[0])
    vg, vp = [], [1.0]
    Kg = np.zeros((T, T))               # raw MLE-output error covariance
    Kp = np.zeros((T + 1, T + 1))       # raw NLE-output error covariance; index 0 is x_1 = 0
    Kp[0, 0] = 1.0
    act_g, act_p = [], [0]
    zg, zp = None, np.ones(1)
    traj = SETrajectory("ss", np.zeros(0), np.zeros(0))
    streak, it, converged = 0, 0, False
    for t in range(1, T + 1):
        it = t
        # raw r_i = MLE(x_i) with L-banded damped inputs: cov = a v_phi[max(i,j)] + b
        Kg[t - 1, :t] = Kg[:t, t - 1] = a * vp[t - 1] + b
        step = ss_damp_step(Kg[:t, :t], None, act_g, zg, None, vg[-1] if vg else None, tau)
        zg = step.zeta
        v = min(step.variance, vg[-1]) if vg else step.variance
        traj.max_clamp = max(traj.max_clamp, step.variance - v)
        vg.append(v)
        traj.excluded_gamma.append(step.excluded)
        if v <= EXACT_FLOOR:
            vp.append(0.0)
            traj.zeta_phi.append(np.eye(t + 1)[t])
            converged = True
            break
        # raw x_{t+1} = phi(r_t); the damped r's have L-banded noise, cov(g_t, g_j) = v_t
        Kp[t, 0] = Kp[0, t] = pair_error_moment(None, v, None, prior, True, n_gh)
        for j in range(1, t):
            Kp[t, j] = Kp[j, t] = pair_error_moment(v, vg[j - 1], v, prior, True, n_gh)
        Kp[t, t] = pair_error_moment(v, v, v, prior, True, n_gh)
        step = ss_damp_step(Kp[:t + 1, :t + 1], None, act_p, zp, None, vp[-1], tau)
        zp = step.zeta
        # the previous damped estimate is feasible, so the optimum cannot exceed it
        vp.append(min(step.variance, vp[-1]))
        traj.max_clamp = max(traj.max_clamp, step.variance - vp[-1])
        traj.zeta_phi.append(zp)
        traj.excluded_phi.append(step.excluded)
        streak = _converged_step(vp, streak, vp[0])
        if streak >= CONV_PATIENCE:
            converged = True
            break
    traj.v_gamma, traj.v_phi = np.array(vg), np.array(vp)
    traj.cov_gamma, traj.cov_phi = expand(traj.v_gamma), expand(traj.v_phi)
    traj.converged, traj.iterations = converged, it
    return traj


@dataclass(frozen=True)
class FixedPoint:
    v_gamma_star: float
    v_phi_star: float
    iterations_to_converge: int | None
    converged: bool


def fixed_point(traj: SETrajectory) -> FixedPoint:
    """Limiting variances and the hit time.

    The hit time is the first iteration whose output v_phi stays within the
    convergence tolerance of the final value; None when T ran out first.
    """
    vp = np.asarray(traj.v_phi)
    hit = None
    if traj.converged:
        close = np.abs(vp[1:] - vp[-1]) < CONV_RTOL * vp[0]
        # last index that is not close, plus one
        far = np.flatnonzero(~close)
        hit = int(far[-1] + 2) if far.size else 1
    return FixedPoint(float(traj.v_gamma[-1]), float(vp[-1]), hit, traj.converged)
