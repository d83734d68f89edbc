"""
engine.py:  Memory AMP runs with optional sufficient-statistic damping.

Every iteration applies the linear estimator to x_t, then the orthogonalized
Bernoulli-Gaussian denoiser.  In ``ss_damped`` mode each raw output is
replaced by the variance-optimal unbiased combination of all active raw
outputs so far, using oracle error covariances (the true x is known).  The
damped error covariances are then L-banded, so the newest estimate is a
sufficient statistic of the whole history.

A raw column whose arrival makes the active covariance singular is dropped
for good; the damped estimate and its variance then repeat the previous
ones.
"""
from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from ssmamp.damping import DEFAULT_TAU, is_invertible, optimal_damping
from ssmamp.errors import ConfigMismatch, NonFiniteIterate
from ssmamp.lbanded import is_lbanded
from ssmamp.processors import MleSpec, bg_eta, bg_posterior_mean, mle_apply, orthogonalize_nle
from ssmamp.system import SignalPrior, SystemInstance

MODES = ("plain", "ss_damped")
EXACT_FLOOR = 1e-20
CONV_RTOL = 1e-6
CONV_PATIENCE = 3
CSV_COLUMNS = ("t", "mse_phi", "mse_gamma", "v_gamma_t", "v_phi_t", "lband_dev_gamma",
               "lband_dev_phi", "orth_max", "zeta_last")


# ---------------------------------------------------------------------------
# Covariance bookkeeping
# ---------------------------------------------------------------------------

class ErrorGram:
    """Error columns e_i and their Gram matrix (1/N) <e_i, e_j>, grown one column at a time."""

    def __init__(self, N: int, capacity: int = 16):
        self.N = int(N)
        self._cols = np.empty((capacity, self.N))
        self._G = np.empty((capacity, capacity))
        self.size = 0

    def _grow(self):
        cap = 2 * self._cols.shape[0]
        cols = np.empty((cap, self.N))
        cols[:self.size] = self._cols[:self.size]
        G = np.empty((cap, cap))
        G[:self.size, :self.size] = self._G[:self.size, :self.size]
        self._cols, self._G = cols, G

    def append(self, e) -> int:
        if self.size == self._cols.shape[0]:
            self._grow()
        k = self.size
        self._cols[k] = e
        ip = self._cols[:k + 1] @ e / self.N
        self._G[k, :k + 1] = ip
        self._G[:k + 1, k] = ip
        self.size += 1
        return k

    @property
    def columns(self) -> np.ndarray:
        """(size, N) view of the stored errors."""
        return self._cols[:self.size]

    @property
    def matrix(self) -> np.ndarray:
        return self._G[:self.size, :self.size].copy()

    def sub(self, idx) -> np.ndarray:
        idx = np.asarray(idx, dtype=int)
        return self._G[np.ix_(idx, idx)]


@dataclass
class CovarianceTracker:
    """Oracle error Gram matrices: raw (pre-damping) and damped, both sides."""

    raw_gamma: ErrorGram
    raw_phi: ErrorGram
    gamma: ErrorGram
    phi: ErrorGram

    @classmethod
    def empty(cls, N: int, capacity: int = 16) -> "CovarianceTracker":
        return cls(*(ErrorGram(N, capacity) for _ in range(4)))

    @property
    def V_gamma(self) -> np.ndarray:
        return self.gamma.matrix

    @property
    def V_phi(self) -> np.ndarray:
        return self.phi.matrix


@dataclass
class DampStep:
    column: np.ndarray | None
    zeta: np.ndarray        # weights over all raw columns so far (zeros where excluded)
    variance: float
    excluded: bool


def ss_damp_step(gram, raw_columns, active_set: list, prev_zeta=None, prev_column=None,
                 prev_variance=None, tau: float = DEFAULT_TAU) -> DampStep:
    """Damp the newest raw column (the last one in ``gram``) against the active ones.

    ``gram`` is an :class:`ErrorGram` or a square covariance array over all
    raw columns.  ``raw_columns`` is a (k, N) array of raw estimates, or None
    when only variances are wanted (state evolution).  ``active_set`` is
    updated in place: the new index is appended unless its arrival makes
    the active covariance singular.
    """
    G = gram.matrix if isinstance(gram, ErrorGram) else np.asarray(gram, dtype=float)
    new = G.shape[0] - 1
    cand = list(active_set) + [new]
    V = G[np.ix_(cand, cand)]
    zeta = np.zeros(new + 1)
    if len(cand) == 1:
        zeta[new] = 1.0
        active_set.append(new)
        col = None if raw_columns is None else np.array(raw_columns[new], dtype=float)
        return DampStep(col, zeta, float(V[0, 0]), False)
    if not is_invertible(V, tau):
        if prev_zeta is None or prev_variance is None:
            raise ValueError("singular covariance needs the previous damping state")
        zeta[:new] = prev_zeta
        return DampStep(prev_column, zeta, float(prev_variance), True)
    zc = optimal_damping(V, tau=tau)
    zeta[cand] = zc
    active_set.append(new)
    # zeta^T V zeta = 1 / (1^T V^-1 1) at the optimum; the quadratic form
    # is the better conditioned of the two.
    var = float(zc @ V @ zc)
    col = None if raw_columns is None else zc @ np.asarray(raw_columns)[cand]
    return DampStep(col, zeta, var, False)


# ---------------------------------------------------------------------------
# Run records
# ---------------------------------------------------------------------------

@dataclass
class IterationHistory:
    """Estimates before and after damping, as (t, N) row stacks.

    X_raw / X hold x_1 = 0 followed by x_2..x_{T+1}; R_raw / R hold r_1..r_T.
    """

    x_true: np.ndarray
    X_raw: list = field(default_factory=list)
    R_raw: list = field(default_factory=list)
    X: list = field(default_factory=list)
    R: list = field(default_factory=list)
    active_gamma: list = field(default_factory=list)
    active_phi: list = field(default_factory=list)
    zeta_gamma: list = field(default_factory=list)
    zeta_phi: list = field(default_factory=list)

    @property
    def T(self) -> int:
        return len(self.R)

    @property
    def N(self) -> int:
        return self.x_true.size

    @property
    def F(self) -> np.ndarray:
        return np.asarray(self.X) - self.x_true

    @property
    def G(self) -> np.ndarray:
        return np.asarray(self.R) - self.x_true


@dataclass
class RunReport:
    mode: str
    seed: int
    N: int
    T_max: int
    meta: dict
    mse_gamma: list = field(default_factory=list)   # (1/N)||r_t - x||^2
    mse_phi: list = field(default_factory=list)     # (1/N)||x_{t+1} - x||^2
    mse_eta: list = field(default_factory=list)     # posterior-mean estimate at r_t
    v_gamma: list = field(default_factory=list)     # damped variance formula
    v_phi: list = field(default_factory=list)
    zeta_gamma: list = field(default_factory=list)
    zeta_phi: list = field(default_factory=list)
    excluded_gamma: list = field(default_factory=list)
    excluded_phi: list = field(default_factory=list)
    lband_dev_gamma: list = field(default_factory=list)
    lband_dev_phi: list = field(default_factory=list)
    orth: list = field(default_factory=list)        # (g.x, g.F, f.G) normalized maxima
    skewness: list = field(default_factory=list)
    excess_kurtosis: list = field(default_factory=list)
    converged: bool = False
    exact_recovery: bool = False
    elapsed: float = 0.0

    @property
    def iterations(self) -> int:
        return len(self.mse_gamma)

    @property
    def v_star(self):
        return (self.v_gamma[-1], self.v_phi[-1]) if self.v_gamma else (None, None)

    def rows(self):
        for i in range(self.iterations):
            yield {
                "t": i + 1,
                "mse_phi": self.mse_phi[i],
                "mse_gamma": self.mse_gamma[i],
                "v_gamma_t": self.v_gamma[i],
                "v_phi_t": self.v_phi[i],
                "lband_dev_gamma": self.lband_dev_gamma[i],
                "lband_dev_phi": self.lband_dev_phi[i],
                "orth_max": max(self.orth[i]),
                "zeta_last": self.zeta_phi[i][-1],
            }

    def to_csv(self, fh=None) -> str:
        buf = io.StringIO() if fh is None else fh
        w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
        w.writeheader()
        for row in self.rows():
            w.writerow({k: (repr(float(v)) if k != "t" else v) for k, v in row.items()})
        return buf.getvalue() if fh is None else ""

    def to_dict(self) -> dict:
        vg, vp = self.v_star
        return {
            "mode": self.mode, "seed": self.seed, "N": self.N, "T_max": self.T_max,
            "meta": self.meta,
            "iterations": self.iterations,
            "converged": self.converged,
            "exact_recovery": self.exact_recovery,
            "v_gamma_star": vg, "v_phi_star": vp,
            "elapsed_s": self.elapsed,
            "per_iteration": {
                "mse_gamma": self.mse_gamma, "mse_phi": self.mse_phi, "mse_eta": self.mse_eta,
                "v_gamma": self.v_gamma, "v_phi": self.v_phi,
                "zeta_gamma": [z.tolist() for z in self.zeta_gamma],
                "zeta_phi": [z.tolist() for z in self.zeta_phi],
                "excluded_gamma": self.excluded_gamma, "excluded_phi": self.excluded_phi,
                "lband_dev_gamma": self.lband_dev_gamma, "lband_dev_phi": self.lband_dev_phi,
                "orthogonality": self.orth,
                "skewness": self.skewness, "excess_kurtosis": self.excess_kurtosis,
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, default=float)


# ---------------------------------------------------------------------------
# The run
# ---------------------------------------------------------------------------

def _check_finite(v, stage, t, report):
    if not np.all(np.isfinite(v)):
        raise NonFiniteIterate(
            f"non-finite {stage} at t={t}",
            diagnostics={"stage": stage, "t": t, "mse_gamma": list(report.mse_gamma),
                         "mse_phi": list(report.mse_phi), "v_gamma": list(report.v_gamma),
                         "v_phi": list(report.v_phi)})


def _cosine(ip, na, nb):
    # errors at the exact-recovery floor are zero up to rounding
    if min(na, nb) ** 2 <= EXACT_FLOOR:
        return 0.0
    return abs(ip) / (na * nb)


def _iteration_orthogonality(tr: CovarianceTracker, x_norm2: float, g_x: float):
    """Normalized orthogonality violations for the newest g_t and f_{t+1}."""
    G, P = tr.gamma, tr.phi
    t = G.size
    vg = G.sub([t - 1])[0, 0]
    gx = _cosine(g_x, np.sqrt(vg), np.sqrt(x_norm2))
    # g_t against f_1..f_t; f_{t+1} against g_1..g_t
    gF = P.columns[:t] @ G.columns[t - 1] / G.N
    vf = np.diag(P.matrix)
    gF = max((_cosine(ip, np.sqrt(vg), np.sqrt(v)) for ip, v in zip(gF, vf[:t])), default=0.0)
    fG = G.columns[:t] @ P.columns[t] / G.N
    vgs = np.diag(G.matrix)
    fG = max((_cosine(ip, np.sqrt(vf[t]), np.sqrt(v)) for ip, v in zip(fG, vgs)), default=0.0)
    return gx, gF, fG


def run_mamp(inst: SystemInstance, mle: MleSpec, prior: SignalPrior | None = None, T: int = 30,
             mode: str = "ss_damped", seed: int | None = None, tau: float = DEFAULT_TAU,
             lband_tol: float | None = None, keep_history: bool = True):
    """Run T iterations from x_1 = 0 and return ``(RunReport, IterationHistory)``.

    ``seed`` is only recorded; the run itself is deterministic given the
    instance.  The run stops early when the damped NLE variance has moved by
    less than 1e-6 v_phi_1 for three iterations in a row, or when the linear
    estimate is exact.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if T < 1:
        raise ValueError("T must be >= 1")
    prior = inst.prior if prior is None else prior
    N, x = inst.N, inst.x_true
    damp = mode == "ss_damped"
    lband_tol = 5.0 / np.sqrt(N) if lband_tol is None else lband_tol
    report = RunReport(mode=mode, seed=inst.seed if seed is None else seed, N=N, T_max=T, meta={
        "M": inst.M, "delta": inst.spec.delta, "kappa": inst.spec.kappa,
        "profile": inst.spec.profile, "rho": prior.rho, "noise_var": inst.noise_var,
        "mle_coeffs": list(mle.coeffs), "tau": tau,
        "damping_covariance": "active_columns" if damp else "none",
    })
    hist = IterationHistory(x_true=x)
    tr = CovarianceTracker.empty(N, capacity=T + 2)
    x_norm2 = float(x @ x) / N

    x_t = np.zeros(N)
    hist.X_raw.append(x_t)
    hist.X.append(x_t)
    tr.raw_phi.append(-x)
    tr.phi.append(-x)
    hist.active_phi.append(0)
    zeta_phi = np.ones(1)
    v_phi_prev = v_phi_1 = x_norm2
    zeta_gamma, r_prev, v_gamma_prev = None, None, None
    raw_R = np.empty((T, N))
    raw_X = np.empty((T + 1, N))
    raw_X[0] = x_t
    streak = 0
    start = time.perf_counter()

    for t in range(1, T + 1):
        r_raw = mle_apply(mle, inst, x_t)
        _check_finite(r_raw, "mle", t, report)
        raw_R[t - 1] = r_raw
        tr.raw_gamma.append(r_raw - x)
        if damp:
            step = ss_damp_step(tr.raw_gamma, raw_R[:t], hist.active_gamma, zeta_gamma,
                                r_prev, v_gamma_prev, tau)
            r_t, zeta_gamma, v_gamma = step.column, step.zeta, step.variance
            report.excluded_gamma.append(step.excluded)
        else:
            r_t, zeta_gamma = r_raw, np.eye(t)[t - 1]
            v_gamma = float(tr.raw_gamma.sub([t - 1])[0, 0])
            hist.active_gamma.append(t - 1)
            report.excluded_gamma.append(False)
        tr.gamma.append(r_t - x)
        hist.R_raw.append(r_raw)
        hist.R.append(r_t)
        hist.zeta_gamma.append(zeta_gamma)
        mse_gamma = float(tr.gamma.sub([t - 1])[0, 0])
        g_x = float((r_t - x) @ x) / N
        r_prev, v_gamma_prev = r_t, v_gamma

        exact = mse_gamma <= EXACT_FLOOR
        if exact:
            # r_t is x to machine precision; the denoiser is undefined at v = 0
            x_raw = r_t.copy()
            mse_eta = mse_gamma
        else:
            out = bg_posterior_mean(r_t, mse_gamma, prior)
            x_raw = orthogonalize_nle(out, r_t)
            mse_eta = float(np.sum((out.estimate - x) ** 2)) / N
        _check_finite(x_raw, "nle", t, report)
        raw_X[t] = x_raw
        tr.raw_phi.append(x_raw - x)
        if damp and not exact:
            step = ss_damp_step(tr.raw_phi, raw_X[:t + 1], hist.active_phi, zeta_phi,
                                x_t, v_phi_prev, tau)
            x_next, zeta_phi, v_phi = step.column, step.zeta, step.variance
            report.excluded_phi.append(step.excluded)
        else:
            x_next, zeta_phi = x_raw, np.eye(t + 1)[t]
            v_phi = float(tr.raw_phi.sub([t])[0, 0])
            hist.active_phi.append(t)
            report.excluded_phi.append(False)
        tr.phi.append(x_next - x)
        hist.X_raw.append(x_raw)
        hist.X.append(x_next)
        hist.zeta_phi.append(zeta_phi)
        mse_phi = float(tr.phi.sub([t])[0, 0])

        g = r_t - x
        sd = np.sqrt(mse_gamma)
        report.mse_gamma.append(mse_gamma)
        report.mse_phi.append(mse_phi)
        report.mse_eta.append(mse_eta)
        report.v_gamma.append(v_gamma)
        report.v_phi.append(v_phi)
        report.zeta_gamma.append(zeta_gamma)
        report.zeta_phi.append(zeta_phi)
        report.lband_dev_gamma.append(is_lbanded(tr.gamma.matrix, lband_tol)[1])
        report.lband_dev_phi.append(is_lbanded(tr.phi.matrix, lband_tol)[1])
        report.orth.append(_iteration_orthogonality(tr, x_norm2, g_x))
        report.skewness.append(float(stats.skew(g / sd)) if sd > 0 else 0.0)
        report.excess_kurtosis.append(float(stats.kurtosis(g / sd)) if sd > 0 else 0.0)

        if exact:
            report.converged = report.exact_recovery = True
            break
        streak = streak + 1 if abs(v_phi - v_phi_prev) < CONV_RTOL * v_phi_1 else 0
        v_phi_prev, x_t = v_phi, x_next
        if streak >= CONV_PATIENCE:
            report.converged = True
            break

    report.elapsed = time.perf_counter() - start
    if not keep_history:
        hist = None
    else:
        hist.tracker = tr
    return report, hist


# ---------------------------------------------------------------------------
# Audits
# ---------------------------------------------------------------------------

def orthogonality_audit(history: IterationHistory, normalized: bool = True):
    """Maxima over t of |<g_t, x>|, |<g_t, F_t>| and |<f_{t+1}, G_t>| (all / N).

    With ``normalized`` each inner product is divided by the product of the
    two vector norms (over N), which removes the error scale.
    """
    if history.T == 0:
        raise ValueError("empty history")
    N, x = history.N, history.x_true
    G, F = history.G, history.F
    ng = np.sqrt(np.sum(G**2, axis=1) / N)
    nf = np.sqrt(np.sum(F**2, axis=1) / N)
    nx = np.sqrt(x @ x / N)
    GX = G @ x / N
    GF = G @ F.T / N
    if normalized:
        ng = np.where(ng**2 <= EXACT_FLOOR, np.inf, ng)
        nf = np.where(nf**2 <= EXACT_FLOOR, np.inf, nf)
        GX = GX / (ng * nx)
        GF = GF / np.outer(ng, nf)
    T = history.T
    lower = np.tril(np.ones((T, T + 1), dtype=bool))      # <g_t, f_i>, i <= t
    upper = np.triu(np.ones((T, T + 1), dtype=bool), 1)   # <g_i, f_{t+1}>, i <= t
    return (float(np.max(np.abs(GX))), float(np.max(np.abs(GF[lower]))),
            float(np.max(np.abs(GF[upper]))))


def _normal_scores(v):
    n = v.size
    return stats.norm.ppf((stats.rankdata(v) - 0.5) / n)


@dataclass
class GaussianityReport:
    skewness: np.ndarray
    excess_kurtosis: np.ndarray
    copula_dev: np.ndarray      # max over t' < t of |rho_emp - v_tt' / sqrt(v_t v_t')|

    def max_abs(self):
        return (float(np.max(np.abs(self.skewness))), float(np.max(np.abs(self.excess_kurtosis))),
                float(np.max(self.copula_dev)))


def gaussianity_audit(history: IterationHistory) -> GaussianityReport:
    """Moment and copula checks on the post-damping MLE errors g_t."""
    if history.T == 0:
        raise ValueError("empty history")
    G = history.G
    N = history.N
    V = G @ G.T / N
    sd = np.sqrt(np.maximum(np.diag(V), 1e-300))
    Z = G / sd[:, None]
    sk = stats.skew(Z, axis=1)
    ku = stats.kurtosis(Z, axis=1)
    S = np.array([_normal_scores(z) for z in Z])
    S /= np.sqrt(np.mean(S**2, axis=1))[:, None]
    emp = S @ S.T / N
    target = V / np.outer(sd, sd)
    dev = np.abs(emp - target)
    cop = np.array([dev[t, :t + 1].max() for t in range(history.T)])
    return GaussianityReport(np.asarray(sk), np.asarray(ku), cop)


@dataclass
class IdempotenceReport:
    zeta_dev: list       # per t: max |zeta - e_t| after merging duplicate columns
    mse_change: list     # per t: |mse(re-damped) - mse(r_t)|
    merged: int = 0      # columns merged into their predecessor

    def max_abs(self):
        return float(max(self.zeta_dev)), float(max(self.mse_change))


def idempotence_audit(history: IterationHistory, tau: float = DEFAULT_TAU,
                      side: str = "gamma") -> IdempotenceReport:
    """Re-damp the already damped columns and compare with doing nothing.

    Columns that repeat their predecessor, or that the re-damping itself
    excludes as numerically dependent on it (equal variances to within
    ``tau``), are merged before comparing ζ with e_t.
    """
    cols = np.asarray(history.R if side == "gamma" else history.X[1:])
    x = history.x_true
    N = x.size
    gram = ErrorGram(N, capacity=len(cols) + 1)
    active, zeta, prev_col, prev_var = [], None, None, None
    zdev, mdev = [], []
    group = []
    n_merged = 0
    for t, c in enumerate(cols):
        gram.append(c - x)
        step = ss_damp_step(gram, cols[:t + 1], active, zeta, prev_col, prev_var, tau)
        zeta, prev_col, prev_var = step.zeta, step.column, step.variance
        same = t > 0 and (step.excluded or np.array_equal(c, cols[t - 1]))
        n_merged += same
        group.append(group[-1] if same else t)
        merged = np.zeros(t + 1)
        np.add.at(merged, group, zeta)
        merged[group[t]] -= 1.0
        zdev.append(float(np.max(np.abs(merged))))
        mse_re = float(np.sum((step.column - x) ** 2)) / N
        mse_0 = float(np.sum((c - x) ** 2)) / N
        mdev.append(abs(mse_re - mse_0))
    return IdempotenceReport(zdev, mdev, int(n_merged))


def memory_uselessness_audit(history: IterationHistory, prior: SignalPrior, n_combos: int = 5,
                             seed: int = 0) -> list:
    """Largest MSE change from feeding the denoiser an extra combination of earlier r_i.

    For each t >= 2 and each of ``n_combos`` random unbiased combinations
    r_c of r_1..r_{t-1}, the Bayes estimate from the pair (r_t, r_c) is the
    posterior mean at r_eff = 1^T C^-1 z / 1^T C^-1 1 with noise variance
    1 / 1^T C^-1 1 (C the 2x2 oracle error covariance).  Returns per-t maxima
    of |mse(pair) - mse(r_t alone)|.
    """
    rng = np.random.default_rng(seed)
    R = np.asarray(history.R)
    x = history.x_true
    N = x.size
    out = []
    for t in range(1, R.shape[0]):
        r_t = R[t]
        v_t = float(np.sum((r_t - x) ** 2)) / N
        if v_t <= EXACT_FLOOR:
            out.append(0.0)
            continue
        base = float(np.sum((bg_eta(r_t, v_t, prior, derivative=False)[0] - x) ** 2)) / N
        worst = 0.0
        for _ in range(n_combos):
            w = rng.standard_normal(t)
            w /= w.sum()
            r_c = w @ R[:t]
            Z = np.stack([r_t, r_c])
            E = Z - x
            C = E @ E.T / N
            if not is_invertible(C):
                continue
            u = np.linalg.solve(C, np.ones(2))
            v_eff = 1.0 / u.sum()
            r_eff = (u @ Z) * v_eff
            mse = float(np.sum((bg_eta(r_eff, v_eff, prior, derivative=False)[0] - x) ** 2)) / N
            worst = max(worst, abs(mse - base))
        out.append(worst)
    return out


@dataclass
class DominanceRow:
    t: int
    mse_plain: float
    mse_ss: float
    ok: bool


def compare_runs(report_plain: RunReport, report_ss: RunReport, slack: float | None = None,
                 key: str = "mse_phi") -> list:
    """Per-iteration check mse_ss <= mse_plain + slack (default 3/sqrt(N)).

    A run that stopped early is padded with its last value.
    """
    a, b = report_plain, report_ss
    for attr in ("seed", "N", "T_max"):
        if getattr(a, attr) != getattr(b, attr):
            raise ConfigMismatch(f"reports differ in {attr}: {getattr(a, attr)} vs {getattr(b, attr)}")
    for k in ("mle_coeffs", "kappa", "delta", "rho", "noise_var"):
        if a.meta.get(k) != b.meta.get(k):
            raise ConfigMismatch(f"reports differ in {k}")
    slack = 3.0 / np.sqrt(a.N) if slack is None else slack
    pa, pb = list(getattr(a, key)), list(getattr(b, key))
    n = max(len(pa), len(pb))
    pa += [pa[-1]] * (n - len(pa))
    pb += [pb[-1]] * (n - len(pb))
    return [DominanceRow(t + 1, pa[t], pb[t], pb[t] <= pa[t] + slack) for t in range(n)]


def dominance_table(rows) -> str:
    lines = [f"{'t':>3} {'plain':>12} {'ss':>12}  ok"]
    lines += [f"{r.t:>3} {r.mse_plain:12.4e} {r.mse_ss:12.4e}  {'y' if r.ok else 'n'}" for r in rows]
    return "\n".join(lines)
