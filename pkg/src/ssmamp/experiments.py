"""
experiments.py:  Seed sweeps, output files and the invariant battery.

Output layout under the output directory::

    run_s{seed}_{mode}.csv     per-iteration metrics
    run_s{seed}_{mode}.json    full report (damping vectors, audits)
    se_{mode}.csv              state-evolution prediction
    summary.json, summary.txt  check verdicts and final MSEs

Every file is a deterministic function of the config and the seeds, so two
invocations produce identical bytes.  Wall-clock timings go to stdout only.
"""
from __future__ import annotations

import json
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ssmamp.config import ExperimentConfig
from ssmamp.damping import optimal_damping, qp_oracle_damping
from ssmamp.engine import (RunReport, compare_runs, gaussianity_audit, idempotence_audit,
                           memory_uselessness_audit, orthogonality_audit, run_mamp)
from ssmamp.lbanded import expand, lbanded_inverse
from ssmamp.processors import MleSpec
from ssmamp.state_evolution import SETrajectory, run_se
from ssmamp.system import generate_system, spectral_moments

SE_MODE = {"plain": "plain", "ss_damped": "ss"}


@dataclass
class SeedResult:
    seed: int
    mode: str
    report: RunReport
    audits: dict = field(default_factory=dict)


@dataclass
class CheckResult:
    name: str
    passed: bool | None          # None when the check had nothing to look at
    value: float
    tol: float
    detail: str = ""

    @property
    def verdict(self) -> str:
        return {True: "PASS", False: "FAIL", None: "SKIP"}[self.passed]


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    runs: list
    se: dict
    checks: list
    notes: list

    @property
    def violations(self) -> list:
        return [c for c in self.checks if c.passed is False]


class RunFailure(RuntimeError):
    def __init__(self, message, diagnostics):
        super().__init__(message, diagnostics)
        self.diagnostics = diagnostics


# ---------------------------------------------------------------------------
# Single runs
# ---------------------------------------------------------------------------

def se_mle(config: ExperimentConfig) -> MleSpec:
    """The filter the runs use, built from the deterministic spectrum."""
    sigma = config.spec.singular_values()
    moments = spectral_moments(sigma, 2 + int(config.mle.partition(":")[2] or 0), N=config.spec.N)
    if config.mle == "matched_filter":
        return MleSpec.matched_filter(moments)
    return MleSpec.neumann(int(config.mle.split(":")[1]), moments, lam_max=float(sigma.max() ** 2))


def run_one(config: ExperimentConfig, seed: int, mode: str) -> SeedResult:
    inst = generate_system(seed, config.spec, config.prior, config.noise_var)
    mle = config.build_mle(inst)
    report, hist = run_mamp(inst, mle, config.prior, T=config.T, mode=mode, seed=seed,
                            tau=config.tau, lband_tol=config.tolerances["lbanded"])
    audits = {}
    checks = set(config.checks)
    if "orthogonality" in checks:
        audits["orthogonality"] = list(orthogonality_audit(hist, normalized=True))
        audits["orthogonality_raw"] = list(orthogonality_audit(hist, normalized=False))
    if "gaussianity" in checks:
        audits["gaussianity"] = list(gaussianity_audit(hist).max_abs())
    if "idempotence" in checks and mode == "ss_damped":
        audits["idempotence_gamma"] = list(idempotence_audit(hist, config.tau, "gamma").max_abs())
        audits["idempotence_phi"] = list(idempotence_audit(hist, config.tau, "phi").max_abs())
    if "memory" in checks and mode == "ss_damped" and hist.T > 1:
        audits["memory"] = float(max(memory_uselessness_audit(hist, config.prior, seed=seed)))
    return SeedResult(seed, mode, report, audits)


def _run_task(args):
    config, seed, mode = args
    try:
        return run_one(config, seed, mode)
    except Exception as exc:  # handed back to the parent with context
        diag = getattr(exc, "diagnostics", {})
        raise RunFailure(f"seed {seed} mode {mode}: {exc}",
                         {"seed": seed, "mode": mode, "error": repr(exc),
                          "traceback": traceback.format_exc(), "diagnostics": diag}) from None


def run_seeds(config: ExperimentConfig, workers: int = 1, log=None) -> list:
    tasks = [(config, s, m) for s in config.seeds for m in config.modes]
    if workers <= 1:
        out = []
        for task in tasks:
            t0 = time.perf_counter()
            out.append(_run_task(task))
            if log:
                log(f"seed {task[1]} {task[2]}: {out[-1].report.iterations} iterations, "
                    f"{time.perf_counter() - t0:.1f} s")
        return out
    with ProcessPoolExecutor(max_workers=workers) as pool:
        # map keeps task order, so the merge is in seed order
        return list(pool.map(_run_task, tasks))


def run_state_evolution(config: ExperimentConfig, modes=None) -> dict:
    mle = se_mle(config)
    modes = config.modes if modes is None else modes
    return {m: run_se(config.spec, config.prior, config.noise_var, config.T, SE_MODE[m],
                      mle=mle, tau=config.tau) for m in modes}


# ---------------------------------------------------------------------------
# Checks
# ---------------------------------------------------------------------------

def _pad(seq, n):
    seq = list(seq)
    return np.array(seq + [seq[-1]] * (n - len(seq)))


def max_relative_increase(values) -> float:
    """Largest (d_t - d_{t-1}) / d_{t-1}; zero for a nonincreasing sequence."""
    d = np.asarray(values, dtype=float)
    if d.size < 2:
        return 0.0
    inc = np.diff(d) / np.maximum(d[:-1], 1e-300)
    return float(max(inc.max(), 0.0))


def se_relative_deviation(runs: list, traj: SETrajectory, t_max: int):
    """Relative gap between the seed-mean empirical MSEs and the prediction.

    Returns ``(mean_dev, per_seed_max)`` over t <= t_max on both the MLE and
    the NLE side.
    """
    n = min(t_max, max(r.report.T_max for r in runs))
    pred_g = _pad(traj.v_gamma, n)[:n]
    pred_p = _pad(traj.v_phi[1:], n)[:n]
    emp_g = np.array([_pad(r.report.mse_gamma, n)[:n] for r in runs])
    emp_p = np.array([_pad(r.report.mse_phi, n)[:n] for r in runs])
    floor = 1e-12
    dev_mean = max(np.max(np.abs(emp_g.mean(0) - pred_g) / np.maximum(pred_g, floor)),
                   np.max(np.abs(emp_p.mean(0) - pred_p) / np.maximum(pred_p, floor)))
    dev_seed = max(np.max(np.abs(emp_g - pred_g) / np.maximum(pred_g, floor)),
                   np.max(np.abs(emp_p - pred_p) / np.maximum(pred_p, floor)))
    return float(dev_mean), float(dev_seed)


def lbanded_algebra_check(n_cases: int = 200, seed: int = 0):
    """Closed-form tridiagonal inverse against dense inversion."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_cases):
        t = int(rng.integers(1, 21))
        d = np.sort(rng.uniform(1e-3, 10.0, t))[::-1]
        dense = np.linalg.inv(expand(d))
        fast = lbanded_inverse(d).to_dense()
        band = np.abs(np.subtract.outer(np.arange(t), np.arange(t))) <= 1
        # entrywise on the band; the structural zeros against the largest entry
        rel = np.abs(fast - dense)[band] / np.abs(dense)[band]
        off = np.abs(dense[~band]).max(initial=0.0) / np.abs(dense).max()
        worst = max(worst, float(rel.max()), float(off))
    return worst


def damping_algebra_check(n_cases: int = 200, seed: int = 0):
    """Optimal damping vector against the KKT solve."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_cases):
        t = int(rng.integers(1, 13))
        Q, _ = np.linalg.qr(rng.standard_normal((t, t)))
        ev = np.exp(rng.uniform(0.0, np.log(1e6), t))
        ev /= ev.max()
        V = (Q * ev) @ Q.T
        z = optimal_damping(V)
        z_ref, _ = qp_oracle_damping(V)
        worst = max(worst, float(np.max(np.abs(z - z_ref)) / max(1.0, np.max(np.abs(z_ref)))))
    return worst


def evaluate_checks(config: ExperimentConfig, runs: list, se: dict) -> list:
    tol = config.tolerances
    ss = [r for r in runs if r.mode == "ss_damped"]
    out = []

    def add(name, value, limit, detail="", have=True):
        if not have:
            out.append(CheckResult(name, None, float("nan"), limit, "no ss_damped runs"))
        else:
            out.append(CheckResult(name, bool(value <= limit), float(value), float(limit), detail))

    for name in config.checks:
        if name == "lbanded":
            v = max((max(r.report.lband_dev_gamma + r.report.lband_dev_phi) for r in ss),
                    default=0.0)
            add(name, v, tol["lbanded"], "max relative off-band deviation", bool(ss))
        elif name == "monotone":
            v = max((max(max_relative_increase(r.report.mse_gamma),
                         max_relative_increase(r.report.mse_phi)) for r in ss), default=0.0)
            add(name, v, tol["monotone"], "max relative increase of a damped diagonal", bool(ss))
        elif name == "orthogonality":
            v = max((max(r.audits["orthogonality"]) for r in ss), default=0.0)
            raw = max((max(r.audits["orthogonality_raw"]) for r in ss), default=0.0)
            add(name, v, tol["orthogonality"], f"normalized; raw max {raw:.3g}", bool(ss))
        elif name == "gaussianity":
            sk = max((r.audits["gaussianity"][0] for r in ss), default=0.0)
            ku = max((r.audits["gaussianity"][1] for r in ss), default=0.0)
            cop = max((r.audits["gaussianity"][2] for r in ss), default=0.0)
            add(name, max(sk, ku), tol["gaussianity"],
                f"|skew| {sk:.3g}, |excess kurtosis| {ku:.3g}", bool(ss))
            add("copula", cop, tol["copula"], "normal-score correlation gap", bool(ss))
        elif name == "dominance":
            pairs = [(p, s) for p in runs for s in ss if p.mode == "plain" and p.seed == s.seed]
            worst = -np.inf
            for p, s in pairs:
                for key in ("mse_phi", "mse_gamma"):
                    rows = compare_runs(p.report, s.report, slack=0.0, key=key)
                    worst = max(worst, max(r.mse_ss - r.mse_plain for r in rows))
            if not pairs:
                out.append(CheckResult(name, None, float("nan"), tol["dominance"],
                                       "needs both modes"))
            else:
                add(name, worst, tol["dominance"], "max of mse_ss - mse_plain")
        elif name == "se_agreement":
            for mode in config.modes:
                group = [r for r in runs if r.mode == mode]
                mean_dev, seed_dev = se_relative_deviation(group, se[mode], int(tol["se_T"]))
                add(f"se_agreement[{mode}]", mean_dev, tol["se_rel"],
                    f"seed-mean; single-seed max {seed_dev:.3g}")
        elif name == "idempotence":
            zd = max((max(r.audits["idempotence_gamma"][0], r.audits["idempotence_phi"][0])
                      for r in ss), default=0.0)
            md = max((max(r.audits["idempotence_gamma"][1], r.audits["idempotence_phi"][1])
                      for r in ss), default=0.0)
            add("idempotence_zeta", zd, tol["idempotence_zeta"], "max |zeta - e_t|", bool(ss))
            add("idempotence_mse", md, tol["idempotence_mse"], "max MSE change", bool(ss))
        elif name == "memory":
            have = [r for r in ss if "memory" in r.audits]
            v = max((r.audits["memory"] for r in have), default=0.0)
            add(name, v, tol["memory"], "max MSE change from extra memory", bool(have))
        elif name == "lbanded_algebra":
            add(name, lbanded_algebra_check(), 1e-9, "entrywise relative vs dense inverse")
        elif name == "damping_algebra":
            add(name, damping_algebra_check(), 1e-8, "damping vector vs KKT solve")
    return out


def plain_divergence_notes(runs: list) -> list:
    """Plain runs whose MSE ends above its minimum (the usual failure of undamped memory)."""
    notes = []
    for r in runs:
        if r.mode != "plain":
            continue
        m = np.asarray(r.report.mse_phi)
        k = int(np.argmin(m))
        if k < m.size - 1 and m[-1] > m[k] * (1 + 1e-6):
            notes.append(f"plain seed {r.seed}: mse_phi rises after t={k + 1} "
                         f"({m[k]:.4g} -> {m[-1]:.4g})")
    return notes


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------

def _report_json(res: SeedResult) -> str:
    d = res.report.to_dict()
    d.pop("elapsed_s", None)          # keeps the file deterministic
    d["audits"] = res.audits
    return json.dumps(d, indent=1, default=float)


def summary_text(result: ExperimentResult) -> str:
    lines = [f"{'check':<24} {'verdict':<7} {'value':>11} {'tol':>11}  detail"]
    for c in result.checks:
        lines.append(f"{c.name:<24} {c.verdict:<7} {c.value:11.4g} {c.tol:11.4g}  {c.detail}")
    if result.runs:
        lines.append("")
        lines.append(f"{'seed':>5} {'mode':<10} {'iters':>5} {'mse_gamma':>11} {'mse_phi':>11} conv")
        for r in result.runs:
            rep = r.report
            lines.append(f"{r.seed:>5} {r.mode:<10} {rep.iterations:>5} {rep.mse_gamma[-1]:11.4e} "
                         f"{rep.mse_phi[-1]:11.4e} {'y' if rep.converged else 'n'}")
    for mode, traj in result.se.items():
        lines.append(f"SE {mode}: v_gamma* {traj.v_gamma[-1]:.4e}, v_phi* {traj.v_phi[-1]:.4e}, "
                     f"{traj.iterations} iterations")
    lines += result.notes
    return "\n".join(lines) + "\n"


def write_outputs(result: ExperimentResult, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for r in result.runs:
        stem = out / f"run_s{r.seed}_{r.mode}"
        stem.with_suffix(".csv").write_text(r.report.to_csv())
        stem.with_suffix(".json").write_text(_report_json(r))
    for mode, traj in result.se.items():
        (out / f"se_{mode}.csv").write_text(traj.to_csv())
    summary = {
        "config": result.config.as_dict(),
        "checks": [c.__dict__ for c in result.checks],
        "violations": [c.name for c in result.violations],
        "notes": result.notes,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=1, default=float))
    (out / "summary.txt").write_text(summary_text(result))


def write_diagnostics(out_dir, diagnostics: dict) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "diagnostics.json"
    path.write_text(json.dumps(diagnostics, indent=1, default=str))
    return path


def run_experiment(config: ExperimentConfig, out_dir=None, workers: int = 1,
                   log=None) -> ExperimentResult:
    """Run every seed and mode, predict with SE, check, and write the files.

    Raises :class:`RunFailure` on a numerical failure inside a run.
    """
    needs_runs = any(c not in ("lbanded_algebra", "damping_algebra") for c in config.checks)
    runs = run_seeds(config, workers, log) if needs_runs else []
    se = run_state_evolution(config) if needs_runs else {}
    checks = evaluate_checks(config, runs, se)
    result = ExperimentResult(config, runs, se, checks, plain_divergence_notes(runs))
    if out_dir is not None:
        write_outputs(result, out_dir)
    return result
