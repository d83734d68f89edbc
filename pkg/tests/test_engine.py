import csv
import io
import json

import numpy as np
import pytest

from ssmamp.engine import (
    CSV_COLUMNS,
    ErrorGram,
    compare_runs,
    dominance_table,
    gaussianity_audit,
    idempotence_audit,
    memory_uselessness_audit,
    orthogonality_audit,
    run_mamp,
    ss_damp_step,
)
from ssmamp.errors import ConfigMismatch, NonFiniteIterate
from ssmamp.lbanded import is_lbanded
from ssmamp.processors import MleSpec
from ssmamp.system import SignalPrior, SpectrumSpec, generate_system, noise_var_from_snr


def _inst(seed=0, N=512, kappa=10.0, snr=30.0, delta=0.5, rho=0.1, profile="geometric"):
    spec = SpectrumSpec(N, delta, kappa, profile)
    return generate_system(seed, spec, SignalPrior(rho), noise_var_from_snr(snr, delta))


@pytest.fixture(scope="module")
def ss_run():
    inst = _inst(1, N=1024, kappa=10.0)
    rep, hist = run_mamp(inst, MleSpec.matched_filter(inst), T=15, mode="ss_damped")
    return inst, rep, hist


@pytest.fixture(scope="module")
def plain_run():
    inst = _inst(1, N=1024, kappa=10.0)
    return run_mamp(inst, MleSpec.matched_filter(inst), T=15, mode="plain")


class TestErrorGram:
    def test_matches_dense(self):
        rng = np.random.default_rng(0)
        E = rng.standard_normal((20, 50))
        g = ErrorGram(50, capacity=2)
        for e in E:
            g.append(e)
        np.testing.assert_allclose(g.matrix, E @ E.T / 50, atol=1e-12)
        np.testing.assert_allclose(g.sub([3, 7]), (E[[3, 7]] @ E[[3, 7]].T) / 50, atol=1e-12)


class TestSsDampStep:
    def test_sufficient_pair(self):
        step = ss_damp_step(np.array([[2.0, 1.0], [1.0, 1.0]]), None, [0], np.ones(1), None, 2.0)
        np.testing.assert_allclose(step.zeta, [0.0, 1.0], atol=1e-12)
        assert step.variance == pytest.approx(1.0)
        assert not step.excluded

    def test_singular_keeps_previous(self):
        G = np.array([[2.0, 1.0, 1.0], [1.0, 1.0, 1.0], [1.0, 1.0, 1.0]])
        active = [0, 1]
        prev_col = np.array([5.0, 6.0])
        step = ss_damp_step(G, np.zeros((3, 2)), active, np.array([0.0, 1.0]), prev_col, 1.0)
        np.testing.assert_array_equal(step.zeta, [0.0, 1.0, 0.0])
        assert step.variance == 1.0
        assert step.excluded
        assert step.column is prev_col
        assert active == [0, 1]

    def test_first_column(self):
        active = []
        step = ss_damp_step(np.array([[0.7]]), np.array([[1.0, 2.0]]), active)
        np.testing.assert_array_equal(step.zeta, [1.0])
        assert step.variance == 0.7
        np.testing.assert_array_equal(step.column, [1.0, 2.0])
        assert active == [0]

    def test_excluded_column_stays_out(self):
        G = np.array([[2.0, 1.0, 1.0, 0.5], [1.0, 1.0, 1.0, 0.5],
                      [1.0, 1.0, 1.0, 0.5], [0.5, 0.5, 0.5, 0.5]])
        active = [0, 1]
        s3 = ss_damp_step(G[:3, :3], None, active, np.array([0.0, 1.0]), None, 1.0)
        s4 = ss_damp_step(G, None, active, s3.zeta, None, s3.variance)
        assert active == [0, 1, 3]
        assert s4.zeta[2] == 0.0
        assert s4.zeta.sum() == pytest.approx(1.0)


class TestRunMamp:
    def test_single_iteration_no_damping(self):
        inst = _inst(2)
        rep, hist = run_mamp(inst, MleSpec.matched_filter(inst), T=1, mode="ss_damped")
        np.testing.assert_array_equal(rep.zeta_gamma[0], [1.0])
        np.testing.assert_array_equal(hist.R[0], hist.R_raw[0])
        assert rep.iterations == 1

    def test_unitary_noiseless_exact(self):
        inst = _inst(3, N=256, kappa=1.0, snr=np.inf, delta=1.0, profile="flat")
        rep, hist = run_mamp(inst, MleSpec.matched_filter(inst), T=10, mode="ss_damped")
        assert rep.mse_gamma[0] < 1e-20
        assert rep.converged and rep.exact_recovery
        assert rep.iterations == 1
        assert max(orthogonality_audit(hist)) < 1e-8

    def test_plain_never_damps(self, plain_run):
        rep, hist = plain_run
        for t, z in enumerate(rep.zeta_gamma):
            np.testing.assert_array_equal(z, np.eye(t + 1)[t])
        np.testing.assert_array_equal(np.asarray(hist.X), np.asarray(hist.X_raw))

    def test_lbanded_and_monotone(self, ss_run):
        _, rep, hist = ss_run
        N = hist.N
        tr = hist.tracker
        assert is_lbanded(tr.V_gamma, 1e-9)[0]
        assert is_lbanded(tr.V_phi, 1e-9)[0]
        assert np.all(np.diff(rep.v_gamma) <= 0)
        assert np.all(np.diff(rep.v_phi) <= 0)
        assert max(rep.lband_dev_gamma + rep.lband_dev_phi) < 5 / np.sqrt(N)

    def test_variance_formula(self, ss_run):
        _, rep, hist = ss_run
        slack = 3 / np.sqrt(hist.N)
        np.testing.assert_allclose(rep.v_gamma, rep.mse_gamma, atol=slack)
        np.testing.assert_allclose(rep.v_phi, rep.mse_phi, atol=slack)
        # exact up to rounding with oracle covariances
        np.testing.assert_allclose(rep.v_gamma, rep.mse_gamma, rtol=1e-9)

    def test_zeta_sums_to_one(self, ss_run):
        _, rep, _ = ss_run
        for z in rep.zeta_gamma + rep.zeta_phi:
            assert z.sum() == pytest.approx(1.0, abs=1e-9)

    def test_history_shapes(self, ss_run):
        _, rep, hist = ss_run
        T = rep.iterations
        assert hist.T == T
        assert len(hist.X) == len(hist.X_raw) == T + 1
        assert hist.F.shape == (T + 1, hist.N)
        np.testing.assert_array_equal(hist.X[0], 0.0)
        assert len(set(hist.active_gamma)) == len(hist.active_gamma)

    def test_ss_not_worse(self, ss_run, plain_run):
        rows = compare_runs(plain_run[0], ss_run[1])
        assert all(r.ok for r in rows)

    def test_deterministic(self):
        inst = _inst(4)
        mle = MleSpec.matched_filter(inst)
        a, _ = run_mamp(inst, mle, T=6)
        b, _ = run_mamp(inst, mle, T=6)
        assert a.to_csv() == b.to_csv()

    def test_non_finite_aborts(self):
        inst = _inst(5, N=128)
        inst.y[0] = np.nan
        inst._Uty = None
        with pytest.raises(NonFiniteIterate) as err:
            run_mamp(inst, MleSpec.matched_filter(inst), T=3)
        assert err.value.diagnostics["stage"] == "mle"

    def test_bad_arguments(self):
        inst = _inst(5, N=64)
        with pytest.raises(ValueError):
            run_mamp(inst, MleSpec.matched_filter(inst), T=0)
        with pytest.raises(ValueError):
            run_mamp(inst, MleSpec.matched_filter(inst), T=3, mode="damped")


class TestAudits:
    def test_orthogonality(self):
        inst = _inst(1, N=1024, kappa=1.0)
        rep, hist = run_mamp(inst, MleSpec.matched_filter(inst), T=15, mode="ss_damped")
        triple = orthogonality_audit(hist)
        assert max(triple) < 5 / np.sqrt(hist.N)
        # the per-iteration figures cover the same pairs
        assert max(triple) == pytest.approx(max(max(o) for o in rep.orth), rel=1e-9)

    def test_raw_inner_products(self, ss_run):
        _, _, hist = ss_run
        G, F, x, N = hist.G, hist.F, hist.x_true, hist.N
        gx, gF, fG = orthogonality_audit(hist, normalized=False)
        assert gx == pytest.approx(np.max(np.abs(G @ x)) / N)
        assert fG == pytest.approx(max(abs(F[t + 1] @ G[i]) / N
                                       for t in range(hist.T) for i in range(t + 1)))

    def test_first_iteration_signal_term(self, ss_run):
        # f_1 = -x, so <g_1, f_1> is -<g_1, x>
        _, _, hist = ss_run
        G, F, x = hist.G, hist.F, hist.x_true
        assert G[0] @ F[0] == pytest.approx(-(G[0] @ x))

    def test_gaussianity(self, ss_run):
        _, _, hist = ss_run
        rep = gaussianity_audit(hist)
        bound = 15 / np.sqrt(hist.N)
        sk, ku, cop = rep.max_abs()
        assert sk < bound and ku < bound
        assert cop < 5 / np.sqrt(hist.N)
        assert rep.copula_dev[0] == pytest.approx(0.0, abs=1e-12)

    def test_gaussianity_unitary_noise(self):
        inst = _inst(6, N=2048, kappa=1.0, snr=10.0, delta=1.0, profile="flat")
        _, hist = run_mamp(inst, MleSpec.matched_filter(inst), T=3)
        sk, ku, _ = gaussianity_audit(hist).max_abs()
        assert sk < 15 / np.sqrt(2048) and ku < 15 / np.sqrt(2048)

    def test_idempotence(self, ss_run):
        _, _, hist = ss_run
        zdev, mdev = idempotence_audit(hist).max_abs()
        assert zdev < 1e-6
        assert mdev < 1e-8
        zdev, mdev = idempotence_audit(hist, side="phi").max_abs()
        assert zdev < 1e-6 and mdev < 1e-8

    def test_idempotence_merges_repeats(self):
        # a repeated damped column (singular fallback) must not count as a deviation
        from ssmamp.engine import IterationHistory
        x = np.zeros(4)
        # L-banded errors: <c1, c2> = |c2|^2
        c1 = np.array([1.0, 0.0, 1.0, 0.0])
        c2 = np.array([0.0, 0.0, 1.0, 0.0])
        hist = IterationHistory(x_true=x, R=[c1, c2, c2.copy()], X=[x] * 4)
        rep = idempotence_audit(hist)
        assert max(rep.zeta_dev) < 1e-12
        assert max(rep.mse_change) < 1e-15
        assert rep.merged == 1

    def test_idempotence_merges_near_ties(self):
        # c3 differs from c2 by 1e-7 in norm: the variances tie to within tau
        from ssmamp.engine import IterationHistory
        x = np.zeros(4)
        c1 = np.array([1.0, 0.0, 1.0, 0.0])
        c2 = np.array([0.0, 0.0, 1.0, 0.0])
        c3 = np.array([0.0, 0.0, 1.0, 1e-7])
        hist = IterationHistory(x_true=x, R=[c1, c2, c3], X=[x] * 4)
        rep = idempotence_audit(hist)
        assert rep.merged == 1
        assert max(rep.zeta_dev) < 1e-12
        assert max(rep.mse_change) < 1e-13

    def test_memory_uselessness(self, ss_run):
        inst, _, hist = ss_run
        worst = memory_uselessness_audit(hist, inst.prior)
        assert max(worst) < 3 / np.sqrt(hist.N)


class TestCompareRuns:
    def test_single_iteration_identical(self):
        inst = _inst(7)
        mle = MleSpec.matched_filter(inst)
        p, _ = run_mamp(inst, mle, T=1, mode="plain")
        s, _ = run_mamp(inst, mle, T=1, mode="ss_damped")
        # the linear side is untouched at t = 1; the denoiser side damps
        # against x_1 = 0, which only moves the MSE at finite N
        assert p.mse_gamma == s.mse_gamma
        assert s.mse_phi[0] == pytest.approx(p.mse_phi[0], abs=3 / np.sqrt(p.N))
        rows = compare_runs(p, s)
        assert len(rows) == 1 and rows[0].ok
        assert "plain" in dominance_table(rows)

    def test_mismatch(self):
        mle_a = MleSpec((1.0,))
        p, _ = run_mamp(_inst(7, N=128), mle_a, T=2, mode="plain")
        s, _ = run_mamp(_inst(8, N=128), mle_a, T=2, mode="ss_damped")
        with pytest.raises(ConfigMismatch):
            compare_runs(p, s)

    def test_padding(self, ss_run, plain_run):
        p = plain_run[0]
        s = ss_run[1]
        short = type(s)(**{**s.__dict__, "mse_phi": s.mse_phi[:3]})
        rows = compare_runs(p, short)
        assert len(rows) == len(p.mse_phi)
        assert rows[-1].mse_ss == s.mse_phi[2]


class TestSerialization:
    def test_csv(self, ss_run):
        _, rep, _ = ss_run
        rows = list(csv.DictReader(io.StringIO(rep.to_csv())))
        assert tuple(rows[0].keys()) == CSV_COLUMNS
        assert len(rows) == rep.iterations
        assert float(rows[0]["mse_gamma"]) == rep.mse_gamma[0]

    def test_json(self, ss_run):
        _, rep, _ = ss_run
        d = json.loads(rep.to_json())
        assert d["iterations"] == rep.iterations
        assert d["meta"]["damping_covariance"] == "active_columns"
        assert len(d["per_iteration"]["zeta_phi"][-1]) == rep.iterations + 1
