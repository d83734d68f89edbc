import numpy as np
import pytest
from scipy import integrate
from scipy.stats import norm

from ssmamp.errors import DimensionMismatch, DivergenceAtOne, NonpositiveVariance
from ssmamp.processors import (
    DenoiserOutput,
    MleSpec,
    bg_divergence,
    bg_eta,
    bg_posterior_mean,
    mle_apply,
    mle_error_moments,
    mle_se_coefficients,
    nle_mse_transfer,
    orthogonalize_nle,
    pair_error_moment,
)
from ssmamp.system import (
    SignalPrior,
    SpectrumSpec,
    apply_AH,
    generate_system,
    spectral_moments,
)


def _posterior_oracle(r, v, rho):
    """E[x | r] and Var[x | r] by adaptive 1-D quadrature."""
    s = 1.0 / rho
    dens = lambda x: norm.pdf(x, 0, np.sqrt(s)) * norm.pdf(r, x, np.sqrt(v))
    kw = dict(points=[0.0, r], limit=400, epsabs=1e-15)
    z1 = integrate.quad(lambda x: x * dens(x), -60, 60, **kw)[0]
    z2 = integrate.quad(lambda x: x * x * dens(x), -60, 60, **kw)[0]
    z0 = integrate.quad(dens, -60, 60, **kw)[0]
    den = (1 - rho) * norm.pdf(r, 0, np.sqrt(v)) + rho * z0
    mean = rho * z1 / den
    return mean, rho * z2 / den - mean**2


class TestMleSpec:
    def test_trace_normalized(self):
        inst = generate_system(0, SpectrumSpec(256, 0.5, 10.0), SignalPrior(0.1), 1e-3)
        m = spectral_moments(inst, 6)
        for spec in (MleSpec.matched_filter(inst), MleSpec.neumann(3, inst),
                     MleSpec.from_coefficients([1.0, -0.2, 0.01], m)):
            assert spec.trace(m) == pytest.approx(1.0, rel=1e-12)

    def test_matched_filter_unit_trace_spectrum(self):
        # (1/N) tr(A^T A) = 1 already, so the matched filter is p = 1
        inst = generate_system(1, SpectrumSpec(64, 0.5, 4.0), SignalPrior(0.2), 0.0)
        assert MleSpec.matched_filter(inst).coeffs == pytest.approx((1.0,))

    def test_zero_trace_rejected(self):
        with pytest.raises(ValueError):
            MleSpec.from_coefficients([0.0], [0.5, 1.0])


class TestMleApply:
    def test_matches_dense(self):
        inst = generate_system(3, SpectrumSpec(48, 0.75, 10.0), SignalPrior(0.3), 0.01)
        spec = MleSpec.neumann(2, inst)
        A = inst.dense()
        AtA = A.T @ A
        P = sum(c * np.linalg.matrix_power(AtA, k) for k, c in enumerate(spec.coeffs))
        x_t = np.random.default_rng(0).standard_normal(inst.N)
        expected = x_t + P @ A.T @ (inst.y - A @ x_t)
        np.testing.assert_allclose(mle_apply(spec, inst, x_t), expected, atol=1e-10)

    def test_unitary_error_is_noise(self):
        inst = generate_system(4, SpectrumSpec(128, 1.0, 1.0, "flat"), SignalPrior(0.1), 0.05)
        spec = MleSpec.matched_filter(inst)
        x_t = np.random.default_rng(1).standard_normal(inst.N)
        err = mle_apply(spec, inst, x_t) - inst.x_true
        noise = inst.y - inst.apply_A(inst.x_true)
        np.testing.assert_allclose(err, apply_AH(inst, noise), atol=1e-10)
        assert mle_se_coefficients(spec, inst) == pytest.approx((0.0, 0.05), abs=1e-12)

    def test_fixed_point_noiseless(self):
        inst = generate_system(5, SpectrumSpec(64, 0.5, 10.0), SignalPrior(0.1), 0.0)
        spec = MleSpec.matched_filter(inst)
        np.testing.assert_allclose(mle_apply(spec, inst, inst.x_true), inst.x_true, atol=1e-12)

    def test_wrong_length(self):
        inst = generate_system(5, SpectrumSpec(16, 0.5), SignalPrior(0.5), 0.0)
        with pytest.raises(DimensionMismatch):
            mle_apply(MleSpec((1.0,)), inst, np.zeros(15))

    def test_error_orthogonal_to_signal(self):
        # Normalized by the error and signal norms; the raw <g, x>/N has a
        # spread of sqrt(2 a / N), which grows with the condition number.
        N = 512
        spec_sys = SpectrumSpec(N, 0.5, 10.0)
        worst = worst_raw = 0.0
        for seed in range(20):
            inst = generate_system(seed, spec_sys, SignalPrior(0.1), 1e-3)
            spec = MleSpec.matched_filter(inst)
            g = mle_apply(spec, inst, np.zeros(N)) - inst.x_true
            ip = abs(g @ inst.x_true)
            worst = max(worst, ip / (np.linalg.norm(g) * np.linalg.norm(inst.x_true)))
            worst_raw = max(worst_raw, ip / N)
        a, _ = mle_se_coefficients(spec, inst)
        assert worst < 5 / np.sqrt(N)
        assert worst_raw < 5 * np.sqrt(2 * a / N)


class TestMleErrorMoments:
    def test_two_value_hand_case(self):
        # N = 4, delta = 0.5, kappa = 10: eigenvalues 400/101, 4/101, 0, 0
        inst = generate_system(0, SpectrumSpec(4, 0.5, 10.0), SignalPrior(0.5), 0.1)
        spec = MleSpec.matched_filter(inst)
        a = 0.25 * ((1 - 400 / 101) ** 2 + (1 - 4 / 101) ** 2 + 2)
        assert mle_error_moments(spec, inst, 0.3) == pytest.approx(a * 0.3 + 0.1, rel=1e-12)

    def test_matrix_argument(self):
        lam = np.array([2.0, 1.0, 1.0, 0.0])
        spec = MleSpec((1.0,))
        a, b = mle_se_coefficients(spec, lam, noise_var=0.5)
        V = np.array([[0.4, 0.2], [0.2, 0.2]])
        np.testing.assert_allclose(mle_error_moments(spec, lam, V, 0.5), a * V + b)

    def test_eigs_need_noise(self):
        with pytest.raises(ValueError):
            mle_se_coefficients(MleSpec((1.0,)), np.ones(3))

    @pytest.mark.parametrize("kappa", [1.0, 10.0])
    def test_matches_empirical(self, kappa):
        N, v_phi = 2048, 0.2
        inst = generate_system(7, SpectrumSpec(N, 0.5, kappa), SignalPrior(0.1), 1e-3)
        spec = MleSpec.matched_filter(inst)
        f = np.random.default_rng(8).standard_normal(N) * np.sqrt(v_phi)
        g = mle_apply(spec, inst, inst.x_true + f) - inst.x_true
        pred = mle_error_moments(spec, inst, v_phi)
        assert np.mean(g**2) == pytest.approx(pred, rel=0.1)


class TestBgDenoiser:
    def test_oracle_value(self):
        out = bg_posterior_mean(np.array([0.5]), 0.2, SignalPrior(0.1))
        mean, var = _posterior_oracle(0.5, 0.2, 0.1)
        assert mean == pytest.approx(0.013682317506134986, rel=1e-9)
        assert out.estimate[0] == pytest.approx(mean, rel=1e-9)
        assert out.posterior_var == pytest.approx(var, rel=1e-8)

    @pytest.mark.parametrize("r", [-4.0, -0.7, 0.0, 0.3, 1.5, 6.0])
    @pytest.mark.parametrize("v", [0.01, 0.3, 2.0])
    def test_oracle_grid(self, r, v):
        mean, var = _posterior_oracle(r, v, 0.2)
        eta, deta = bg_eta(np.array([r]), v, SignalPrior(0.2))
        assert eta[0] == pytest.approx(mean, rel=1e-8, abs=1e-13)
        assert v * deta[0] == pytest.approx(var, rel=1e-7, abs=1e-13)

    def test_gaussian_prior_conjugate(self):
        r = np.linspace(-3, 3, 13)
        out = bg_posterior_mean(r, 0.5, SignalPrior(1.0))
        np.testing.assert_allclose(out.estimate, r / 1.5)
        assert out.posterior_var == pytest.approx(0.5 / 1.5)

    def test_low_noise_is_identity(self):
        r = np.array([-2.0, -0.5, 0.8, 3.0])
        eta, _ = bg_eta(r, 1e-10, SignalPrior(0.1))
        np.testing.assert_allclose(eta, r, rtol=1e-8)

    def test_derivative_finite_difference(self):
        prior = SignalPrior(0.1)
        r = np.linspace(-5, 5, 201)
        h = 1e-5
        _, deta = bg_eta(r, 0.3, prior)
        fd = (bg_eta(r + h, 0.3, prior)[0] - bg_eta(r - h, 0.3, prior)[0]) / (2 * h)
        np.testing.assert_allclose(deta, fd, atol=1e-6)

    def test_lipschitz(self):
        # the posterior mean derivative is v^-1 Var[x|r] >= 0 and bounded
        prior = SignalPrior(0.05)
        r = np.linspace(-50, 50, 20001)
        for v in (1e-3, 0.1, 1.0):
            _, deta = bg_eta(r, v, prior)
            assert np.all(deta >= 0)
            assert np.all(np.isfinite(deta))

    def test_nonpositive_variance(self):
        with pytest.raises(NonpositiveVariance):
            bg_posterior_mean(np.zeros(3), 0.0, SignalPrior(0.1))
        with pytest.raises(NonpositiveVariance):
            bg_divergence(-1.0, SignalPrior(0.1))


class TestOrthogonalize:
    def test_zero_divergence_passthrough(self):
        est = np.array([1.0, 2.0])
        np.testing.assert_allclose(orthogonalize_nle(DenoiserOutput(est, 0.0, 0.0), est * 3), est)

    def test_formula(self):
        out = DenoiserOutput(np.array([1.0, -1.0]), 0.25, 0.0)
        np.testing.assert_allclose(orthogonalize_nle(out, np.array([2.0, 4.0])),
                                   [(1 - 0.5) / 0.75, (-1 - 1.0) / 0.75])

    def test_gaussian_prior_gives_zero(self):
        r = np.random.default_rng(0).standard_normal(100)
        out = bg_posterior_mean(r, 0.7, SignalPrior(1.0))
        np.testing.assert_allclose(orthogonalize_nle(out, r), 0.0, atol=1e-12)

    def test_divergence_at_one(self):
        with pytest.raises(DivergenceAtOne):
            orthogonalize_nle(DenoiserOutput(np.zeros(2), 1.0, 0.0), np.zeros(2))

    def test_population_divergence_matches_empirical(self):
        prior = SignalPrior(0.1)
        rng = np.random.default_rng(2)
        n = 400_000
        r = prior.sample(rng, n) + rng.standard_normal(n) * np.sqrt(0.3)
        emp = bg_posterior_mean(r, 0.3, prior).divergence
        assert bg_divergence(0.3, prior) == pytest.approx(emp, abs=3e-3)


class TestNleTransfer:
    def test_monte_carlo_scalar(self):
        prior, v, n = SignalPrior(0.1), 0.3, 10**6
        rng = np.random.default_rng(123)
        x = prior.sample(rng, n)
        r = x + rng.standard_normal(n) * np.sqrt(v)
        alpha = bg_divergence(v, prior)
        e2 = ((bg_eta(r, v, prior)[0] - alpha * r) / (1 - alpha) - x) ** 2
        se = e2.std() / np.sqrt(n)
        assert abs(nle_mse_transfer(v, prior) - e2.mean()) < 3 * se

    def test_monte_carlo_cross(self):
        prior, n = SignalPrior(0.1), 10**6
        C = np.array([[0.3, 0.12], [0.12, 0.15]])
        rng = np.random.default_rng(321)
        x = prior.sample(rng, n)
        noise = rng.standard_normal((n, 2)) @ np.linalg.cholesky(C).T
        errs = []
        for k in range(2):
            v = C[k, k]
            r = x + noise[:, k]
            alpha = bg_divergence(v, prior)
            errs.append((bg_eta(r, v, prior)[0] - alpha * r) / (1 - alpha) - x)
        prod = errs[0] * errs[1]
        out = nle_mse_transfer(C, prior)
        assert abs(out[0, 1] - prod.mean()) < 3 * prod.std() / np.sqrt(n)
        assert out[0, 1] == out[1, 0]

    def test_plain_posterior_mean_is_mmse(self):
        # E[(eta - x)^2] equals the mean posterior variance
        prior = SignalPrior(0.2)
        mse = nle_mse_transfer(0.4, prior, orthogonalize=False)
        z, w = np.polynomial.hermite_e.hermegauss(80)
        w = w / w.sum()
        # posterior variance averaged over r, by quadrature over x then n
        pv = (prior.rho * sum(wi * np.sum(w * 0.4 * bg_eta(np.sqrt(prior.nonzero_var) * zi + np.sqrt(0.4) * z,
                                                              0.4, prior)[1]) for zi, wi in zip(z, w))
              + (1 - prior.rho) * np.sum(w * 0.4 * bg_eta(np.sqrt(0.4) * z, 0.4, prior)[1]))
        assert mse == pytest.approx(pv, rel=1e-4)

    def test_gaussian_prior_closed_form(self):
        prior = SignalPrior(1.0)
        assert nle_mse_transfer(0.5, prior, orthogonalize=False) == pytest.approx(0.5 / 1.5, rel=1e-10)
        # the orthogonalized estimate is identically zero
        assert nle_mse_transfer(0.5, prior) == pytest.approx(1.0, rel=1e-10)

    def test_zero_noise(self):
        assert nle_mse_transfer(0.0, SignalPrior(0.1)) == 0.0

    def test_zero_estimator(self):
        prior = SignalPrior(0.1)
        assert pair_error_moment(None, None, None, prior) == 1.0
        # E[-x (x_hat - x)] for orthogonalized x_hat: the error of x_hat is
        # uncorrelated with r - x, so this equals 1 - E[x x_hat]
        v = 0.2
        c = pair_error_moment(None, v, None, prior)
        assert pair_error_moment(v, None, None, prior) == pytest.approx(c, rel=1e-14)
        assert 0 < c < 1

    def test_symmetric_in_arguments(self):
        prior = SignalPrior(0.1)
        a = pair_error_moment(0.3, 0.1, 0.08, prior)
        b = pair_error_moment(0.1, 0.3, 0.08, prior)
        assert a == pytest.approx(b, rel=1e-9)

    def test_refinement_stable(self):
        prior = SignalPrior(0.1)
        for va, vb, cab in [(1.0, 0.5, 0.5), (0.2, 0.1, 0.05), (1e-3, 1e-4, 1e-4)]:
            lo = pair_error_moment(va, vb, cab, prior, n_gh=40)
            hi = pair_error_moment(va, vb, cab, prior, n_gh=100)
            assert lo == pytest.approx(hi, rel=1e-8)

    def test_bad_shape(self):
        with pytest.raises(DimensionMismatch):
            nle_mse_transfer(np.eye(3), SignalPrior(0.1))
