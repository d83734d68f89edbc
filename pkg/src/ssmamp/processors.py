"""
processors.py:  Local estimators for memory AMP.

Linear side: r = x_t + W (y - A x_t) with W = p(A^T A) A^T and
p(lam) = sum_k c_k lam^k, trace-normalized so that (1/N) tr(W A) = 1.  The
error is then g = (I - W A) f + W n with a traceless (I - W A), which makes
it asymptotically orthogonal to x and to the input errors.

Nonlinear side: the Bernoulli-Gaussian posterior mean, followed by the
divergence-free correction (eta - alpha r) / (1 - alpha).

The MSE transfer functions for both sides are evaluated here as well: the
linear one in closed form over the spectrum, the nonlinear one by
quadrature.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import expit, roots_hermitenorm

from ssmamp.errors import DimensionMismatch, DivergenceAtOne, NonpositiveVariance
from ssmamp.system import SignalPrior, SystemInstance, spectral_moments

DIVERGENCE_MARGIN = 1e-9
GH_NODES = 40
_PRUNE = 1e-20
ATOM_GH_FACTOR = 4


# ---------------------------------------------------------------------------
# Memory linear estimator
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MleSpec:
    """Polynomial filter p(lam) = sum_k coeffs[k] lam^k, trace-normalized.

    Use :meth:`matched_filter`, :meth:`neumann` or :meth:`from_coefficients`;
    they all rescale so that sum_k c_k m_{k+1} = 1, where m_j is the j-th
    spectral moment.
    """

    coeffs: tuple

    @property
    def degree(self) -> int:
        return len(self.coeffs) - 1

    @classmethod
    def from_coefficients(cls, coeffs, moments) -> "MleSpec":
        c = np.asarray(coeffs, dtype=float).ravel()
        m = _moments(moments, c.size + 1)
        trace = float(c @ m[1:c.size + 1])
        if trace == 0.0:
            raise ValueError("filter has zero trace and cannot be normalized")
        return cls(tuple(c / trace))

    @classmethod
    def matched_filter(cls, moments) -> "MleSpec":
        return cls.from_coefficients([1.0], moments)

    @classmethod
    def neumann(cls, K: int, moments, lam_max: float | None = None) -> "MleSpec":
        """Truncated Neumann series for (A^T A)^{-1}: sum_{j<=K} (1 - lam/L)^j / L."""
        if isinstance(moments, SystemInstance):
            lam_max = lam_max or float(moments.sigma.max() ** 2)
        if lam_max is None:
            raise ValueError("lam_max is required unless an instance is given")
        poly = np.polynomial.Polynomial([0.0])
        base = np.polynomial.Polynomial([1.0, -1.0 / lam_max])
        for j in range(K + 1):
            poly = poly + base**j / lam_max
        return cls.from_coefficients(poly.coef, moments)

    def response(self, lam) -> np.ndarray:
        """p(lam) evaluated elementwise."""
        return np.polynomial.polynomial.polyval(np.asarray(lam, dtype=float), self.coeffs)

    def trace(self, moments) -> float:
        m = _moments(moments, len(self.coeffs) + 1)
        return float(np.dot(self.coeffs, m[1:len(self.coeffs) + 1]))


def _moments(moments, k_max):
    if isinstance(moments, SystemInstance):
        return spectral_moments(moments, k_max)
    m = np.asarray(moments, dtype=float)
    if m.size < k_max + 1:
        raise ValueError(f"need spectral moments up to order {k_max}")
    return m


def mle_apply(spec: MleSpec, inst: SystemInstance, x_t) -> np.ndarray:
    """r = x_t + sum_k c_k (A^T A)^k A^T (y - A x_t), through the SVD factors."""
    x_t = np.asarray(x_t, dtype=float)
    if x_t.shape != (inst.N,):
        raise DimensionMismatch(f"expected a length-{inst.N} vector, got shape {x_t.shape}")
    k = inst.sigma.size
    s = inst.sigma
    # Work in the right singular basis: A^T z = V Sigma^T U^T z.
    resid = inst.Uty[:k] - s * inst.V.rmatvec(x_t)[:k]
    out = np.zeros(inst.N)
    out[:k] = spec.response(s**2) * s * resid
    return x_t + inst.V.matvec(out)


def mle_se_coefficients(spec: MleSpec, inst_or_eigs, noise_var: float | None = None):
    """(a, b) with predicted error covariance  a * v_phi + b.

    a = (1/N) sum_i (1 - lam_i p(lam_i))^2   over all N eigenvalues (zeros included)
    b = sigma^2 (1/N) sum_i lam_i p(lam_i)^2
    """
    if isinstance(inst_or_eigs, SystemInstance):
        lam = inst_or_eigs.eigenvalues
        noise_var = inst_or_eigs.noise_var if noise_var is None else noise_var
    else:
        lam = np.asarray(inst_or_eigs, dtype=float)
        if noise_var is None:
            raise ValueError("noise_var is required when passing eigenvalues")
    p = spec.response(lam)
    a = np.mean((1.0 - lam * p) ** 2)
    b = noise_var * np.mean(lam * p**2)
    return float(a), float(b)


def mle_error_moments(spec: MleSpec, inst_or_eigs, v_phi_cross, noise_var=None):
    """Predicted MLE error (cross-)covariance from input error (cross-)covariance.

    The same filter is used at every iteration, so every entry maps the same
    way: v_gamma[t, t'] = a v_phi[t, t'] + b.
    """
    a, b = mle_se_coefficients(spec, inst_or_eigs, noise_var)
    return a * np.asarray(v_phi_cross, dtype=float) + b


# ---------------------------------------------------------------------------
# Bernoulli-Gaussian denoiser
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DenoiserOutput:
    estimate: np.ndarray
    divergence: float
    posterior_var: float


def bg_eta(r, noise_var: float, prior: SignalPrior, derivative: bool = True):
    """Posterior mean E[x | r] and its derivative, elementwise.

    x ~ (1 - rho) delta_0 + rho N(0, s), r = x + N(0, v).  With
    ``derivative=False`` the second element is None.
    """
    r = np.asarray(r, dtype=float)
    v = float(noise_var)
    s = prior.nonzero_var
    k = s / (s + v)
    if prior.rho >= 1.0:
        return k * r, (np.full_like(r, k) if derivative else None)
    curv = 1.0 / v - 1.0 / (s + v)
    logit = np.log(prior.rho / (1.0 - prior.rho)) + 0.5 * np.log(v / (s + v)) + 0.5 * curv * r * r
    pi = expit(logit)
    eta = pi * k * r
    if not derivative:
        return eta, None
    deta = k * pi * (1.0 + curv * r * r * (1.0 - pi))
    return eta, deta


def bg_posterior_mean(r, noise_var: float, prior: SignalPrior) -> DenoiserOutput:
    if not noise_var > 0:
        raise NonpositiveVariance(f"noise variance must be positive, got {noise_var}")
    eta, deta = bg_eta(r, noise_var, prior)
    # Var[x | r] = v * d eta / dr for Gaussian observation noise.
    return DenoiserOutput(estimate=eta, divergence=float(np.mean(deta)),
                          posterior_var=float(noise_var * np.mean(deta)))


def orthogonalize_nle(out: DenoiserOutput, r) -> np.ndarray:
    """x_hat = (estimate - alpha r) / (1 - alpha)."""
    alpha = out.divergence
    if alpha >= 1.0 - DIVERGENCE_MARGIN:
        raise DivergenceAtOne(f"divergence {alpha} too close to 1")
    return (out.estimate - alpha * np.asarray(r, dtype=float)) / (1.0 - alpha)


# ---------------------------------------------------------------------------
# Quadrature for the nonlinear MSE transfer
# ---------------------------------------------------------------------------

@lru_cache(maxsize=8)
def _gh(n):
    # probabilists' Hermite rule normalized to the standard normal density
    z, w = roots_hermitenorm(n)
    return z, w / np.sqrt(2.0 * np.pi)


@lru_cache(maxsize=4)
def _gl(n):
    return np.polynomial.legendre.leggauss(n)


def _x_nodes(prior: SignalPrior, scales, gl_order=8):
    """Nodes/weights for the Gaussian part N(0, s) of the prior.

    Composite Gauss-Legendre on [-10 sd, 10 sd], with extra panels of width
    ~h around 0 for every h in ``scales``: the posterior mean switches over a
    width of order sqrt(v), far narrower than the prior spread when v is
    small.
    """
    sd = np.sqrt(prior.nonzero_var)
    L = 10.0 * sd
    bps = [np.linspace(-L, L, 41)]
    kept = []
    for h in sorted(float(h) for h in scales):
        # windows for scales within 25% of each other are redundant
        if 0.0 < h < sd and not (kept and h < 1.25 * kept[-1]):
            kept.append(h)
            bps.append(np.linspace(-16.0 * h, 16.0 * h, 33))
    b = np.unique(np.clip(np.concatenate(bps), -L, L))
    b = b[np.concatenate(([True], np.diff(b) > 1e-12 * L))]
    u, wu = _gl(gl_order)
    a, c = b[:-1, None], b[1:, None]
    x = (0.5 * (c - a) * u + 0.5 * (c + a)).ravel()
    w = (0.5 * (c - a) * wu).ravel()
    return x, w * np.exp(-0.5 * x * x / prior.nonzero_var) / (sd * np.sqrt(2.0 * np.pi))


def _noise_nodes(C, n_gh):
    """Nodes for a zero-mean Gaussian with covariance C (1x1 or 2x2), shape (m, d)."""
    C = np.atleast_2d(np.asarray(C, dtype=float))
    z, w = _gh(n_gh)
    if C.shape == (1, 1):
        return (np.sqrt(max(C[0, 0], 0.0)) * z)[:, None], w
    lam, Q = np.linalg.eigh(0.5 * (C + C.T))
    Lf = Q * np.sqrt(np.clip(lam, 0.0, None))
    Z = np.stack(np.meshgrid(z, z, indexing="ij"), axis=-1).reshape(-1, 2)
    W = np.outer(w, w).ravel()
    # product nodes far in the corners carry no weight at double precision
    keep = W > _PRUNE * W.max()
    return Z[keep] @ Lf.T, W[keep]


def _expect(g, C, prior: SignalPrior, scales, n_gh):
    """E[g(x, n)] for x ~ prior and n ~ N(0, C) independent.

    ``g(x, n)`` receives x of shape (k, 1) and n of shape (1, m, d) and
    returns shape (k, m).  The x = 0 atom gets ATOM_GH_FACTOR times more
    Gauss-Hermite nodes: there the switch of the posterior mean sits
    directly on the noise axis, while for the Gaussian part the x-integral
    smooths it out.
    """
    x, wx = _x_nodes(prior, scales)
    n, wn = _noise_nodes(C, n_gh)
    total = prior.rho * float(wx @ g(x[:, None], n[None]) @ wn)
    if prior.rho < 1.0:
        n0, wn0 = _noise_nodes(C, ATOM_GH_FACTOR * n_gh)
        total += (1.0 - prior.rho) * float(g(np.zeros((1, 1)), n0[None])[0] @ wn0)
    return total


@lru_cache(maxsize=4096)
def _divergence_cached(v, rho, n_gh):
    prior = SignalPrior(rho)
    return _expect(lambda x, n: bg_eta(x + n[..., 0], v, prior)[1],
                   [[v]], prior, [np.sqrt(v)], n_gh)


def bg_divergence(noise_var: float, prior: SignalPrior, n_gh: int = GH_NODES) -> float:
    """Population divergence E[eta'(x + n)], n ~ N(0, v)."""
    if not noise_var > 0:
        raise NonpositiveVariance(f"noise variance must be positive, got {noise_var}")
    return _divergence_cached(float(noise_var), float(prior.rho), int(n_gh))


def _estimator(v, prior, orthogonalize, n_gh):
    """Scalar map r -> x_hat at input variance v."""
    if orthogonalize:
        alpha = bg_divergence(v, prior, n_gh)
        if alpha >= 1.0 - DIVERGENCE_MARGIN:
            raise DivergenceAtOne(f"divergence {alpha} too close to 1")

        def f(r):
            eta, _ = bg_eta(r, v, prior, derivative=False)
            return (eta - alpha * r) / (1.0 - alpha)
        return f
    return lambda r: bg_eta(r, v, prior, derivative=False)[0]


def pair_error_moment(va, vb, cab, prior: SignalPrior, orthogonalize: bool = True,
                      n_gh: int = GH_NODES) -> float:
    """E[(x_a - x)(x_b - x)] for denoised x_a = phi(x + n_a; va), x_b = phi(x + n_b; vb).

    (n_a, n_b) are jointly Gaussian with variances (va, vb) and covariance
    cab, independent of x.  ``va`` or ``vb`` may be None for the all-zero
    estimate (error -x).  A zero variance means noiseless input, for which
    the denoised output is x itself.
    """
    for v in (va, vb):
        if v is not None and v < 0:
            raise NonpositiveVariance(f"negative variance {v}")
    if (va is not None and va == 0.0) or (vb is not None and vb == 0.0):
        return 0.0
    if va is None and vb is None:
        return 1.0  # E[x^2]
    if va is None or vb is None:
        v = vb if va is None else va
        f = _estimator(v, prior, orthogonalize, n_gh)
        return _expect(lambda x, n: -x * (f(x + n[..., 0]) - x),
                       [[v]], prior, [np.sqrt(v)], n_gh)
    fa = _estimator(va, prior, orthogonalize, n_gh)
    scales = [np.sqrt(va), np.sqrt(vb)]
    if va == vb and cab == va:
        return _expect(lambda x, n: (fa(x + n[..., 0]) - x) ** 2, [[va]], prior, scales, n_gh)
    fb = _estimator(vb, prior, orthogonalize, n_gh)
    return _expect(lambda x, n: (fa(x + n[..., 0]) - x) * (fb(x + n[..., 1]) - x),
                   [[va, cab], [cab, vb]], prior, scales, n_gh)


def nle_mse_transfer(noise_cross, prior: SignalPrior, orthogonalize: bool = True,
                     n_gh: int = GH_NODES):
    """Output error (cross-)covariance of the denoiser.

    ``noise_cross`` is a scalar input variance (returns the output MSE) or a
    2x2 input noise covariance (returns the 2x2 output error covariance).
    """
    C = np.asarray(noise_cross, dtype=float)
    if C.ndim == 0:
        v = float(C)
        return pair_error_moment(v, v, v, prior, orthogonalize, n_gh)
    if C.shape != (2, 2):
        raise DimensionMismatch("noise covariance must be a scalar or 2x2")
    va, vb, cab = float(C[0, 0]), float(C[1, 1]), float(0.5 * (C[0, 1] + C[1, 0]))
    caa = pair_error_moment(va, va, va, prior, orthogonalize, n_gh)
    cbb = pair_error_moment(vb, vb, vb, prior, orthogonalize, n_gh)
    c = pair_error_moment(va, vb, cab, prior, orthogonalize, n_gh)
    return np.array([[caa, c], [c, cbb]])
