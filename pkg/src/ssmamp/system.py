"""
system.py:  Synthetic instances of y = A x + n.

A = U diag(sigma) V^T is right-orthogonally invariant: V is Haar
distributed and independent of (U, sigma).  The singular values are scaled
so that (1/N) tr(A^T A) = 1, and x is IID Bernoulli-Gaussian with unit
variance.  Arithmetic is real throughout.
"""
from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field

import numpy as np
import scipy.fft

from ssmamp.errors import DimensionMismatch, InvalidSpec

HAAR_DENSE_MAX = 4096
PROFILES = ("flat", "geometric")


@dataclass(frozen=True)
class SpectrumSpec:
    N: int
    delta: float
    kappa: float = 1.0
    profile: str = "geometric"

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 1:
            raise InvalidSpec(f"N must be a positive integer, got {self.N}")
        if not self.delta > 0:
            raise InvalidSpec(f"delta must be positive, got {self.delta}")
        if not self.kappa >= 1:
            raise InvalidSpec(f"kappa must be >= 1, got {self.kappa}")
        if self.profile not in PROFILES:
            raise InvalidSpec(f"profile must be one of {PROFILES}, got {self.profile!r}")
        if self.profile == "flat" and self.kappa != 1:
            raise InvalidSpec("a flat profile has kappa = 1")
        if self.M < 1:
            raise InvalidSpec(f"delta * N rounds to M = {self.M}")

    @property
    def M(self) -> int:
        return int(round(self.delta * self.N))

    def singular_values(self) -> np.ndarray:
        """Decreasing singular values with max/min = kappa and sum(s^2)/N = 1."""
        m = min(self.M, self.N)
        if self.profile == "flat" or m == 1 or self.kappa == 1:
            s = np.ones(m)
        else:
            s = self.kappa ** (-np.arange(m) / (m - 1))
        return s * np.sqrt(self.N / np.sum(s**2))


@dataclass(frozen=True)
class SignalPrior:
    """Bernoulli-Gaussian: x = 0 w.p. 1 - rho, else N(0, 1/rho)."""

    rho: float

    def __post_init__(self):
        if not 0 < self.rho <= 1:
            raise InvalidSpec(f"rho must lie in (0, 1], got {self.rho}")

    @property
    def nonzero_var(self) -> float:
        return 1.0 / self.rho

    def sample(self, rng, n) -> np.ndarray:
        support = rng.random(n) < self.rho
        return np.where(support, rng.standard_normal(n) * np.sqrt(self.nonzero_var), 0.0)


class DenseOrthogonal:
    """Explicit orthogonal matrix Q."""

    kind = 0

    def __init__(self, Q):
        self.Q = np.asarray(Q, dtype=float)
        self.n = self.Q.shape[0]

    @classmethod
    def haar(cls, rng, n):
        # QR of a Gaussian matrix with the sign fix makes Q exactly Haar.
        Z = rng.standard_normal((n, n))
        Q, R = np.linalg.qr(Z)
        return cls(Q * np.sign(np.diag(R)))

    @classmethod
    def identity(cls, n):
        return cls(np.eye(n))

    def matvec(self, x):
        return self.Q @ x

    def rmatvec(self, x):
        return self.Q.T @ x

    def to_dense(self):
        return self.Q

    def params(self):
        return [self.Q.ravel()]


class FastOrthogonal:
    """Haar surrogate: two rounds of sign flip, orthonormal DCT, permutation.

    Q x = P2 C D2 P1 C D1 x.  Cost O(N log N) per application.
    """

    kind = 1

    def __init__(self, signs1, perm1, signs2, perm2):
        self.signs1 = np.asarray(signs1, dtype=float)
        self.signs2 = np.asarray(signs2, dtype=float)
        self.perm1 = np.asarray(perm1, dtype=np.int64)
        self.perm2 = np.asarray(perm2, dtype=np.int64)
        self.n = self.signs1.size
        self.iperm1 = np.argsort(self.perm1)
        self.iperm2 = np.argsort(self.perm2)

    @classmethod
    def random(cls, rng, n):
        return cls(rng.choice([-1.0, 1.0], n), rng.permutation(n),
                   rng.choice([-1.0, 1.0], n), rng.permutation(n))

    def matvec(self, x):
        z = scipy.fft.dct(self.signs1 * x, norm="ortho")[self.perm1]
        return scipy.fft.dct(self.signs2 * z, norm="ortho")[self.perm2]

    def rmatvec(self, x):
        z = scipy.fft.idct(x[self.iperm2], norm="ortho") * self.signs2
        return scipy.fft.idct(z[self.iperm1], norm="ortho") * self.signs1

    def to_dense(self):
        return np.column_stack([self.matvec(e) for e in np.eye(self.n)])

    def params(self):
        return [self.signs1, self.perm1.astype(float), self.signs2, self.perm2.astype(float)]


def _random_orthogonal(rng, n):
    if n <= HAAR_DENSE_MAX:
        return DenseOrthogonal.haar(rng, n)
    return FastOrthogonal.random(rng, n)


@dataclass
class SystemInstance:
    U: object
    V: object
    sigma: np.ndarray
    x_true: np.ndarray
    y: np.ndarray
    noise_var: float
    spec: SpectrumSpec
    prior: SignalPrior
    seed: int = 0
    _Uty: np.ndarray = field(default=None, repr=False)

    @property
    def M(self) -> int:
        return self.y.size

    @property
    def N(self) -> int:
        return self.x_true.size

    @property
    def eigenvalues(self) -> np.ndarray:
        """All N eigenvalues of A^T A (zeros included), decreasing."""
        lam = np.zeros(self.N)
        lam[:self.sigma.size] = self.sigma**2
        return lam

    @property
    def Uty(self) -> np.ndarray:
        if self._Uty is None:
            self._Uty = self.U.rmatvec(self.y)
        return self._Uty

    def apply_A(self, v):
        return apply_A(self, v)

    def apply_AH(self, u):
        return apply_AH(self, u)

    def dense(self) -> np.ndarray:
        S = np.zeros((self.M, self.N))
        k = self.sigma.size
        S[np.arange(k), np.arange(k)] = self.sigma
        return self.U.to_dense() @ S @ self.V.to_dense().T


def apply_A(inst: SystemInstance, v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape != (inst.N,):
        raise DimensionMismatch(f"expected a length-{inst.N} vector, got shape {v.shape}")
    w = inst.V.rmatvec(v)
    out = np.zeros(inst.M)
    k = inst.sigma.size
    out[:k] = inst.sigma * w[:k]
    return inst.U.matvec(out)


def apply_AH(inst: SystemInstance, u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.shape != (inst.M,):
        raise DimensionMismatch(f"expected a length-{inst.M} vector, got shape {u.shape}")
    return _apply_V_sigma(inst, inst.U.rmatvec(u))


def _apply_V_sigma(inst, w):
    out = np.zeros(inst.N)
    k = inst.sigma.size
    out[:k] = inst.sigma * w[:k]
    return inst.V.matvec(out)


def apply_AHA(inst: SystemInstance, v) -> np.ndarray:
    """A^T A v without touching U."""
    w = inst.V.rmatvec(np.asarray(v, dtype=float))
    out = np.zeros(inst.N)
    k = inst.sigma.size
    out[:k] = inst.sigma**2 * w[:k]
    return inst.V.matvec(out)


def noise_var_from_snr(snr_db: float, delta: float) -> float:
    """sigma^2 with 10 log10(E||Ax||^2 / (M sigma^2)) = snr_db.

    E||Ax||^2 = tr(A^T A) = N under the normalizations, so sigma^2 = 1 / (delta snr).
    """
    return 1.0 / (delta * 10.0 ** (snr_db / 10.0))


def generate_system(seed: int, spec: SpectrumSpec, prior: SignalPrior,
                    noise_var: float) -> SystemInstance:
    if noise_var < 0:
        raise InvalidSpec(f"noise_var must be >= 0, got {noise_var}")
    rng = np.random.default_rng(seed)
    M, N = spec.M, spec.N
    V = _random_orthogonal(rng, N)
    U = _random_orthogonal(rng, M)
    sigma = spec.singular_values()
    x = prior.sample(rng, N)
    noise = rng.standard_normal(M) * np.sqrt(noise_var)
    inst = SystemInstance(U=U, V=V, sigma=sigma, x_true=x, y=np.zeros(M),
                          noise_var=float(noise_var), spec=spec, prior=prior, seed=seed)
    inst.y = apply_A(inst, x) + noise
    return inst


def spectral_moments(inst_or_sigma, k_max: int, N: int | None = None) -> np.ndarray:
    """(1/N) sum_i sigma_i^(2k) for k = 0..k_max over the nonzero singular values.

    Moment 0 is min(M, N)/N, which equals delta when M <= N.
    """
    if k_max < 0:
        raise ValueError("k_max must be >= 0")
    if isinstance(inst_or_sigma, SystemInstance):
        sigma, N = inst_or_sigma.sigma, inst_or_sigma.N
    else:
        sigma = np.asarray(inst_or_sigma, dtype=float)
        if N is None:
            raise ValueError("N is required when passing singular values")
    lam = sigma**2
    return np.array([np.sum(lam**k) / N for k in range(k_max + 1)])


# Binary dump format, all little-endian:
#   magic  8 bytes  b"SSMAMP01"
#   header <qqqqqq dddd>  M, N, seed, profile index, U kind, V kind,
#                         delta, kappa, rho, noise_var
#   payload float64: sigma, x_true, y, then U params, then V params
#   (dense: Q row-major; fast: signs1, perm1, signs2, perm2)
_MAGIC = b"SSMAMP01"
_HEADER = struct.Struct("<qqqqqqdddd")


def dump_system(inst: SystemInstance, fh) -> None:
    spec = inst.spec
    fh.write(_MAGIC)
    fh.write(_HEADER.pack(inst.M, inst.N, int(inst.seed), PROFILES.index(spec.profile),
                          inst.U.kind, inst.V.kind, spec.delta, spec.kappa,
                          inst.prior.rho, inst.noise_var))
    arrays = [inst.sigma, inst.x_true, inst.y, *inst.U.params(), *inst.V.params()]
    for a in arrays:
        fh.write(np.asarray(a, dtype="<f8").tobytes())


def _read_f8(fh, n):
    buf = fh.read(8 * n)
    if len(buf) != 8 * n:
        raise ValueError("truncated system dump")
    return np.frombuffer(buf, dtype="<f8").astype(float)


def _read_orth(fh, kind, n):
    if kind == DenseOrthogonal.kind:
        return DenseOrthogonal(_read_f8(fh, n * n).reshape(n, n))
    parts = [_read_f8(fh, n) for _ in range(4)]
    return FastOrthogonal(parts[0], parts[1].astype(np.int64), parts[2], parts[3].astype(np.int64))


def load_system(fh) -> SystemInstance:
    if fh.read(len(_MAGIC)) != _MAGIC:
        raise ValueError("not a system dump")
    M, N, seed, prof, ukind, vkind, delta, kappa, rho, noise_var = _HEADER.unpack(
        fh.read(_HEADER.size))
    spec = SpectrumSpec(N=N, delta=delta, kappa=kappa, profile=PROFILES[prof])
    if spec.M != M:
        raise ValueError("header M inconsistent with delta * N")
    sigma = _read_f8(fh, min(M, N))
    x = _read_f8(fh, N)
    y = _read_f8(fh, M)
    U = _read_orth(fh, ukind, M)
    V = _read_orth(fh, vkind, N)
    return SystemInstance(U=U, V=V, sigma=sigma, x_true=x, y=y, noise_var=noise_var,
                          spec=spec, prior=SignalPrior(rho), seed=seed)


def dumps_system(inst: SystemInstance) -> bytes:
    buf = io.BytesIO()
    dump_system(inst, buf)
    return buf.getvalue()
