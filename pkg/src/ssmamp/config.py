"""
config.py:  Experiment configuration files.

INI-style, one level of sections::

    [system]
    N = 2048
    delta = 0.5
    kappa = 10
    profile = geometric
    snr_db = 30

    [prior]
    rho = 0.1

    [run]
    T = 30
    modes = plain, ss_damped
    seeds = 0-9
    mle = matched_filter        ; or neumann:K
    tau = 1e-10
    se_T = 20

    [tolerances]
    orthogonality = 0.11        ; any default may be overridden

    [output]
    dir = results

    [verify]
    checks = lbanded, monotone, orthogonality

Statistical tolerances default to multiples of 1/sqrt(N).
"""
from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field
from pathlib import Path

from ssmamp.damping import DEFAULT_TAU
from ssmamp.engine import MODES
from ssmamp.errors import ConfigError, InvalidSpec
from ssmamp.processors import MleSpec
from ssmamp.system import SignalPrior, SpectrumSpec, noise_var_from_snr

CHECKS = ("lbanded", "monotone", "orthogonality", "gaussianity", "dominance",
          "se_agreement", "idempotence", "memory", "lbanded_algebra", "damping_algebra")
RUN_CHECKS = CHECKS[:8]

_SECTIONS = {
    "system": {"N", "delta", "kappa", "profile", "snr_db"},
    "prior": {"rho"},
    "run": {"T", "modes", "seeds", "mle", "tau", "se_T"},
    "tolerances": None,   # validated against default_tolerances
    "output": {"dir"},
    "verify": {"checks"},
}


def default_tolerances(N: int) -> dict:
    s = 1.0 / math.sqrt(N)
    return {
        "lbanded": 5 * s,
        "monotone": 3 * s,
        "orthogonality": 5 * s,
        "gaussianity": 15 * s,
        "copula": 5 * s,
        "dominance": 3 * s,
        "se_rel": 0.10,
        "se_T": 20,
        "idempotence_zeta": 1e-6,
        "idempotence_mse": 1e-8,
        "memory": 3 * s,
    }


@dataclass
class ExperimentConfig:
    spec: SpectrumSpec
    prior: SignalPrior
    snr_db: float
    T: int
    modes: tuple
    seeds: tuple
    mle: str = "matched_filter"
    tau: float = DEFAULT_TAU
    tolerances: dict = field(default_factory=dict)
    out_dir: str = "results"
    checks: tuple = RUN_CHECKS

    @property
    def noise_var(self) -> float:
        return noise_var_from_snr(self.snr_db, self.spec.delta)

    def with_seed_offset(self, offset: int) -> "ExperimentConfig":
        return ExperimentConfig(**{**self.__dict__, "seeds": tuple(s + offset for s in self.seeds)})

    def build_mle(self, inst_or_moments) -> MleSpec:
        if self.mle == "matched_filter":
            return MleSpec.matched_filter(inst_or_moments)
        K = int(self.mle.split(":", 1)[1])
        return MleSpec.neumann(K, inst_or_moments)

    def as_dict(self) -> dict:
        return {
            "N": self.spec.N, "delta": self.spec.delta, "kappa": self.spec.kappa,
            "profile": self.spec.profile, "snr_db": self.snr_db, "noise_var": self.noise_var,
            "rho": self.prior.rho, "T": self.T, "modes": list(self.modes),
            "seeds": list(self.seeds), "mle": self.mle, "tau": self.tau,
            "tolerances": self.tolerances, "checks": list(self.checks),
        }


def parse_seeds(text: str) -> tuple:
    seeds = []
    for part in text.replace(" ", "").split(","):
        if not part:
            continue
        if "-" in part[1:]:
            lo, hi = part.split("-", 1)
            seeds.extend(range(int(lo), int(hi) + 1))
        else:
            seeds.append(int(part))
    if not seeds:
        raise ConfigError("no seeds given")
    if len(set(seeds)) != len(seeds):
        raise ConfigError("duplicate seeds")
    return tuple(seeds)


def _split(text):
    return tuple(s.strip() for s in text.split(",") if s.strip())


def parse_config(text: str) -> ExperimentConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"unreadable config: {exc}") from exc
    for sec in cp.sections():
        if sec not in _SECTIONS:
            raise ConfigError(f"unknown section [{sec}]")
        allowed = _SECTIONS[sec]
        if allowed is not None:
            extra = set(cp[sec]) - allowed
            if extra:
                raise ConfigError(f"unknown keys in [{sec}]: {sorted(extra)}")
    if "system" not in cp:
        raise ConfigError("missing [system] section")

    def get(sec, key, conv, default=None):
        if sec not in cp or key not in cp[sec]:
            if default is None:
                raise ConfigError(f"missing {sec}.{key}")
            return default
        try:
            return conv(cp[sec][key])
        except ValueError as exc:
            raise ConfigError(f"bad value for {sec}.{key}: {cp[sec][key]!r}") from exc

    try:
        spec = SpectrumSpec(
            N=get("system", "N", int),
            delta=get("system", "delta", float),
            kappa=get("system", "kappa", float, 1.0),
            profile=get("system", "profile", str, "geometric"),
        )
        rho = get("prior", "rho", float)
        prior = SignalPrior(rho)
    except InvalidSpec as exc:
        raise ConfigError(str(exc)) from exc
    if rho >= 1.0:
        # with a Gaussian prior the orthogonalized denoiser output is identically zero
        raise ConfigError("rho = 1 is not supported: the orthogonalized denoiser degenerates")
    snr_db = get("system", "snr_db", float)
    T = get("run", "T", int)
    if T < 1:
        raise ConfigError("run.T must be >= 1")
    modes = get("run", "modes", _split, ("plain", "ss_damped"))
    bad = [m for m in modes if m not in MODES]
    if bad or not modes:
        raise ConfigError(f"run.modes must be drawn from {MODES}, got {modes}")
    seeds = get("run", "seeds", parse_seeds, (0,))
    mle = get("run", "mle", str, "matched_filter")
    if not (mle == "matched_filter" or (mle.startswith("neumann:") and mle[8:].isdigit())):
        raise ConfigError(f"run.mle must be matched_filter or neumann:K, got {mle!r}")
    tau = get("run", "tau", float, DEFAULT_TAU)
    if not 0 < tau < 1:
        raise ConfigError("run.tau must lie in (0, 1)")

    tol = default_tolerances(spec.N)
    if "run" in cp and "se_T" in cp["run"]:
        tol["se_T"] = get("run", "se_T", int)
    if "tolerances" in cp:
        for key, val in cp["tolerances"].items():
            if key not in tol:
                raise ConfigError(f"unknown tolerance {key!r}; known: {sorted(tol)}")
            try:
                tol[key] = type(tol[key])(float(val))
            except ValueError as exc:
                raise ConfigError(f"bad tolerance {key} = {val!r}") from exc
            if tol[key] < 0:
                raise ConfigError(f"tolerance {key} must be >= 0")
    checks = get("verify", "checks", _split, RUN_CHECKS)
    bad = [c for c in checks if c not in CHECKS]
    if bad:
        raise ConfigError(f"unknown checks {bad}; known: {CHECKS}")
    out_dir = get("output", "dir", str, "results")
    return ExperimentConfig(spec=spec, prior=prior, snr_db=snr_db, T=T, modes=tuple(modes),
                            seeds=seeds, mle=mle, tau=tau, tolerances=tol, out_dir=out_dir,
                            checks=tuple(checks))


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)
