"""Memory AMP with sufficient-statistic damping for right-orthogonally invariant systems."""

from ssmamp.damping import optimal_damping, qp_oracle_damping
from ssmamp.engine import MODES, RunReport, compare_runs, run_mamp
from ssmamp.lbanded import LBandedMatrix, expand, is_lbanded, lbanded_inverse
from ssmamp.processors import MleSpec, bg_posterior_mean, orthogonalize_nle
from ssmamp.state_evolution import fixed_point, run_se
from ssmamp.system import SignalPrior, SpectrumSpec, generate_system, noise_var_from_snr

__version__ = "0.1.0"

__all__ = [
    "optimal_damping", "qp_oracle_damping", "MODES", "RunReport", "compare_runs", "run_mamp",
    "LBandedMatrix", "expand", "is_lbanded", "lbanded_inverse", "MleSpec",
    "bg_posterior_mean", "orthogonalize_nle", "fixed_point", "run_se", "SignalPrior",
    "SpectrumSpec", "generate_system", "noise_var_from_snr",
]
