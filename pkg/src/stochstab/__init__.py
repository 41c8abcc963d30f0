"""Stabilisation of weakly unstable equilibria of random maps by noise."""

__version__ = "0.1.0"

from .errors import NonConvergenceError, StochStabError, ValidationError  # noqa: E402
from .linalg import (JordanLikeDecomposition, balance, decompose_jordan_like,  # noqa: E402
                     gershgorin_upper_bound, operator_norm, spectral_radius)
from .noise import NoiseModel, ScalarDistribution, sample_B, sample_G, stream, validate_moments  # noqa: E402
from .lyapunov import (LyapunovEstimate, MarginReport, analytic_margin,  # noqa: E402
                       check_stability_criterion, per_step_log_norm_estimate,
                       product_lyapunov_estimate, scalar_log_moment, taylor_margin)
from .dynamics import (MapSystem, StabilityReport, Trajectory, deterministic_comparison,  # noqa: E402
                       escape_probability, fit_decay_envelope, gronwall_bound, simulate)
from .synth import SynthesisRequest, SynthesisResult, minimal_rho, synthesize  # noqa: E402
