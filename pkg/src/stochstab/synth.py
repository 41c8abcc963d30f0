"""Design noise that stabilises a weakly unstable linear part ``A`` with ``rho(A) = 1 + eps``."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .linalg import (as_matrix, balance, decompose_jordan_like, matrix_from_dict,
                     matrix_to_dict, operator_norm, spectral_radius)
from .lyapunov import CriterionResult, LyapunovEstimate, MarginReport, analytic_margin, \
    check_stability_criterion
from .noise import STRUCTURES, GainLaw, NoiseModel

RADIUS_TOL = 1e-6
RHO_MAX = 64.0
RHO_WIDTH = 0.25


class CertificateWarning(UserWarning):
    """The Monte Carlo certificate contradicts the leading-order margin."""


@dataclass(frozen=True, eq=False)
class SynthesisRequest:
    a: np.ndarray
    epsilon: float
    rho: float
    structure: str = "diagonal_scalar"
    kappa_budget: float = 1e-3

    def __post_init__(self):
        object.__setattr__(self, "a", as_matrix(self.a))
        if not self.rho > 2:
            raise ValidationError(f"rho must be > 2 (noise variance above twice the instability), got {self.rho}")
        if not 0 < self.epsilon < 0.5:
            raise ValidationError(f"epsilon must lie in (0, 0.5), got {self.epsilon}")
        if self.structure not in STRUCTURES:
            raise ValidationError(f"unknown structure {self.structure!r}")
        if not self.kappa_budget > 0:
            raise ValidationError("kappa_budget must be positive")

    def to_dict(self) -> dict:
        return {"A": matrix_to_dict(self.a), "epsilon": self.epsilon, "rho": self.rho,
                "structure": self.structure, "kappa_budget": self.kappa_budget}

    @classmethod
    def from_dict(cls, obj) -> "SynthesisRequest":
        try:
            return cls(matrix_from_dict(obj["A"]), float(obj["epsilon"]), float(obj["rho"]),
                       obj.get("structure", "diagonal_scalar"), float(obj.get("kappa_budget", 1e-3)))
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed synthesis request: {exc}") from None


@dataclass(eq=False)
class SynthesisResult:
    model: NoiseModel
    margin: MarginReport
    balancing: tuple[float, np.ndarray] | None
    certificate: str
    estimate: LyapunovEstimate
    samples: int
    seed: int

    def to_dict(self) -> dict:
        bal = None
        if self.balancing:
            bal = {"t": self.balancing[0], "balanced": matrix_to_dict(self.balancing[1])}
        return {"model": self.model.to_dict(), "margin": self.margin.to_dict(), "balancing": bal,
                "certificate": {"verdict": self.certificate, "estimate": self.estimate.to_dict(),
                                "samples": self.samples, "seed": self.seed}}


def _check_radius(a, epsilon):
    r = spectral_radius(a)
    if abs(r - (1.0 + epsilon)) > RADIUS_TOL:
        raise ValidationError(f"spectral radius of A is {r:.10g}, expected 1 + epsilon = {1.0 + epsilon:.10g}")


def build_model(structure: str, dim: int, epsilon: float, rho: float) -> NoiseModel:
    """Noise with diagonal variance ``rho * eps`` per coordinate (off-diagonals ``eps**2``)."""
    root = math.sqrt(rho)
    if structure == "diagonal_scalar":
        return NoiseModel.diagonal_scalar(dim, math.sqrt(rho * epsilon), epsilon,
                                          gain_law=GainLaw(root, 0.5))
    if structure == "symmetric_g":
        sigma = np.full((dim, dim), epsilon**2)
        np.fill_diagonal(sigma, math.sqrt(rho * epsilon))
        return NoiseModel.symmetric(sigma, epsilon, gain_law=GainLaw(root, 0.5),
                                    offdiag_law=GainLaw(1.0, 2.0))
    if dim > 2:
        raise ValidationError("planar_example noise exists only for dim 1 or 2")
    return NoiseModel.planar(epsilon, rho, dim=dim)


def _balanced(a, kappa_budget):
    dec = decompose_jordan_like(a)
    if not np.any(dec.upper):
        return a, 0.0, None
    t, bal = balance(dec, kappa_budget)
    return bal, operator_norm(bal - dec.block_diag), (t, bal)


def synthesize(req: SynthesisRequest, samples: int = 200_000, seed: int = 0,
               workers: int = 1) -> SynthesisResult:
    """Balance ``A``, build the requested noise, and certify it two ways.

    The leading-order margin must come out stabilising or a
    :class:`ValidationError` is raised. The Monte Carlo certificate is
    reported as is; a ``violated`` certificate only triggers a warning,
    since the leading-order argument can fail at finite eps.
    """
    _check_radius(req.a, req.epsilon)
    a_bal, kappa, balancing = _balanced(req.a, req.kappa_budget)
    model = build_model(req.structure, req.a.shape[0], req.epsilon, req.rho)
    margin = analytic_margin(model, req.epsilon, kappa)
    if margin.verdict != "stabilizing":
        half = margin.sigma_norm_sq / 2.0
        raise ValidationError(
            f"margin eps + kappa - |sigma|^2/2 = {margin.taylor_margin:.6g} is not negative: "
            f"the balancing residual kappa={kappa:.6g} exceeds |sigma|^2/2 - eps = {half - req.epsilon:.6g}"
        )
    cert: CriterionResult = check_stability_criterion(a_bal, model, samples, seed, workers=workers)
    if cert.verdict == "violated":
        warnings.warn(f"Monte Carlo certificate violated: E log||A+B|| = {cert.estimate.mean:.4g} "
                      f"+- {cert.estimate.std_error:.2g}", CertificateWarning, stacklevel=2)
    return SynthesisResult(model, margin, balancing, cert.verdict, cert.estimate, int(samples), int(seed))


def minimal_rho(a, epsilon: float, structure: str = "diagonal_scalar", samples: int = 200_000,
                seed: int = 0, kappa_budget: float | None = None, workers: int = 1) -> float:
    """Smallest noise gain in (2, 64] whose certificate is ``satisfied``, to width 0.25.

    The certificate need not be monotone in rho (for additive noise on a
    contracting coordinate large gains hurt), so the upper end of the bracket
    is the first certifying point of the scan 2.5, 3, 4, 6, 10, ... 64. The
    bracket is then bisected with common random numbers (the same seed at
    every trial gain) and its midpoint returned.
    """
    a = as_matrix(a)
    if not 0 < epsilon < 0.5:
        raise ValidationError(f"epsilon must lie in (0, 0.5), got {epsilon}")
    _check_radius(a, epsilon)
    a_bal, _, _ = _balanced(a, kappa_budget if kappa_budget is not None else epsilon / 10.0)

    def certified(rho):
        model = build_model(structure, a.shape[0], epsilon, rho)
        return check_stability_criterion(a_bal, model, samples, seed, workers=workers).verdict == "satisfied"

    lo, step = 2.0, 0.5
    while True:
        hi = min(2.0 + step, RHO_MAX)
        if certified(hi):
            break
        if hi >= RHO_MAX:
            raise ValidationError(f"no rho in (2, {RHO_MAX:g}] certifies; try a smaller epsilon or kappa budget")
        lo, step = hi, 2.0 * step
    while hi - lo > RHO_WIDTH:
        mid = 0.5 * (lo + hi)
        if certified(mid):
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)
