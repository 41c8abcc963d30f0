"""Random perturbation matrices and their moment conditions.

Three structures are supported:

``symmetric_g``
    ``B = A G`` with ``G`` symmetric and ``g_ij = sigma_ij * xi_ij``.
``diagonal_scalar``
    ``B = A G`` with ``G = diag(g, ..., g)`` and a single draw ``g = a * xi``.
``planar_example``
    additive noise ``B = s [[xi_11, eps xi_12], [eps xi_12, xi_22]]`` with
    ``s**2 = rho * eps``; in one dimension this reduces to ``B = s xi``.

All ``xi`` are independent, zero mean and unit variance, drawn from the
model's base family.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ValidationError
from .linalg import as_matrix

FAMILIES = ("gaussian", "uniform_symmetric", "rademacher")
STRUCTURES = ("symmetric_g", "diagonal_scalar", "planar_example")
TREND_TOL = 0.10

GAUSSIAN_ABS3 = 2.0 * math.sqrt(2.0 / math.pi)


def stream(seed: int, *key: int) -> np.random.Generator:
    """Counter-based generator for the substream ``key`` of ``seed``.

    Streams with the same ``(seed, key)`` replay identical draws; distinct
    keys give statistically independent streams.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class ScalarDistribution:
    """Zero-mean scalar law.

    ``scale`` is the standard deviation for ``gaussian``, the half-width for
    ``uniform_symmetric`` and the amplitude for ``rademacher``.
    """

    family: str = "gaussian"
    scale: float = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValidationError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        if not (math.isfinite(self.scale) and self.scale >= 0):
            raise ValidationError(f"scale must be finite and >= 0, got {self.scale}")

    @property
    def std(self) -> float:
        if self.family == "uniform_symmetric":
            return self.scale / math.sqrt(3.0)
        return self.scale

    @property
    def bound(self) -> float | None:
        """Almost-sure bound on ``|xi|``; ``None`` for unbounded families."""
        return None if self.family == "gaussian" else self.scale

    def unit(self) -> "ScalarDistribution":
        """The same family rescaled to unit variance."""
        return ScalarDistribution(self.family, math.sqrt(3.0) if self.family == "uniform_symmetric" else 1.0)

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        if self.family == "gaussian":
            return self.scale * rng.standard_normal(size)
        if self.family == "uniform_symmetric":
            return rng.uniform(-self.scale, self.scale, size)
        return self.scale * (2.0 * rng.integers(0, 2, size) - 1.0)


def gaussian(std: float = 1.0) -> ScalarDistribution:
    return ScalarDistribution("gaussian", std)


def uniform_symmetric(half_width: float) -> ScalarDistribution:
    return ScalarDistribution("uniform_symmetric", half_width)


def rademacher(scale: float = 1.0) -> ScalarDistribution:
    return ScalarDistribution("rademacher", scale)


def third_abs_moment(dist: ScalarDistribution) -> float:
    """Closed-form ``E|xi|^3``."""
    s = dist.scale
    if dist.family == "gaussian":
        return s**3 * GAUSSIAN_ABS3
    if dist.family == "uniform_symmetric":
        return s**3 / 4.0
    return s**3


@dataclass(frozen=True)
class GainLaw:
    """Power law ``coef * eps**exponent`` describing how a gain scales with eps."""

    coef: float
    exponent: float

    def __call__(self, eps: float) -> float:
        return self.coef * eps**self.exponent


@dataclass(frozen=True, eq=False)
class NoiseModel:
    """Law of the random matrix ``B(eps)``.

    Gains are stored as numbers valid at ``epsilon``. The optional laws tell
    :meth:`at` how to re-evaluate them at another eps: ``gain_law`` drives the
    diagonal gain (``diagonal_scalar``) or diagonal sigmas (``symmetric_g``),
    ``offdiag_law`` the off-diagonal sigmas of ``symmetric_g``.
    """

    dim: int
    structure: str
    epsilon: float
    base: str = "gaussian"
    gain: float = 0.0
    rho: float = 0.0
    sigma: np.ndarray | None = field(default=None, repr=False)
    gain_law: GainLaw | None = None
    offdiag_law: GainLaw | None = None

    def __post_init__(self):
        if self.structure not in STRUCTURES:
            raise ValidationError(f"unknown structure {self.structure!r}; expected one of {STRUCTURES}")
        if self.base not in FAMILIES:
            raise ValidationError(f"unknown base family {self.base!r}")
        if not (isinstance(self.dim, (int, np.integer)) and self.dim >= 1):
            raise ValidationError(f"dim must be a positive integer, got {self.dim!r}")
        if not (math.isfinite(self.epsilon) and self.epsilon > 0):
            raise ValidationError(f"epsilon must be positive, got {self.epsilon}")
        if self.structure == "symmetric_g":
            if self.sigma is None:
                raise ValidationError("symmetric_g needs a sigma matrix")
            s = as_matrix(self.sigma)
            if s.shape[0] != self.dim:
                raise ValidationError(f"sigma is {s.shape[0]}x{s.shape[0]} but dim={self.dim}")
            if not np.array_equal(s, s.T):
                raise ValidationError("sigma must be symmetric")
            if np.any(s < 0):
                raise ValidationError("sigma entries must be >= 0")
            if np.any(np.diag(s) <= 0):
                raise ValidationError("diagonal sigmas must be > 0 (non-degenerate entries)")
            object.__setattr__(self, "sigma", s.copy())
        elif self.structure == "diagonal_scalar":
            if not (math.isfinite(self.gain) and self.gain >= 0):
                raise ValidationError(f"gain must be >= 0, got {self.gain}")
        else:
            if self.dim not in (1, 2):
                raise ValidationError("planar_example is defined for dim 1 or 2")
            if not (math.isfinite(self.rho) and self.rho >= 0):
                raise ValidationError(f"rho must be >= 0, got {self.rho}")

    # -- constructors -------------------------------------------------------

    @classmethod
    def diagonal_scalar(cls, dim, gain, epsilon, base="gaussian", gain_law=None):
        return cls(dim, "diagonal_scalar", epsilon, base=base, gain=float(gain), gain_law=gain_law)

    @classmethod
    def planar(cls, epsilon, rho, dim=2, base="gaussian"):
        return cls(dim, "planar_example", epsilon, base=base, rho=float(rho))

    @classmethod
    def symmetric(cls, sigma, epsilon, base="gaussian", gain_law=None, offdiag_law=None):
        s = as_matrix(sigma)
        return cls(s.shape[0], "symmetric_g", epsilon, base=base, sigma=s,
                   gain_law=gain_law, offdiag_law=offdiag_law)

    # -- derived quantities -------------------------------------------------

    @property
    def planar_gain(self) -> float:
        return math.sqrt(self.rho * self.epsilon)

    @property
    def n_draws(self) -> int:
        """Unit draws consumed by one sample of the matrix."""
        if self.structure == "symmetric_g":
            return self.dim * (self.dim + 1) // 2
        if self.structure == "diagonal_scalar":
            return 1
        return 1 if self.dim == 1 else 3

    def entry_std(self) -> np.ndarray:
        """Standard deviations of the perturbation entries (of ``G``, or of ``B`` for planar)."""
        d = self.dim
        if self.structure == "symmetric_g":
            return self.sigma.copy()
        if self.structure == "diagonal_scalar":
            return self.gain * np.eye(d)
        s = self.planar_gain
        if d == 1:
            return np.array([[s]])
        return np.array([[s, s * self.epsilon], [s * self.epsilon, s]])

    def sigma_vec(self) -> np.ndarray:
        return np.diag(self.entry_std()).copy()

    def at(self, eps: float) -> "NoiseModel":
        """This model with its gains re-evaluated at ``eps``."""
        if self.structure == "diagonal_scalar":
            gain = self.gain_law(eps) if self.gain_law else self.gain
            return replace(self, epsilon=eps, gain=gain)
        if self.structure == "symmetric_g":
            s = self.sigma.copy()
            off = ~np.eye(self.dim, dtype=bool)
            if self.gain_law:
                np.fill_diagonal(s, self.gain_law(eps))
            if self.offdiag_law:
                s[off] = self.offdiag_law(eps)
            return replace(self, epsilon=eps, sigma=s)
        return replace(self, epsilon=eps)

    def silenced(self) -> "NoiseModel":
        """The same model with every gain forced to zero, i.e. ``B = 0``."""
        if self.structure == "diagonal_scalar":
            return replace(self, gain=0.0, gain_law=None)
        if self.structure == "planar_example":
            return replace(self, rho=0.0)
        # symmetric_g forbids zero diagonals; an all-zero diagonal model is the cleanest stand-in
        return NoiseModel.diagonal_scalar(self.dim, 0.0, self.epsilon, base=self.base)

    @property
    def is_silent(self) -> bool:
        return not np.any(self.entry_std())

    # -- sampling -----------------------------------------------------------

    def draw_unit(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """``n`` rows of unit-variance base draws, shape ``(n, n_draws)``."""
        return ScalarDistribution(self.base).unit().sample(rng, (n, self.n_draws))

    def build_g(self, xi: np.ndarray) -> np.ndarray:
        """Map unit draws of shape ``(..., n_draws)`` to ``G`` matrices ``(..., d, d)``."""
        xi = np.asarray(xi, dtype=np.float64)
        d = self.dim
        out = np.zeros(xi.shape[:-1] + (d, d))
        if self.structure == "diagonal_scalar":
            g = self.gain * xi[..., 0]
            idx = np.arange(d)
            out[..., idx, idx] = g[..., None]
            return out
        if self.structure == "symmetric_g":
            iu, ju = np.triu_indices(d)
            vals = self.sigma[iu, ju] * xi
            out[..., iu, ju] = vals
            out[..., ju, iu] = vals
            return out
        raise ValidationError("planar_example has no G factor; use build_b")

    def build_b(self, xi: np.ndarray, a) -> np.ndarray:
        """Map unit draws to perturbations ``B`` of shape ``(..., d, d)``."""
        if self.structure == "planar_example":
            xi = np.asarray(xi, dtype=np.float64)
            s = self.planar_gain
            if self.dim == 1:
                return s * xi[..., :1, None]
            out = np.empty(xi.shape[:-1] + (2, 2))
            out[..., 0, 0] = s * xi[..., 0]
            out[..., 1, 1] = s * xi[..., 1]
            off = s * self.epsilon * xi[..., 2]
            out[..., 0, 1] = off
            out[..., 1, 0] = off
            return out
        return left_multiply(np.asarray(a, dtype=np.float64), self.build_g(xi))

    # -- serialisation ------------------------------------------------------

    def to_dict(self) -> dict:
        out = {"dim": int(self.dim), "structure": self.structure, "base": self.base,
               "epsilon": float(self.epsilon)}
        if self.structure == "planar_example":
            out["rho"] = float(self.rho)
        elif self.structure == "diagonal_scalar":
            out["gain"] = float(self.gain)
        else:
            out["sigma"] = self.sigma.tolist()
        if self.gain_law:
            out["gain_law"] = {"coef": self.gain_law.coef, "exponent": self.gain_law.exponent}
        if self.offdiag_law:
            out["offdiag_law"] = {"coef": self.offdiag_law.coef, "exponent": self.offdiag_law.exponent}
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "NoiseModel":
        if not isinstance(obj, dict):
            raise ValidationError("noise model JSON must be an object")
        try:
            laws = {k: GainLaw(float(obj[k]["coef"]), float(obj[k]["exponent"]))
                    for k in ("gain_law", "offdiag_law") if obj.get(k)}
            kw = dict(base=obj.get("base", "gaussian"), **laws)
            structure = obj["structure"]
            eps = float(obj["epsilon"])
            if structure == "planar_example":
                return cls(int(obj.get("dim", 2)), structure, eps, rho=float(obj["rho"]), **kw)
            if structure == "diagonal_scalar":
                return cls(int(obj["dim"]), structure, eps, gain=float(obj["gain"]), **kw)
            if structure == "symmetric_g":
                s = as_matrix(obj["sigma"])
                return cls(int(obj.get("dim", s.shape[0])), structure, eps, sigma=s, **kw)
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed noise model JSON: missing/invalid {exc}") from None
        raise ValidationError(f"unknown structure {obj.get('structure')!r}")


def left_multiply(a: np.ndarray, g: np.ndarray) -> np.ndarray:
    """``a @ g`` for a stack ``g``, summed in a fixed order.

    Elementwise accumulation keeps every row's result independent of how many
    matrices share the batch, which BLAS-backed ``matmul`` does not promise.
    """
    out = np.zeros(np.broadcast_shapes(a.shape, g.shape))
    for k in range(a.shape[-1]):
        out += a[:, k, None] * g[..., k, None, :]
    return out


def sample_G(model: NoiseModel, rng: np.random.Generator) -> np.ndarray:
    """One draw of the symmetric (or scalar-diagonal) factor ``G``."""
    if model.structure == "planar_example":
        raise ValidationError("sample_G needs a symmetric_g or diagonal_scalar model")
    return model.build_g(model.draw_unit(rng, 1))[0]


def sample_B(model: NoiseModel, a, rng: np.random.Generator) -> np.ndarray:
    """One draw of ``B``: ``A @ G`` for the G-based structures, eq.-style additive otherwise."""
    a = as_matrix(a)
    if a.shape[0] != model.dim:
        raise ValidationError(f"A is {a.shape[0]}x{a.shape[0]} but the noise model has dim={model.dim}")
    return model.build_b(model.draw_unit(rng, 1), a)[0]


# -- moment conditions ------------------------------------------------------


@dataclass(frozen=True)
class MomentReport:
    epsilon: float
    sigma_vec: tuple[float, ...]
    sigma_norm_sq: float
    third_moment_ratio: float
    offdiag_ratio: float

    def to_dict(self) -> dict:
        return {"epsilon": self.epsilon, "sigma_vec": list(self.sigma_vec),
                "sigma_norm_sq": self.sigma_norm_sq,
                "third_moment_ratios": self.third_moment_ratio,
                "offdiag_ratios": self.offdiag_ratio}


@dataclass(frozen=True)
class MomentValidation:
    reports: tuple[MomentReport, ...]
    vanishing_sigma: bool
    offdiag_negligible: bool
    third_moment_bounded: bool
    K: float | None

    @property
    def violations(self) -> list[str]:
        names = {"vanishing_sigma": self.vanishing_sigma,
                 "offdiag_negligible": self.offdiag_negligible,
                 "third_moment_bounded": self.third_moment_bounded}
        return [k for k, ok in names.items() if not ok]

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {"reports": [r.to_dict() for r in self.reports],
                "vanishing_sigma": self.vanishing_sigma,
                "offdiag_negligible": self.offdiag_negligible,
                "third_moment_bounded": self.third_moment_bounded,
                "K": self.K, "violations": self.violations, "ok": self.ok}


def moment_report(model: NoiseModel) -> MomentReport:
    s = model.entry_std()
    diag = np.diag(s)
    unit_abs3 = third_abs_moment(ScalarDistribution(model.base).unit())
    # (E|sigma xi|^3)^(1/3) / sigma does not depend on sigma
    third = unit_abs3 ** (1.0 / 3.0) if np.any(s > 0) else 0.0
    d = model.dim
    off = 0.0
    for i in range(d):
        for j in range(d):
            if i != j and s[i, j] > 0:
                off = max(off, s[i, j] / diag[i] ** 2 if diag[i] > 0 else math.inf)
    return MomentReport(
        epsilon=float(model.epsilon),
        sigma_vec=tuple(float(v) for v in diag),
        sigma_norm_sq=float(np.sum(diag**2)),
        third_moment_ratio=float(third),
        offdiag_ratio=float(off),
    )


def _tends_to_zero(values, tol=TREND_TOL) -> bool:
    v = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        return False
    if np.all(v == 0):
        return True
    steps_ok = np.all(v[1:] <= (1.0 + tol) * v[:-1])
    return bool(steps_ok and v[-1] < (1.0 - tol) * v[0])


def validate_moments(model: NoiseModel, eps_sequence, K: float | None = None) -> MomentValidation:
    """Check the vanishing-variance, diagonal-dominance and third-moment conditions.

    Limits cannot be checked on a computer, so each is replaced by a trend
    along ``eps_sequence`` (strictly decreasing, at least three values): a
    quantity "tends to zero" if it never grows by more than 10% between
    consecutive points and ends at least 10% below its first value. With
    ``K`` given, the third-moment ratio must stay below it; otherwise it
    must not grow by more than 10% along the sequence.
    """
    eps = [float(e) for e in eps_sequence]
    if len(eps) < 3:
        raise ValidationError("eps_sequence needs at least three values")
    if any(e <= 0 for e in eps) or any(b >= a for a, b in zip(eps, eps[1:])):
        raise ValidationError("eps_sequence must be positive and strictly decreasing")
    reports = tuple(moment_report(model.at(e)) for e in eps)
    norms = [math.sqrt(r.sigma_norm_sq) for r in reports]
    ratios = [r.third_moment_ratio for r in reports]
    if K is None:
        third_ok = all(math.isfinite(r) for r in ratios) and max(ratios) <= (1.0 + TREND_TOL) * ratios[0]
    else:
        third_ok = all(r <= K for r in ratios)
    return MomentValidation(
        reports=reports,
        vanishing_sigma=_tends_to_zero(norms),
        offdiag_negligible=_tends_to_zero([r.offdiag_ratio for r in reports]),
        third_moment_bounded=bool(third_ok),
        K=K,
    )
