"""Trajectories of ``x_{n+1} = (A + B_n) x_n + q(x_n)`` and what can be read off them."""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .linalg import as_matrix, matrix_from_dict, matrix_to_dict, operator_norm
from .noise import NoiseModel, stream

STEP_CHUNK = 256
DEFAULT_ESCAPE_RADIUS = 0.1
DEFAULT_CONVERGE_THRESHOLD = 1e-12
DEFAULT_HORIZON = 10_000

# stream key prefixes, so the different experiments never share draws
KEY_SIMULATE = 0
KEY_ESCAPE = 1
KEY_TERMINAL = 2


@dataclass(frozen=True)
class Logistic:
    """Scalar logistic map ``lam * x * (1 - x)``, i.e. ``A = (lam)`` and ``q(x) = -lam x^2``."""

    lam: float

    def q(self, x):
        return -self.lam * x[:, 0:1] * x[:, 0:1]

    @property
    def c1(self) -> float:
        return abs(self.lam)

    def to_dict(self):
        return {"kind": "logistic", "lambda": self.lam}


@dataclass(frozen=True, eq=False)
class QuadraticForms:
    """``q_i(x) = sum_jk Q[i, j, k] x_j x_k``."""

    coefficients: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coefficients, dtype=np.float64)
        d = c.shape[0]
        if c.shape != (d, d, d) or not np.all(np.isfinite(c)):
            raise ValidationError(f"quadratic coefficients must be a finite (d, d, d) array, got {c.shape}")
        object.__setattr__(self, "coefficients", c)

    def q(self, x):
        c = self.coefficients
        d = c.shape[0]
        out = np.zeros_like(x)
        for i in range(d):
            for j in range(d):
                for k in range(d):
                    if c[i, j, k] != 0.0:
                        out[:, i] += c[i, j, k] * x[:, j] * x[:, k]
        return out

    @property
    def c1(self) -> float:
        """Constant with ``|q(x)| <= c1 |x|^2`` for every ``x``."""
        return math.sqrt(sum(operator_norm(qi) ** 2 for qi in self.coefficients))

    def to_dict(self):
        return {"kind": "quadratic_custom", "coefficients": self.coefficients.tolist()}


@dataclass(frozen=True, eq=False)
class MapSystem:
    a: np.ndarray
    noise: NoiseModel
    nonlinearity: Logistic | QuadraticForms | None = None

    def __post_init__(self):
        a = as_matrix(self.a)
        object.__setattr__(self, "a", a)
        if a.shape[0] != self.noise.dim:
            raise ValidationError(f"A has dim {a.shape[0]} but the noise model has dim {self.noise.dim}")
        nl = self.nonlinearity
        if isinstance(nl, Logistic):
            if a.shape != (1, 1) or a[0, 0] != nl.lam:
                raise ValidationError("logistic map needs d = 1 and A = (lambda)")
        elif isinstance(nl, QuadraticForms):
            if nl.coefficients.shape[0] != a.shape[0]:
                raise ValidationError("quadratic coefficients do not match dim")

    @property
    def dim(self) -> int:
        return self.a.shape[0]

    @classmethod
    def logistic(cls, lam: float, noise: NoiseModel) -> "MapSystem":
        return cls(np.array([[lam]]), noise, Logistic(float(lam)))

    def silenced(self) -> "MapSystem":
        return MapSystem(self.a, self.noise.silenced(), self.nonlinearity)

    def to_dict(self) -> dict:
        nl = {"kind": "none"} if self.nonlinearity is None else self.nonlinearity.to_dict()
        return {"A": matrix_to_dict(self.a), "noise": self.noise.to_dict(), "nonlinearity": nl}

    @classmethod
    def from_dict(cls, obj) -> "MapSystem":
        try:
            a = matrix_from_dict(obj["A"])
            noise = NoiseModel.from_dict(obj["noise"])
            nl = obj.get("nonlinearity") or {"kind": "none"}
            kind = nl.get("kind", "none")
        except (KeyError, TypeError, AttributeError) as exc:
            raise ValidationError(f"malformed system JSON: {exc}") from None
        if kind == "none":
            return cls(a, noise)
        if kind == "logistic":
            return cls(a, noise, Logistic(float(nl["lambda"])))
        if kind == "quadratic_custom":
            return cls(a, noise, QuadraticForms(np.asarray(nl["coefficients"], dtype=float)))
        raise ValidationError(f"unknown nonlinearity {kind!r}")


@dataclass(eq=False)
class Trajectory:
    norms: np.ndarray
    seed: int
    stopped_reason: str  # "horizon", "escaped" or "converged"
    states: np.ndarray | None = field(default=None, repr=False)
    overflow: bool = False

    @property
    def steps(self) -> int:
        return self.norms.size - 1

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            if self.states is None:
                w.writerow(["n", "norm"])
                for n, r in enumerate(self.norms):
                    w.writerow([n, repr(float(r))])
            else:
                d = self.states.shape[1]
                w.writerow(["n", *(f"x{i + 1}" for i in range(d)), "norm"])
                for n, (x, r) in enumerate(zip(self.states, self.norms)):
                    w.writerow([n, *(repr(float(v)) for v in x), repr(float(r))])


@dataclass
class _Batch:
    final: np.ndarray  # (R, d)
    final_norm: np.ndarray
    stop_step: np.ndarray  # step at which the row stopped (horizon if it never did)
    escaped: np.ndarray
    converged: np.ndarray
    overflow: np.ndarray
    norms: np.ndarray | None  # (n_record, horizon + 1), NaN after the stop
    states: np.ndarray | None


def _row_norm(x):
    if x.shape[1] == 1:
        return np.abs(x[:, 0])
    s = x[:, 0] * x[:, 0]
    for j in range(1, x.shape[1]):
        s = s + x[:, j] * x[:, j]
    return np.sqrt(s)


def _run_batch(sys: MapSystem, x0: np.ndarray, horizon: int, keys, seed: int,
               escape_radius: float, converge_threshold: float,
               n_record: int = 0, keep_states: bool = False) -> _Batch:
    """Advance every row of ``x0`` with its own noise stream.

    All arithmetic is elementwise per row, so a row's trajectory does not
    depend on which other rows share the batch.
    """
    x = np.array(x0, dtype=np.float64)
    rows, d = x.shape
    gens = [stream(seed, *k) for k in keys]
    a = sys.a
    model = sys.noise
    silent = model.is_silent
    nl = sys.nonlinearity

    active = np.ones(rows, dtype=bool)
    stop = np.full(rows, horizon)
    escaped = np.zeros(rows, dtype=bool)
    converged = np.zeros(rows, dtype=bool)
    overflow = np.zeros(rows, dtype=bool)
    norm = _row_norm(x)
    rec = np.full((n_record, horizon + 1), np.nan) if n_record else None
    st = np.full((n_record, horizon + 1, d), np.nan) if keep_states and n_record else None
    if n_record:
        rec[:, 0] = norm[:n_record]
        if st is not None:
            st[:, 0] = x[:n_record]

    n = 0
    with np.errstate(over="ignore", invalid="ignore"):
        while n < horizon and active.any():
            chunk = min(STEP_CHUNK, horizon - n)
            if silent:
                m = np.broadcast_to(a, (rows, chunk, d, d))
            else:
                xi = np.stack([model.draw_unit(g, chunk) for g in gens])
                m = a + model.build_b(xi, a)
            for t in range(chunk):
                mt = m[:, t]
                new = mt[:, :, 0] * x[:, 0:1]
                for j in range(1, d):
                    new = new + mt[:, :, j] * x[:, j:j + 1]
                if nl is not None:
                    new = new + nl.q(x)
                x = np.where(active[:, None], new, x)
                n += 1
                norm = np.where(active, _row_norm(x), norm)
                bad = active & ~np.isfinite(norm)
                esc = active & (bad | (norm > escape_radius))
                conv = active & ~esc & (norm < converge_threshold)
                overflow |= bad
                escaped |= esc
                converged |= conv
                stopped = esc | conv
                stop[stopped] = n
                if n_record:
                    live = active[:n_record]
                    rec[live, n] = norm[:n_record][live]
                    if st is not None:
                        st[live, n] = x[:n_record][live]
                active &= ~stopped
                if not active.any():
                    break
    return _Batch(x, norm, stop, escaped, converged, overflow, rec, st)


def _check_x0(sys, x0):
    x0 = np.atleast_1d(np.asarray(x0, dtype=np.float64))
    if x0.shape != (sys.dim,) or not np.all(np.isfinite(x0)):
        raise ValidationError(f"x0 must be a finite vector of length {sys.dim}")
    return x0


def simulate(sys: MapSystem, x0, horizon: int = DEFAULT_HORIZON,
             escape_radius: float = DEFAULT_ESCAPE_RADIUS,
             converge_threshold: float = DEFAULT_CONVERGE_THRESHOLD,
             seed: int = 0, retain_states: bool = False) -> Trajectory:
    """Iterate the map from ``x0`` until the horizon, escape or convergence.

    ``converge_threshold = 0`` disables the convergence stop. Values that
    overflow binary64 count as escaped and set ``overflow``.
    """
    x0 = _check_x0(sys, x0)
    r0 = float(np.linalg.norm(x0))
    if horizon < 1:
        raise ValidationError("horizon must be >= 1")
    if not escape_radius > r0:
        raise ValidationError(f"escape_radius={escape_radius} must exceed |x0|={r0}")
    if converge_threshold < 0 or (converge_threshold > 0 and not converge_threshold < r0):
        raise ValidationError("converge_threshold must be 0 or below |x0|")
    b = _run_batch(sys, x0[None, :], horizon, [(KEY_SIMULATE,)], seed,
                   escape_radius, converge_threshold, n_record=1, keep_states=retain_states)
    last = int(b.stop_step[0])
    reason = "escaped" if b.escaped[0] else "converged" if b.converged[0] else "horizon"
    states = b.states[0, :last + 1].copy() if retain_states else None
    return Trajectory(b.norms[0, :last + 1].copy(), int(seed), reason, states, bool(b.overflow[0]))


def deterministic_comparison(sys: MapSystem, x0, horizon: int = DEFAULT_HORIZON, seed: int = 0,
                             **kwargs) -> tuple[Trajectory, Trajectory]:
    """The noisy trajectory and its noise-free counterpart from the same start."""
    noisy = simulate(sys, x0, horizon, seed=seed, **kwargs)
    quiet = simulate(sys.silenced(), x0, horizon, seed=seed, **kwargs)
    return noisy, quiet


def _split(n, workers):
    workers = max(1, min(int(workers or 1), n))
    edges = np.linspace(0, n, workers + 1).astype(int)
    return [(int(lo), int(hi)) for lo, hi in zip(edges, edges[1:]) if hi > lo]


def run_trials(sys: MapSystem, x0, trials: int, horizon: int, seed: int, key_prefix=(KEY_TERMINAL,),
               escape_radius: float = math.inf, converge_threshold: float = 0.0,
               workers: int = 1) -> _Batch:
    """Run ``trials`` independent copies from the same ``x0``; trial ``i`` uses key ``prefix + (i,)``."""
    x0 = _check_x0(sys, x0)

    def part(bounds):
        lo, hi = bounds
        return _run_batch(sys, np.tile(x0, (hi - lo, 1)), horizon,
                          [(*key_prefix, i) for i in range(lo, hi)], seed,
                          escape_radius, converge_threshold)

    parts = _pmap(part, _split(trials, workers), workers)
    cat = lambda name: np.concatenate([getattr(p, name) for p in parts])  # noqa: E731
    return _Batch(cat("final"), cat("final_norm"), cat("stop_step"), cat("escaped"),
                  cat("converged"), cat("overflow"), None, None)


def _pmap(fn, items, workers):
    if workers is None or workers <= 1 or len(items) <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


@dataclass(frozen=True)
class StabilityReport:
    radii: tuple[float, ...]
    escape_probs: tuple[float, ...]
    std_errors: tuple[float, ...]
    decay_rate_fit: float | None
    verdict: str
    seed: int
    horizon: int
    eps_ball: float
    trials: int

    def to_dict(self) -> dict:
        return {"radii": list(self.radii), "escape_probs": list(self.escape_probs),
                "std_errors": list(self.std_errors), "decay_rate_fit": self.decay_rate_fit,
                "verdict": self.verdict, "seed": self.seed, "horizon": self.horizon,
                "eps_ball": self.eps_ball, "trials": self.trials}


def escape_verdict(probs, ses, small_threshold=0.05) -> str:
    """``stable_in_probability_evidence`` if escape odds do not grow as the
    radius shrinks (within 2 joint standard errors) and end below 5%;
    ``unstable_evidence`` if the smallest radius still escapes more often
    than not (by 2 standard errors)."""
    p = np.asarray(probs)
    s = np.asarray(ses)
    joint = 2.0 * np.hypot(s[1:], s[:-1])
    monotone = bool(np.all(p[1:] <= p[:-1] + joint))
    if monotone and p[-1] < small_threshold:
        return "stable_in_probability_evidence"
    if p[-1] - 2.0 * s[-1] > 0.5:
        return "unstable_evidence"
    return "inconclusive"


def escape_probability(sys: MapSystem, radius_grid, trials: int = 1000,
                       horizon: int = DEFAULT_HORIZON, eps_ball: float = DEFAULT_ESCAPE_RADIUS,
                       seed: int = 0, direction=None,
                       converge_threshold: float = DEFAULT_CONVERGE_THRESHOLD,
                       fit_trials: int = 16, workers: int = 1) -> StabilityReport:
    """Estimate ``P(max_{n <= horizon} |x_n| > eps_ball)`` for each start radius.

    Trials start at ``r * direction`` (first axis by default). The decay-rate
    fit averages the fitted log-slope of the first ``fit_trials`` surviving
    trajectories at the smallest radius.
    """
    radii = [float(r) for r in radius_grid]
    if trials < 100:
        raise ValidationError("trials must be >= 100")
    if not radii or any(b >= a for a, b in zip(radii, radii[1:])):
        raise ValidationError("radius_grid must be strictly decreasing")
    if any(r <= 0 or r >= eps_ball for r in radii):
        raise ValidationError("radii must lie in (0, eps_ball)")
    if converge_threshold >= radii[-1]:
        raise ValidationError("converge_threshold must be below the smallest radius")
    u = np.zeros(sys.dim)
    u[0] = 1.0
    if direction is not None:
        u = np.asarray(direction, dtype=np.float64)
        if u.shape != (sys.dim,) or not np.linalg.norm(u) > 0:
            raise ValidationError("direction must be a nonzero vector of length dim")
        u = u / np.linalg.norm(u)

    probs, ses = [], []
    for k, r in enumerate(radii):
        b = run_trials(sys, r * u, trials, horizon, seed, key_prefix=(KEY_ESCAPE, k),
                       escape_radius=eps_ball, converge_threshold=converge_threshold,
                       workers=workers)
        p = float(np.count_nonzero(b.escaped)) / trials
        probs.append(p)
        ses.append(math.sqrt(p * (1.0 - p) / trials))

    k = len(radii) - 1
    n_fit = min(fit_trials, trials)
    fb = _run_batch(sys, np.tile(radii[-1] * u, (n_fit, 1)), horizon,
                    [(KEY_ESCAPE, k, i) for i in range(n_fit)], seed,
                    eps_ball, converge_threshold, n_record=n_fit)
    slopes = []
    for i in range(n_fit):
        if fb.escaped[i]:
            continue
        norms = fb.norms[i, :int(fb.stop_step[i]) + 1]
        burn = norms.size // 10
        if norms.size - burn >= 100 and np.all(norms[burn:] > 0):
            slopes.append(fit_decay_envelope(norms, burn).log_slope)
    decay = math.fsum(slopes) / len(slopes) if slopes else None
    return StabilityReport(tuple(radii), tuple(probs), tuple(ses), decay,
                           escape_verdict(probs, ses), int(seed), int(horizon),
                           float(eps_ball), int(trials))


@dataclass(frozen=True)
class DecayEnvelope:
    """Fitted ``|x_n| <= eta * mu**n``; ``slope_std_error`` is the error of ``log(mu)``."""

    mu_hat: float
    eta_hat: float
    log_slope: float
    slope_std_error: float
    burn_in: int


def fit_decay_envelope(traj, burn_in: int) -> DecayEnvelope:
    """Least-squares line through ``(n, log|x_n|)`` for ``n >= burn_in``.

    ``eta_hat`` is then raised until ``eta_hat * mu_hat**n`` dominates every
    recorded norm, burn-in included. The slope error treats ``log|x_n|`` as a
    random walk (independent increments), which is what a product of i.i.d.
    random factors produces; plain OLS residual errors would understate it.
    """
    norms = np.asarray(traj.norms if isinstance(traj, Trajectory) else traj, dtype=np.float64)
    burn_in = int(burn_in)
    if burn_in < 0 or norms.size < burn_in + 100:
        raise ValidationError(f"need at least burn_in + 100 = {burn_in + 100} norms, got {norms.size}")
    if np.all(norms == 0):
        raise ValidationError("all norms are zero")
    tail = norms[burn_in:]
    if np.any(tail <= 0):
        raise ValidationError("norms after burn-in must be positive")
    n = np.arange(burn_in, norms.size, dtype=np.float64)
    y = np.log(tail)
    nc = n - n.mean()
    sxx = float(nc @ nc)
    w = nc / sxx
    slope = float(w @ (y - y.mean()))
    intercept = float(y.mean() - slope * n.mean())

    # slope = sum_m W_m * dy_m with W_m the tail sums of the OLS weights
    dy = np.diff(y)
    tails = np.cumsum(w[::-1])[::-1][1:]
    var_dy = float(np.var(dy, ddof=1)) if dy.size > 1 else 0.0
    se = math.sqrt(var_dy * float(tails @ tails))

    mu = math.exp(slope)
    allidx = np.arange(norms.size, dtype=np.float64)
    pos = norms > 0
    need = float(np.max(np.log(norms[pos]) - allidx[pos] * slope))
    eta = max(math.exp(intercept), math.exp(need))
    env = mu ** allidx
    while True:
        over = norms / (eta * env)
        worst = float(np.max(over))
        if worst <= 1.0:
            break
        eta = np.nextafter(eta * worst, math.inf)
    return DecayEnvelope(mu, float(eta), slope, se, burn_in)


def gronwall_bound(b_const: float, mu_seq) -> list[float]:
    """``B * exp(mu_1 + ... + mu_k)`` for ``k = 1 .. len(mu_seq)``."""
    mu = np.asarray(mu_seq, dtype=np.float64)
    if b_const < 0 or np.any(mu < 0) or not np.all(np.isfinite(mu)):
        raise ValidationError("gronwall_bound needs B >= 0 and finite mu_j >= 0")
    return [float(b_const) * math.exp(s) for s in np.cumsum(mu)]
