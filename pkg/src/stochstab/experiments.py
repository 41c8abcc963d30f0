"""Reproduce the four reference examples and write figure-ready bundles.

A bundle is a directory holding ``noisy.csv``, ``deterministic.csv``,
``report.json`` and ``manifest.json``. The manifest lists every parameter of
the run and can be fed back as a config to regenerate the same bundle.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .dynamics import (KEY_TERMINAL, MapSystem, deterministic_comparison, escape_probability,
                       fit_decay_envelope, run_trials)
from .errors import ValidationError
from .linalg import balance, decompose_jordan_like, operator_norm
from .lyapunov import (analytic_margin, check_stability_criterion, criterion_verdict,
                       product_lyapunov_estimate)
from .noise import NoiseModel

EXAMPLE_IDS = ("ex1d_1", "ex1d_2", "ex2d_1", "ex2d_2a", "ex2d_2b", "custom")

# parameters from the figure captions
EXAMPLE_PARAMS = {
    "ex1d_1": (0.005, 4.0),
    "ex1d_2": (0.05, 3.0),
    "ex2d_1": (0.01, 5.0),
    "ex2d_2a": (0.01, 5.0),
    "ex2d_2b": (0.01, 10.0),
}
JORDAN_COUPLING = 0.1
TERMINAL_THRESHOLD = 1e-6
TRAJECTORY_ESCAPE = 1e300


def build_system(example_id: str, epsilon: float, rho: float) -> MapSystem:
    lam = 1.0 + epsilon
    if example_id == "ex1d_1":
        return MapSystem(np.array([[lam]]), NoiseModel.planar(epsilon, rho, dim=1))
    if example_id == "ex1d_2":
        return MapSystem.logistic(lam, NoiseModel.planar(epsilon, rho, dim=1))
    if example_id == "ex2d_1":
        return MapSystem(np.diag([lam, 0.5]), NoiseModel.planar(epsilon, rho))
    if example_id in ("ex2d_2a", "ex2d_2b"):
        return MapSystem(np.array([[lam, JORDAN_COUPLING], [0.0, lam]]), NoiseModel.planar(epsilon, rho))
    raise ValidationError(f"unknown example {example_id!r}")


@dataclass
class ExperimentConfig:
    example_id: str
    epsilon: float | None = None
    rho: float | None = None
    horizon: int = 10_000
    trials: int = 1000
    seed: int = 0
    x0: list[float] | None = None
    radii: list[float] = field(default_factory=lambda: [1e-2, 1e-3, 1e-4])
    eps_ball: float = 0.1
    samples: int = 200_000
    product_horizon: int = 100_000
    replicates: int = 10
    kappa: float = 0.01
    system: dict | None = None
    output_dir: str | None = None

    def __post_init__(self):
        if self.example_id not in EXAMPLE_IDS:
            raise ValidationError(f"example_id must be one of {EXAMPLE_IDS}, got {self.example_id!r}")
        if self.example_id == "custom":
            if self.system is None:
                raise ValidationError("custom experiments need a 'system' entry")
            sys = MapSystem.from_dict(self.system)
            self.system = sys.to_dict()
            if self.epsilon is None:
                self.epsilon = float(sys.noise.epsilon)
        else:
            eps, rho = EXAMPLE_PARAMS[self.example_id]
            self.epsilon = eps if self.epsilon is None else float(self.epsilon)
            self.rho = rho if self.rho is None else float(self.rho)
        if not self.epsilon > 0:
            raise ValidationError(f"epsilon must be > 0, got {self.epsilon}")
        if self.x0 is None:
            d = self.build().dim
            first = 0.3 if self.example_id == "ex1d_2" else 1e-3
            self.x0 = [first] + [0.0] * (d - 1)
        self.x0 = [float(v) for v in self.x0]
        self.radii = [float(r) for r in self.radii]
        for name in ("horizon", "trials", "seed", "samples", "product_horizon", "replicates"):
            setattr(self, name, int(getattr(self, name)))

    def build(self) -> MapSystem:
        if self.example_id == "custom":
            return MapSystem.from_dict(self.system)
        return build_system(self.example_id, self.epsilon, self.rho)

    def to_dict(self, with_output=False) -> dict:
        out = asdict(self)
        if not with_output:
            out.pop("output_dir")
        if self.example_id != "custom":
            out.pop("system")
        return out

    @classmethod
    def from_dict(cls, obj) -> "ExperimentConfig":
        if not isinstance(obj, dict):
            raise ValidationError("experiment config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known - {"tool_version"}
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        if "example_id" not in obj:
            raise ValidationError("experiment config needs 'example_id'")
        return cls(**{k: v for k, v in obj.items() if k in known})


def dump_json(obj, path) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"
    Path(path).write_text(text, encoding="utf-8")


def _finite(x):
    x = float(x)
    return x if np.isfinite(x) else None


def _fit_summary(traj):
    burn = traj.norms.size // 10
    norms = traj.norms
    if norms.size - burn < 100 or np.any(norms[burn:] <= 0) or not np.all(np.isfinite(norms)):
        return None
    fit = fit_decay_envelope(norms, burn)
    return {"mu_hat": fit.mu_hat, "eta_hat": fit.eta_hat, "log_slope": fit.log_slope,
            "slope_std_error": fit.slope_std_error, "burn_in": fit.burn_in}


def run_example(cfg: ExperimentConfig, out_dir, workers: int = 1) -> dict:
    """Run every analysis for one example and write the four bundle files."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sys = cfg.build()
    model = sys.noise
    eps = cfg.epsilon

    noisy, quiet = deterministic_comparison(sys, cfg.x0, cfg.horizon, seed=cfg.seed,
                                            escape_radius=TRAJECTORY_ESCAPE, converge_threshold=0.0,
                                            retain_states=True)
    noisy.to_csv(out / "noisy.csv")
    quiet.to_csv(out / "deterministic.csv")

    stab = escape_probability(sys, cfg.radii, cfg.trials, cfg.horizon, cfg.eps_ball,
                              seed=cfg.seed, workers=workers)
    term = run_trials(sys, cfg.x0, cfg.trials, cfg.horizon, cfg.seed, key_prefix=(KEY_TERMINAL,),
                      workers=workers)
    frac = float(np.count_nonzero(term.final_norm < TERMINAL_THRESHOLD)) / cfg.trials

    dec = decompose_jordan_like(sys.a)
    balancing = None
    a_bal, kappa = sys.a, 0.0
    if np.any(dec.upper):
        t, a_bal = balance(dec, cfg.kappa)
        kappa = operator_norm(a_bal - dec.block_diag)
        balancing = {"t": t, "kappa": kappa, "budget": cfg.kappa}

    crit = check_stability_criterion(a_bal, model, cfg.samples, cfg.seed, workers=workers)
    prod = product_lyapunov_estimate(sys.a, model, cfg.product_horizon, cfg.replicates, cfg.seed,
                                     workers=workers)
    margin = analytic_margin(model, eps, kappa)

    report = {
        "example_id": cfg.example_id,
        "margin": margin.to_dict(),
        "balancing": balancing,
        "per_step": crit.estimate.to_dict(),
        "criterion": crit.verdict,
        "product": prod.to_dict(),
        "product_verdict": criterion_verdict(prod),
        "stability": stab.to_dict(),
        "terminal": {"threshold": TERMINAL_THRESHOLD, "horizon": cfg.horizon, "trials": cfg.trials,
                     "fraction_converged": frac, "majority_converged": frac > 0.5},
        "trajectories": {
            "noisy": {"final_norm": _finite(noisy.norms[-1]), "initial_norm": float(noisy.norms[0]),
                      "overflow": noisy.overflow, "fit": _fit_summary(noisy)},
            "deterministic": {"final_norm": _finite(quiet.norms[-1]), "initial_norm": float(quiet.norms[0]),
                              "overflow": quiet.overflow, "fit": _fit_summary(quiet)},
        },
    }
    manifest = dict(cfg.to_dict(), tool_version=__version__)
    dump_json(report, out / "report.json")
    dump_json(manifest, out / "manifest.json")
    return report
