"""Command line entry point.

Exit codes: 0 success, 1 invalid input, 2 numerical failure, 3 I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .dynamics import MapSystem, simulate
from .errors import NonConvergenceError, StochStabError, ValidationError
from .experiments import ExperimentConfig, dump_json, run_example
from .linalg import matrix_from_dict
from .lyapunov import analytic_margin, per_step_log_norm_estimate, product_lyapunov_estimate
from .noise import NoiseModel, validate_moments
from .synth import SynthesisRequest, synthesize

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3


class ConfigIOError(OSError):
    pass


def _load(path) -> dict:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigIOError(f"cannot read config {str(p)!r}: {exc.strerror or exc}") from None
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config {str(p)!r} is not valid JSON: {exc}") from None
    if not isinstance(obj, dict):
        raise ValidationError(f"config {str(p)!r} must hold a JSON object")
    return obj


def _get(cfg, key, default=None, cast=None):
    val = cfg.get(key, default)
    if val is None:
        return None
    try:
        return cast(val) if cast else val
    except (TypeError, ValueError):
        raise ValidationError(f"config field {key!r} has invalid value {val!r}") from None


def _out(args, default):
    out = Path(args.out or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_simulate(args, cfg):
    system = MapSystem.from_dict(cfg.get("system", cfg))
    seed = args.seed if args.seed is not None else _get(cfg, "seed", 0, int)
    horizon = args.horizon or _get(cfg, "horizon", 10_000, int)
    x0 = _get(cfg, "x0")
    if x0 is None:
        raise ValidationError("simulate config needs 'x0'")
    traj = simulate(system, x0, horizon,
                    escape_radius=_get(cfg, "escape_radius", 0.1, float),
                    converge_threshold=_get(cfg, "converge_threshold", 1e-12, float),
                    seed=seed, retain_states=bool(cfg.get("retain_states", False)))
    out = _out(args, ".")
    traj.to_csv(out / "trajectory.csv")
    return (f"simulated {traj.steps} steps ({traj.stopped_reason}); "
            f"|x_0| = {traj.norms[0]:.6g}, |x_n| = {traj.norms[-1]:.6g} -> {out / 'trajectory.csv'}")


def cmd_lyapunov(args, cfg):
    try:
        a = matrix_from_dict(cfg["A"])
        model = NoiseModel.from_dict(cfg["noise"])
    except KeyError as exc:
        raise ValidationError(f"lyapunov config needs {exc}") from None
    seed = args.seed if args.seed is not None else _get(cfg, "seed", 0, int)
    kind = cfg.get("kind", "per_step_norm")
    results = {}
    if kind in ("per_step_norm", "both"):
        samples = args.trials or _get(cfg, "samples", 1_000_000, int)
        results["per_step_norm"] = per_step_log_norm_estimate(a, model, samples, seed, workers=args.workers)
    if kind in ("product_norm", "both"):
        horizon = args.horizon or _get(cfg, "horizon", 100_000, int)
        reps = args.trials or _get(cfg, "replicates", 10, int)
        results["product_norm"] = product_lyapunov_estimate(a, model, horizon, reps, seed, workers=args.workers)
    if not results:
        raise ValidationError(f"kind must be per_step_norm, product_norm or both, got {kind!r}")
    out = _out(args, ".")
    payload = {k: v.to_dict() for k, v in results.items()}
    dump_json(payload if len(payload) > 1 else next(iter(payload.values())), out / "lyapunov.json")
    return "\n".join(f"{k}: {v.mean:.6g} +- {v.std_error:.2g} ({v.samples} samples)"
                     for k, v in results.items())


def cmd_margin(args, cfg):
    try:
        eps = float(cfg["epsilon"])
    except (KeyError, TypeError, ValueError):
        raise ValidationError("margin config needs a numeric 'epsilon'") from None
    if not eps > 0:
        raise ValidationError(f"epsilon must be > 0 (weakly unstable regime), got {eps}")
    noise = dict(cfg["noise"]) if "noise" in cfg else None
    if noise is None:
        raise ValidationError("margin config needs 'noise'")
    noise.setdefault("epsilon", eps)
    model = NoiseModel.from_dict(noise)
    rep = analytic_margin(model, eps, _get(cfg, "kappa", 0.0, float))
    out = _out(args, ".")
    dump_json(rep.to_dict(), out / "margin.json")
    return f"margin = {rep.taylor_margin:.6g}, |sigma|^2/(2 eps) = {rep.halfsq_ratio:.6g}: {rep.verdict}"


def cmd_synth(args, cfg):
    req = SynthesisRequest.from_dict(cfg)
    seed = args.seed if args.seed is not None else _get(cfg, "seed", 0, int)
    samples = args.trials or _get(cfg, "samples", 200_000, int)
    res = synthesize(req, samples, seed, workers=args.workers)
    out = _out(args, ".")
    dump_json({"request": req.to_dict(), "result": res.to_dict()}, out / "synthesis.json")
    return (f"{res.model.structure}: margin {res.margin.taylor_margin:.6g} ({res.margin.verdict}); "
            f"certificate {res.certificate} (E log||A+B|| = {res.estimate.mean:.4g})")


def cmd_validate_noise(args, cfg):
    try:
        model = NoiseModel.from_dict(cfg["noise"])
        eps_seq = [float(e) for e in cfg["eps_sequence"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"validate-noise config needs 'noise' and 'eps_sequence': {exc}") from None
    val = validate_moments(model, eps_seq, _get(cfg, "K", None, float))
    out = _out(args, ".")
    dump_json(val.to_dict(), out / "moments.json")
    return "all moment conditions hold" if val.ok else f"violated: {', '.join(val.violations)}"


def cmd_example(args, cfg):
    cfg = dict(cfg)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.trials:
        cfg["trials"] = args.trials
    if args.horizon:
        cfg["horizon"] = args.horizon
    exp = ExperimentConfig.from_dict(cfg)
    out = Path(args.out or exp.output_dir or f"out/{exp.example_id}")
    rep = run_example(exp, out, workers=args.workers)
    return (f"{exp.example_id}: margin {rep['margin']['taylor_margin']:.6g}, "
            f"criterion {rep['criterion']}, product exponent {rep['product']['mean']:.5g}, "
            f"escape verdict {rep['stability']['verdict']} -> {out}")


COMMANDS = {
    "simulate": cmd_simulate,
    "lyapunov": cmd_lyapunov,
    "margin": cmd_margin,
    "synth": cmd_synth,
    "example": cmd_example,
    "validate-noise": cmd_validate_noise,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stochstab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory")
        p.add_argument("--trials", type=int)
        p.add_argument("--horizon", type=int)
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--quiet", action="store_true")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    try:
        cfg = _load(args.config)
        with np.errstate(all="ignore"):
            summary = COMMANDS[args.command](args, cfg)
    except (ValidationError, KeyError, TypeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (NonConvergenceError, StochStabError, FloatingPointError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    if not args.quiet:
        print(summary)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
