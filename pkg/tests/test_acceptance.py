"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v`` or directly as a script.
"""

import math
import sys
import tempfile
import time
from pathlib import Path

import numpy as np
import pytest

from stochstab.dynamics import (KEY_TERMINAL, MapSystem, deterministic_comparison, fit_decay_envelope,
                                gronwall_bound, run_trials, simulate)
from stochstab.experiments import ExperimentConfig, build_system, run_example
from stochstab.linalg import (balance, decompose_jordan_like, gershgorin_upper_bound, operator_norm,
                              spectral_radius)
from stochstab.lyapunov import (check_stability_criterion, per_step_log_norm_estimate,
                                product_lyapunov_estimate, scalar_log_moment, taylor_margin)
from stochstab.noise import NoiseModel, stream, validate_moments
from stochstab.synth import SynthesisRequest, build_model, synthesize

GRID = ((0.005, 0.02), (0.05, 0.15), (0.01, 0.05))
JORDAN = np.array([[1.01, 0.1], [0.0, 1.01]])
EX3 = np.diag([1.01, 0.5])
FAR = 1e300
BUNDLE = ("noisy.csv", "deterministic.csv", "report.json", "manifest.json")
LINES = []  # printed by conftest in the terminal summary


def _report(number, title, ok, detail, elapsed):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d} {title}: {detail} ({elapsed:.1f} s)"
    LINES.append((number, line))
    print(line)
    return line


def check(number, title):
    """Decorate a function returning ``(ok, detail)`` into a reporting test."""

    def wrap(fn):
        def test():
            t0 = time.perf_counter()
            ok, detail = fn()
            line = _report(number, title, ok, detail, time.perf_counter() - t0)
            assert ok, line

        test.__name__ = fn.__name__
        test.__doc__ = fn.__doc__
        return test

    return wrap


def scalar_model(eps, s2):
    return NoiseModel.planar(eps, s2 / eps, dim=1)


@check(1, "scalar margin arithmetic")
def test_c01_scalar_margin():
    a = taylor_margin(0.005, 0.02)
    b = taylor_margin(0.05, 0.15)
    return a == -0.005 and b == -0.025, f"margins {a!r}, {b!r}"


@check(2, "quadrature vs Monte Carlo")
def test_c02_quadrature_vs_mc():
    ok, parts = True, []
    for k, (eps, s2) in enumerate(GRID):
        model = scalar_model(eps, s2)
        quad = scalar_log_moment(1 + eps, model.planar_gain)
        est = per_step_log_norm_estimate([[1 + eps]], model, 1_000_000, seed=100 + k)
        z = abs(est.mean - quad) / est.std_error
        ok &= z < 3 and est.mean < 0 and quad < 0
        parts.append(f"({eps}, {s2}): quad {quad:.6f} mc {est.mean:.6f} z={z:.2f}")
    return ok, "; ".join(parts)


@check(3, "Taylor consistency")
def test_c03_taylor():
    ok, parts = True, []
    for eps, s2 in GRID:
        s = math.sqrt(s2)
        gap = abs(scalar_log_moment(1 + eps, s) - (eps - s2 / 2))
        ok &= gap < 2 * s**3
        parts.append(f"({eps}, {s2}): |gap| {gap:.2e} < {2 * s**3:.2e}")
    return ok, "; ".join(parts)


@check(4, "example 1 reproduction")
def test_c04_example1():
    sys_ = build_system("ex1d_1", 0.005, 4.0)
    noisy, det = deterministic_comparison(sys_, [1e-3], 10_000, seed=0, escape_radius=FAR,
                                          converge_threshold=0.0)
    fit = fit_decay_envelope(noisy, 500)
    quad = scalar_log_moment(1.005, math.sqrt(0.02))
    z = abs(fit.log_slope - quad) / fit.slope_std_error
    dfit = fit_decay_envelope(det, 500)
    dgap = abs(dfit.log_slope - math.log(1.005))
    ok = z < 3 and dgap < 1e-6
    return ok, (f"noisy slope {fit.log_slope:.5f} vs quad {quad:.5f} (z={z:.2f}); "
                f"deterministic slope error {dgap:.1e}")


@check(5, "example 2 reproduction")
def test_c05_example2():
    sys_ = build_system("ex1d_2", 0.05, 3.0)
    det = simulate(sys_.silenced(), [0.3], 2000, escape_radius=FAR, converge_threshold=0.0,
                   retain_states=True)
    gap = abs(det.states[-1, 0] - 0.05 / 1.05)
    trials = run_trials(sys_, [0.3], 1000, 2000, seed=0, key_prefix=(KEY_TERMINAL,))
    frac = float(np.mean(trials.final_norm < 1e-6))
    return gap < 1e-9 and frac > 0.5, f"|x_2000 - 0.05/1.05| = {gap:.1e}; converged fraction {frac:.3f}"


@check(6, "example 3 reproduction")
def test_c06_example3():
    noisy = product_lyapunov_estimate(EX3, NoiseModel.planar(0.01, 5.0), 100_000, 10, seed=6)
    quiet = product_lyapunov_estimate(EX3, NoiseModel.planar(0.01, 0.0), 100_000, 10, seed=6)
    gap = abs(quiet.mean - math.log(1.01))
    ok = noisy.mean + 3 * noisy.std_error < 0 and gap < 1e-3
    return ok, (f"lambda(rho=5) = {noisy.mean:.5f} +- {noisy.std_error:.1e}; "
                f"lambda(rho=0) - log 1.01 = {gap:.1e}")


@check(7, "example 4 reproduction")
def test_c07_example4():
    lam = {rho: product_lyapunov_estimate(JORDAN, NoiseModel.planar(0.01, rho), 100_000, 10, seed=7)
           for rho in (0.0, 5.0, 10.0)}

    def separated(lo, hi):
        return lam[hi].mean - lam[lo].mean > 3 * math.hypot(lam[hi].std_error, lam[lo].std_error)

    order = separated(10.0, 5.0) and separated(5.0, 0.0)
    gap = abs(lam[0.0].mean - math.log(1.01))
    t, a_bal = balance(decompose_jordan_like(JORDAN), 0.01)
    crit = check_stability_criterion(a_bal, NoiseModel.planar(0.01, 10.0), 1_000_000, seed=7)
    ok = order and gap < 1e-3 and t == 16.0 and crit.verdict == "satisfied"
    return ok, (f"lambda(10, 5, 0) = {lam[10.0].mean:.5f}, {lam[5.0].mean:.5f}, {lam[0.0].mean:.5f} "
                f"(ordered by 3 SE: {order}; rho=0 gap {gap:.1e}); balance t = {t:g}; "
                f"balanced E log||A+B|| = {crit.estimate.mean:.4f} +- {crit.estimate.std_error:.1e} "
                f"-> {crit.verdict}")


@check(8, "Gershgorin property")
def test_c08_gershgorin():
    models = []
    for eps, rho in ((0.005, 4.0), (0.05, 3.0), (0.01, 5.0), (0.01, 10.0)):
        models += [build_model("symmetric_g", d, eps, rho) for d in (2, 3)]
        models.append(NoiseModel.planar(eps, rho))
    violations, count = 0, 0
    for k in range(1000):
        model = models[k % len(models)]
        xi = model.draw_unit(stream(8, k), 1)
        if model.structure == "planar_example":
            g = model.build_b(xi, np.eye(2))[0]
        else:
            g = model.build_g(xi)[0]
        m = np.eye(model.dim) + g
        violations += operator_norm(m) > gershgorin_upper_bound(m)
        count += 1
    return violations == 0, f"{violations} violations over {count} symmetric samples"


def admissible_sequence(rng):
    # z maximal under z_k <= B + sum_{j<=k} mu_j z_{j-1}; mu is a mix of exact
    # zeros and values large enough that exp(mu) > 1 + mu survives rounding
    length = int(rng.integers(1, 51))
    b = float(rng.uniform(0.0, 10.0))
    mu = np.where(rng.random(length) < 0.3, 0.0, rng.uniform(0.01, 2.0, length))
    z = [float(rng.uniform(0.0, b))]
    for k in range(1, length + 1):
        z.append(b + math.fsum(mu[j - 1] * z[j - 1] for j in range(1, k + 1)))
    return b, mu, z[1:]


@check(9, "Gronwall oracle")
def test_c09_gronwall():
    rng = np.random.default_rng(9)
    bad = 0
    for _ in range(10_000):
        b, mu, z = admissible_sequence(rng)
        bad += any(zk > bk for zk, bk in zip(z, gronwall_bound(b, mu)))
    return bad == 0, f"{bad} of 10000 sequences exceed the bound"


@check(10, "linearity and determinism")
def test_c10_linearity_determinism():
    rng = np.random.default_rng(10)
    mismatches = 0
    for case in range(100):
        d = int(rng.integers(1, 4))
        a = np.triu(rng.normal(0, 0.1, (d, d)), 1) + np.diag(rng.uniform(0.95, 1.05, d))
        noise = (NoiseModel.diagonal_scalar(d, 0.2, 0.01) if case % 3 == 0 else
                 NoiseModel.symmetric(np.full((d, d), 0.02) + np.eye(d) * 0.1, 0.01) if case % 3 == 1 else
                 NoiseModel.planar(0.01, 5.0, dim=min(d, 2)))
        if noise.dim != d:
            a, d = a[:2, :2], 2
        sys_ = MapSystem(a, noise)
        x0 = rng.normal(size=d) * 1e-3
        c = 2.0 ** int(rng.integers(-10, 11))
        t1 = simulate(sys_, x0, 500, escape_radius=FAR, converge_threshold=0.0, seed=case, retain_states=True)
        t2 = simulate(sys_, c * x0, 500, escape_radius=FAR, converge_threshold=0.0, seed=case,
                      retain_states=True)
        mismatches += not np.array_equal(t2.states, c * t1.states)

    cfg = ExperimentConfig("ex2d_1")
    with tempfile.TemporaryDirectory() as tmp:
        bundles = {}
        for w in (1, 2, 8):
            out = Path(tmp) / f"w{w}"
            run_example(cfg, out, workers=w)
            bundles[w] = {name: (out / name).read_bytes() for name in BUNDLE}
    identical = bundles[1] == bundles[2] == bundles[8]
    return mismatches == 0 and identical, (f"{mismatches} of 100 scaling cases inexact; "
                                           f"ex2d_1 bundles identical across 1/2/8 workers: {identical}")


@check(11, "spectral radius oracle")
def test_c11_spectral_radius():
    rng = np.random.default_rng(11)
    worst, complex_pairs = 0.0, 0
    for m in rng.normal(size=(1000, 2, 2)):
        tr = m[0, 0] + m[1, 1]
        det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
        disc = tr * tr - 4 * det
        if disc < 0:
            complex_pairs += 1
            ref = math.sqrt(det)
        else:
            ref = (abs(tr) + math.sqrt(disc)) / 2
        worst = max(worst, abs(spectral_radius(m) - ref))
    return worst < 1e-8, f"max error {worst:.1e} over 1000 matrices ({complex_pairs} complex pairs)"


@check(12, "moment validation")
def test_c12_moments():
    eps_seq = [0.02, 0.01, 0.005]
    model = synthesize(SynthesisRequest([[1.02]], 0.02, 4.0), samples=20_000, seed=12).model
    good = validate_moments(model, eps_seq, K=2 * math.sqrt(2 / math.pi))
    const = NoiseModel.diagonal_scalar(1, math.sqrt(4 * 0.02), 0.02)
    bad = validate_moments(const, eps_seq)
    ok = good.ok and not bad.vanishing_sigma
    return ok, (f"sqrt(4 eps) gain violations {good.violations or 'none'}; "
                f"constant gain violations {bad.violations}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
