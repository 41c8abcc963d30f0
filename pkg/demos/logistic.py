"""Noise removes the nonzero fixed point of the logistic map near its bifurcation.

x -> (lambda + sigma xi) x (1 - x) with lambda = 1.05 settles at 0.05/1.05
when sigma = 0.  At sigma**2 = 3 (lambda - 1) most trajectories collapse to zero.
"""

import numpy as np

from stochstab import MapSystem, NoiseModel, simulate
from stochstab.dynamics import KEY_TERMINAL, run_trials

lam, rho = 1.05, 3.0
system = MapSystem.logistic(lam, NoiseModel.planar(lam - 1, rho, dim=1))

det = simulate(system.silenced(), [0.3], 2000, escape_radius=1e300, converge_threshold=0.0,
               retain_states=True)
print(f"deterministic x_2000 = {det.states[-1, 0]:.9f}, fixed point {0.05 / 1.05:.9f}")

trials = run_trials(system, [0.3], 1000, 2000, seed=0, key_prefix=(KEY_TERMINAL,))
print(f"fraction of 1000 noisy runs below 1e-6 after 2000 steps: {np.mean(trials.final_norm < 1e-6):.3f}")
