"""A scalar map x -> (1 + eps + sigma*xi) x that noise pulls back to zero.

Without noise the state grows like 1.005**n.  With sigma**2 = 4 eps the
typical growth rate E log|1 + eps + sigma xi| is negative, and a single
trajectory decays even though its mean square does not.
"""

import math

from stochstab import MapSystem, NoiseModel, deterministic_comparison, fit_decay_envelope
from stochstab import scalar_log_moment, taylor_margin

eps, rho = 0.005, 4.0
system = MapSystem([[1 + eps]], NoiseModel.planar(eps, rho, dim=1))

print(f"leading-order margin eps - sigma^2/2 = {taylor_margin(eps, rho * eps)}")
print(f"quadrature E log|1+eps+sigma xi|   = {scalar_log_moment(1 + eps, math.sqrt(rho * eps)):.6f}")

noisy, quiet = deterministic_comparison(system, [1e-3], 10_000, seed=0, escape_radius=1e300,
                                        converge_threshold=0.0)
fit = fit_decay_envelope(noisy, burn_in=500)
print(f"noisy   |x_10000| = {noisy.norms[-1]:.3e}  fitted slope {fit.log_slope:.5f} +- {fit.slope_std_error:.5f}")
print(f"no noise |x_10000| = {quiet.norms[-1]:.3e}  (1e-3 * 1.005**10000)")
