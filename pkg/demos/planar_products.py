"""Two-dimensional systems: product exponents and balancing of a Jordan block.

For diag(1.01, 0.5) and for the Jordan block [[1.01, 0.1], [0, 1.01]] the top
Lyapunov exponent of the random product falls below zero once enough noise is
added.  Balancing with D = diag(1, t) shrinks the off-diagonal coupling to 0.1/t.
"""

import math

import numpy as np

from stochstab import NoiseModel, balance, decompose_jordan_like, product_lyapunov_estimate

jordan = np.array([[1.01, 0.1], [0.0, 1.01]])
for name, a in (("diag(1.01, 0.5)", np.diag([1.01, 0.5])), ("jordan block", jordan)):
    print(name)
    for rho in (0.0, 5.0, 10.0):
        est = product_lyapunov_estimate(a, NoiseModel.planar(0.01, rho), horizon=20_000, replicates=10,
                                        seed=1, workers=4)
        print(f"  rho = {rho:4.1f}: lambda = {est.mean:+.5f} +- {est.std_error:.1e}")
    print(f"  log 1.01 = {math.log(1.01):.5f}")

t, a_bal = balance(decompose_jordan_like(jordan), kappa=0.01)
print(f"balancing scale t = {t:g}, balanced matrix\n{a_bal}")
