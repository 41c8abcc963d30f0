"""Check the small-noise moment conditions along a shrinking eps sequence.

A gain sigma(eps) = sqrt(rho eps) vanishes with eps and keeps the third moment
proportional to sigma**3.  A gain frozen at its eps = 0.02 value does not vanish.
"""

import math

from stochstab import NoiseModel, validate_moments
from stochstab.synth import build_model

eps_seq = [0.02, 0.01, 0.005]
K = 2 * math.sqrt(2 / math.pi)

for structure in ("diagonal_scalar", "symmetric_g", "planar_example"):
    val = validate_moments(build_model(structure, 2, 0.02, 4.0), eps_seq, K=K)
    print(f"{structure:16s} ok={val.ok} violations={val.violations or 'none'}")

frozen = NoiseModel.diagonal_scalar(1, math.sqrt(4 * 0.02), 0.02)
val = validate_moments(frozen, eps_seq)
print(f"{'constant gain':16s} ok={val.ok} violations={val.violations}")
