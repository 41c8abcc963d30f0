"""Design a stabilizing noise law for a given matrix and find the smallest rho.

synthesize builds a noise model with variance rho*eps, reports the leading-order
margin and checks E log||A+B|| < 0 by Monte Carlo.  minimal_rho searches for the
smallest rho whose certificate holds.
"""

import warnings

import numpy as np

from stochstab import SynthesisRequest, minimal_rho, synthesize
from stochstab.synth import CertificateWarning

jordan = np.array([[1.01, 0.1], [0.0, 1.01]])
requests = {
    "scalar, planar": SynthesisRequest([[1.005]], 0.005, 4.0),
    "jordan, diagonal_scalar": SynthesisRequest(jordan, 0.01, 10.0, "diagonal_scalar", 1e-3),
    "jordan, planar_example": SynthesisRequest(jordan, 0.01, 10.0, "planar_example", 1e-3),
}
for name, req in requests.items():
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", CertificateWarning)
        res = synthesize(req, samples=200_000, seed=1)
    note = " (warned)" if caught else ""
    print(f"{name:24s} margin {res.margin.taylor_margin:+.5f}  E log||A+B|| = {res.estimate.mean:+.4f}"
          f"  certificate {res.certificate}{note}")

print(f"minimal rho, scalar eps=0.005:  {minimal_rho([[1.005]], 0.005, 'planar_example', samples=200_000, seed=1)}")
print(f"minimal rho, diag(1.01, 0.5):   {minimal_rho(np.diag([1.01, 0.5]), 0.01, 'planar_example', samples=200_000, seed=1)}")
