"""Scanning the intensity and estimating the critical value.

Run: python3 demos/04_critical_intensity.py   (about a minute)
"""

import math

from fractalcover import experiments as ex

lam_e = 2 / math.pi
scan = ex.scan_lambda(ex.ExperimentConfig(lam_grid=(0.0, 0.5 * lam_e, lam_e, 1.5 * lam_e),
                                          n_max=4, N=3, L=4, replicates=20))
for row in scan["survival"]:
    print(f"lambda = {row['lambda']:.3f}: survival {row['survival']:.2f}")

# A reduced-budget bisection; the defaults use depth 24 and 40 replicates.
est = ex.estimate_critical(ex.ExperimentConfig(N=3, L=5, replicates=20, steps=6))
print(f"lambda_hat = {est.lam_hat:.4f} in [{est.lo:.4f}, {est.hi:.4f}], "
      f"closed form {est.reference:.4f}, relative error {est.rel_error:.3f}")
