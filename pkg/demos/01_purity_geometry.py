"""Purity of a biosignature for the simulation truth, closed form against Monte Carlo.

The symmetric KLD between the arms' coefficient distributions is quadratic in
the biosignature value w, so its population mean needs only the covariate
mean and covariance.  This script prints the quadratic's coefficients, the
population purity along a sweep of index directions, and a Monte-Carlo check.
"""

import numpy as np

from trajkld.kld import mc_purity_oracle, population_purity, purity_coeffs
from trajkld.simulation import default_truth

for theta in (0.0, 2.0, 5.0):
    (g1, g2), alpha, moments = default_truth(theta, 2)
    c = purity_coeffs(g1, g2)
    print(f"theta={theta:>3}: Q(w) = {c.a1:.4f} + {c.a2:.4f} w + {c.a3:.4f} w^2")

(g1, g2), alpha, moments = default_truth(5.0, 2)
c = purity_coeffs(g1, g2)
print("\nangle  alpha                 purity")
for ang in np.linspace(0, 180, 7):
    a = np.array([np.cos(np.radians(ang)), np.sin(np.radians(ang))])
    print(f"{ang:5.0f}  {np.array2string(a, precision=3):20s}  {population_purity(c, moments, a):.4f}")

exact = population_purity(c, moments, alpha)
est, se = mc_purity_oracle(g1, g2, moments, alpha, 200_000, seed=1)
print(f"\ntrue alpha: closed form {exact:.5f}, Monte Carlo {est:.5f} +/- {se:.5f}")
