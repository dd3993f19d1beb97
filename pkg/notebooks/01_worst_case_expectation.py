"""
Worst-case expectations over a KL ball
======================================

The inner problem of every KL-robust method: given samples of a cost and a
radius eps, how large can the expected cost get under any law within KL
distance eps of the sampling law?
"""

import numpy as np

from bayesdro.distributions import RandomStream
from bayesdro.robust_inner import kl_inner, kl_inner_exact_gaussian

# For a Gaussian cost the answer is mu + sigma * sqrt(2 eps).
z = RandomStream(0).generator().normal(2.0, 3.0, 200_000)
for eps in (0.0, 0.02, 0.1, 0.5):
    r = kl_inner(z, eps)
    print(f"eps={eps:<5} sample {r.value:7.4f}   exact {kl_inner_exact_gaussian(2.0, 3.0, eps):7.4f}"
          f"   lambda*={r.lambda_star:.3f}")

# The worst case is an exponential tilt of the samples: heavy costs get
# more weight.  The tilt weights sum to one and average to the value.
r = kl_inner(z[:10], 0.2)
print("\ncosts  ", np.round(z[:10], 2))
print("weights", np.round(r.weights, 3))
print("weighted mean", float(r.weights @ z[:10]), "value", r.value)

# Past eps = ln(1 / p_max) all the mass can sit on the largest cost.
few = np.array([0.0, 1.0, 5.0])
for eps in (0.5, 1.0, np.log(3.0), 2.0):
    print(f"three atoms, eps={eps:.3f}: {kl_inner(few, eps).value:.4f}")
