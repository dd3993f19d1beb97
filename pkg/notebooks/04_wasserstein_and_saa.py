"""
Wasserstein balls and the empirical solution
============================================

With a type-1 Wasserstein ball around the empirical law the worst case
adds eps * max slope to the SAA objective, so the robust newsvendor
decision never moves.  The type-2 ball does move it.
"""

import numpy as np

from bayesdro.cost_models import Newsvendor
from bayesdro.distributions import RandomStream
from bayesdro.solvers import empirical_saa_solve, wasserstein_dro_solve

newsvendor = Newsvendor(h=3.0, b=8.0, c=0.0, upper=50.0)
data = RandomStream(4).generator().exponential(20.0, 15)
saa = empirical_saa_solve(data, newsvendor)
print(f"SAA       x={saa.x_star[0]:7.3f}  value={saa.objective:8.3f}")
for eps in (0.1, 1.0, 5.0):
    w1 = wasserstein_dro_solve(data, newsvendor, eps, p=1)
    w2 = wasserstein_dro_solve(data, newsvendor, eps, p=2)
    print(f"eps={eps:<4}  W1 x={w1.x_star[0]:7.3f} (value - SAA = {w1.objective - saa.objective:.3f})"
          f"   W2 x={w2.x_star[0]:7.3f}")
print("max slope b =", float(newsvendor.b[0]))
