"""Strong convergence of the Euler scheme on a path-dependent volatility.

The volatility of ``path-sigma`` depends on the running supremum of |X|, so
there is no closed form.  We couple every coarse grid to a 1024-step fine
grid through the same Brownian increments and fit the log-log slope of the
mean squared sup-over-nodes error against the mesh.

Run:  python demos/euler_strong_rate.py
"""
import numpy as np
from scipy import stats

from pathfbsde import DiscretePath, TimeGrid, problem_zoo
from pathfbsde.euler import strong_errors

cs, _ = problem_zoo("path-sigma")
history = DiscretePath.constant(0.0, end=0.0)
ns = [8, 16, 32, 64]
errs = strong_errors(cs, history, [TimeGrid.uniform(0, 1, n) for n in ns],
                     TimeGrid.uniform(0, 1, 1024), N=20_000, seed=1)

for n, e in zip(ns, errs):
    print(f"n={n:3d}  mesh={1 / n:.4f}  squared error={e:.3e}")

fit = stats.linregress(np.log([1 / n for n in ns]), np.log(errs))
# squared error should scale like |pi|, i.e. slope near 1
print(f"slope={fit.slope:.3f}  R^2={fit.rvalue ** 2:.4f}")
