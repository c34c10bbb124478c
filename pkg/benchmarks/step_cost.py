"""Time one exponential step and split it into the semigroup product and the pointwise terms.

Usage: python benchmarks/step_cost.py [nx] [rows]
"""

import sys
import timeit

import numpy as np

from paramaxwell import GridSpec, MaxwellCoefficients, NonlinearitySpec, build_operator
from paramaxwell._parallel import apply_rows
from paramaxwell.noise import build_basis, sample_path
from paramaxwell.propagators import apply_diffusion, apply_drift, exponential_step

nx = int(sys.argv[1]) if len(sys.argv) > 1 else 16
rows = int(sys.argv[2]) if len(sys.argv) > 2 else 64
grid = GridSpec(nx)
op = build_operator(grid, MaxwellCoefficients(sigma=2.0))
spec = NonlinearitySpec()
h = 2.0**-8
path = sample_path(build_basis(grid, 8), 0, 0, 1.0, h)
path.finest_fields()
S = op.semigroup_matrix(h)
u = 0.1 * np.random.default_rng(0).standard_normal((rows, grid.dof))
dW = np.broadcast_to(path.window_fields(np.int64(0), 1), u.shape).copy()


def best(fn, number=50):
    return min(timeit.repeat(fn, number=number, repeat=5)) / number


full = best(lambda: exponential_step(op, spec, path, u, 0.0, h))
product = best(lambda: apply_rows(u, S))
pointwise = best(lambda: u + h * apply_drift(spec, u) + apply_diffusion(spec, u, dW))
print(f"nx={nx} dof={grid.dof} rows={rows}")
print(f"  full step       {full * 1e6:9.1f} us")
print(f"  semigroup gemm  {product * 1e6:9.1f} us  ({product / full:.0%})")
print(f"  pointwise terms {pointwise * 1e6:9.1f} us  ({pointwise / full:.0%})")
