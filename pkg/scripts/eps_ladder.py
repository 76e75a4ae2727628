"""Regularized PDE across the eps ladder: sup norms, first moments and the tanh weak gap.

    python3 scripts/eps_ladder.py [out.csv]
"""

import sys

import numpy as np

from chaoslab.kernels import KernelSpec, RegularizedKernel
from chaoslab.pde import Gaussian, Grid1D, diagnostics, solve, weak_convergence_gap

LADDER = (0.2, 0.1, 0.05, 0.025)
REF_EPS = 0.0125

if __name__ == "__main__":
    grid = Grid1D.symmetric(8.0, 2048)
    run = lambda e: solve(Gaussian(), RegularizedKernel(KernelSpec.bcm(1.0), e), 0.5, 1.0, grid, 1e-3, 10)  # noqa: E731
    ref = run(REF_EPS)
    lines = ["eps,sup_linf,sup_abs_moment,weak_gap_tanh"]
    for e in LADDER:
        sol = run(e)
        d = diagnostics(sol)
        gap = weak_convergence_gap(sol, ref, np.tanh)
        lines.append(f"{e},{max(r['linf'] for r in d)!r},{max(r['abs_moment'] for r in d)!r},{gap!r}")
    text = "\n".join(lines) + "\n"
    if len(sys.argv) > 1:
        open(sys.argv[1], "w").write(text)
    print(text, end="")
