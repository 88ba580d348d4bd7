"""How close the continuous adjoint gradient is to the discrete one.

The continuous-adjoint gradient differs from finite differences of the
discrete cost by O(dt); the exact transpose of the forward step removes the
discrepancy down to round-off. Both are tabulated under refinement.
"""
import numpy as np

from lcns.base_state import make_base, time_grid
from lcns.control import Targets
from lcns.grid import FluidParams, Grid
from lcns.verification import check_gradient, smooth_directions

print(f"{'cells':>6} {'steps':>6} {'continuous':>12} {'transpose':>12}")
for n in (16, 32, 64, 128):
    g = Grid((n,))
    b = make_base("rest", g, time_grid(0.5, n), FluidParams(1.0, 0.0))
    x, t = g.coords()[0], b.times
    tg = Targets(np.array([0.3 * np.cos(np.pi * x) * s for s in t]),
                 np.array([[np.sin(np.pi * x) * np.cos(2 * s)] for s in t]))
    U = np.array([[np.sin(2 * np.pi * x) * np.sin(3 * s)] for s in t[:-1]])
    dirs = smooth_directions(g, t, 5, np.random.default_rng(7))
    e = [check_gradient(b, U, tg, dirs, mode=m).measured["rel_err"] for m in ("continuous", "transpose")]
    print(f"{n:>6} {n:>6} {e[0]:>12.3e} {e[1]:>12.3e}")
