"""Steer a fluid at rest toward a moving velocity profile.

Solves the tracking problem twice, once with a generous control budget and
once with a binding one, and prints the cost history together with the
minimum-principle certificate for each solution.
"""
import numpy as np

from lcns.base_state import make_base, time_grid
from lcns.control import Targets
from lcns.grid import FluidParams, Grid
from lcns.optimize import optimize
from lcns.verification import check_pontryagin

g = Grid((64,))
base = make_base("rest", g, time_grid(0.5, 64), FluidParams(0.1, 0.0))
x = g.coords()[0]
target = Targets(None, np.array([[2 * np.sin(np.pi * x) * np.sin(np.pi * t)] for t in base.times]))

for R in (100.0, 0.1):
    res = optimize(base, targets=target, radius=R)
    J = [r.J for r in res.log]
    print(f"R = {R:g}: {len(J)} iterations, J {J[0]:.4g} -> {J[-1]:.4g}, "
          f"max |U(t)| = {res.control.norms().max():.4g}, converged = {res.converged}")
    print("  " + check_pontryagin(res.control, res.adjoint.xi, base, n_samples=100).summary())
