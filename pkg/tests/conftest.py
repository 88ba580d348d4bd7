import numpy as np
import pytest

from lcns.base_state import make_base, time_grid
from lcns.grid import FluidParams, Grid


def rest_base(cells=64, T=0.5, steps=None, mu=1.0, eta=0.0, dim=1):
    g = Grid((cells,) * dim)
    return make_base("rest", g, time_grid(T, steps or cells), FluidParams(mu, eta))


def orders(hs, errs):
    """Observed order of accuracy from a log-log fit."""
    return float(np.polyfit(np.log(hs), np.log(errs), 1)[0])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def tracking_problem(cells=64, steps=64, T=0.5, mu=0.1):
    """Rest base with the velocity target 2 sin(pi x) sin(pi t)."""
    from lcns.control import Targets
    b = rest_base(cells, T=T, steps=steps, mu=mu)
    x = b.grid.coords()[0]
    ud = np.array([[2 * np.sin(np.pi * x) * np.sin(np.pi * t)] for t in b.times])
    return b, Targets(None, ud)


def velocity_ball(b, radius=0.01):
    """Keep the velocity inside an L2(0,T;L2) ball around zero."""
    from lcns.control import ConstraintSpec, FieldObservable
    obs = FieldObservable(b.grid, b.times, "identity", c_rho=0.0, c_u=1.0)
    return ConstraintSpec(obs, "ball", center=obs.zeros(), radius=radius)
