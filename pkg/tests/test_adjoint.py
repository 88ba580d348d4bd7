import numpy as np
import pytest
from scipy.linalg import expm

from lcns.adjoint import AdjointSources, AdjointTrajectory, reduced_gradient, solve_adjoint
from lcns.control import Targets, evaluate_cost
from lcns.errors import GridMismatch
from lcns.forward import LinearizedSystem, solve_linearized
from lcns.grid import inner

from conftest import rest_base


@pytest.mark.parametrize("mode", ["continuous", "transpose"])
def test_zero_multiplier_gives_zero_adjoint(mode, rng):
    b = rest_base(16)
    g = b.grid
    U = rng.standard_normal((16, 1) + g.shape)
    st = solve_linearized(b, U)
    ud = rng.standard_normal(st.u.shape)
    adj = solve_adjoint(b, st, AdjointSources(0.0, None, ud), mode=mode)
    assert np.abs(adj.sigma).max() == 0.0 and np.abs(adj.xi).max() == 0.0


def _single_mode(T, nu, t):
    """Coefficients (a, b) of xi = a sin(pi x), sigma = b cos(pi x) at times t.

    Rest base with unit density and sound speed, source u - u_d = sin(pi x):
    in reversed time s = T - t, a' = -nu pi^2 a - pi b - 1, b' = pi a.
    """
    M = np.array([[-nu * np.pi ** 2, -np.pi, -1.0],
                  [np.pi, 0.0, 0.0],
                  [0.0, 0.0, 0.0]])
    out = np.array([expm(M * (T - tt)) @ np.array([0.0, 0.0, 1.0]) for tt in t])
    return out[:, 0], out[:, 1]


def test_single_mode_adjoint_oracle():
    T, mu = 0.5, 0.5
    b = rest_base(64, T=T, steps=4096, mu=mu)
    g = b.grid
    x = g.coords()[0]
    nu = 2 * mu + b.params.lam
    st = solve_linearized(b)
    ud = np.broadcast_to(-np.sin(np.pi * x), st.u.shape).copy()
    adj = solve_adjoint(b, st, AdjointSources(1.0, None, ud), mode="continuous")
    a, c = _single_mode(T, nu, b.times)
    xi_ref = a[:, None, None] * np.sin(np.pi * x)[None, None]
    err = np.sqrt(np.sum((adj.xi - xi_ref) ** 2) / np.sum(xi_ref ** 2))
    assert err <= 1e-3


def _duality_error(cells):
    b = rest_base(cells, T=0.5, mu=1.0)
    g = b.grid
    x = g.coords()[0]
    t = b.times
    tg = Targets(np.array([0.3 * np.cos(np.pi * x) * tt for tt in t]),
                 np.array([[np.sin(np.pi * x) * np.cos(2 * tt)] for tt in t]))
    U = np.array([[np.sin(2 * np.pi * x) * np.sin(3 * tt)] for tt in t[:-1]])
    dU = np.array([[np.sin(np.pi * x) * np.cos(tt)] for tt in t[:-1]])
    sysm = LinearizedSystem(b)

    def track(V):
        rep = evaluate_cost(g, solve_linearized(b, V, system=sysm), V, tg)
        return rep.tracking_u / 2 + rep.tracking_rho / 2
    st = solve_linearized(b, U, system=sysm)
    adj = solve_adjoint(b, st, AdjointSources(1.0, tg.rho_d, tg.u_d), system=sysm)
    pair = -b.dt * sum(inner(g, adj.xi[n] / b.rho_tilde, dU[n]) for n in range(b.nsteps))
    fd = (track(U + 1e-4 * dU) - track(U - 1e-4 * dU)) / 2e-4
    return abs(pair - fd) / abs(fd)


def test_duality_with_tracking_derivative():
    # first order in (dx + dt): bounded by 10 (dx + dt) and halving under refinement
    e1, e2 = _duality_error(64), _duality_error(128)
    assert e1 <= 10 * (1 / 64 + 0.5 / 64)
    assert e1 / e2 > 1.8


def test_reduced_gradient_identities(rng):
    b = rest_base(16)
    g = b.grid
    xi = rng.standard_normal((17, 1) + g.shape)
    xi[:, :, g.boundary_mask()] = 0
    adj = AdjointTrajectory(b.times, np.zeros((17,) + g.shape), xi)
    U = xi[:16] / b.rho_tilde
    assert np.abs(reduced_gradient(U, adj, 1.0, b)).max() == 0.0
    zero = AdjointTrajectory(b.times, np.zeros((17,) + g.shape), np.zeros_like(xi))
    assert np.allclose(reduced_gradient(U, zero, 2.5, b), 2.5 * U)


def test_state_grid_mismatch():
    b = rest_base(16)
    st = solve_linearized(rest_base(32))
    with pytest.raises(GridMismatch):
        solve_adjoint(b, st, AdjointSources())
