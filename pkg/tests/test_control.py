import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lcns.adjoint import time_weights
from lcns.control import (AverageObservable, ConstraintSpec, ControlField, FieldObservable,
                          Targets, ekeland_distance, evaluate_cost, penalized_cost,
                          project_to_ball, sample_norms, spike_variation)
from lcns.errors import AlignmentError, ControlOutsideBall
from lcns.forward import StateTrajectory
from lcns.grid import Grid, inner, norm_l2


def _traj(grid, times, rho, u):
    return StateTrajectory(np.asarray(times), rho, u)


def _interior_field(g, rng):
    W = rng.standard_normal((g.dim,) + g.shape)
    W[:, g.boundary_mask()] = 0
    return W


# -- cost ---------------------------------------------------------------------


def test_cost_zero_at_targets(rng):
    g = Grid((8,))
    t = np.linspace(0, 1, 5)
    rho = rng.standard_normal((5,) + g.shape)
    u = rng.standard_normal((5, 1) + g.shape)
    rep = evaluate_cost(g, _traj(g, t, rho, u), np.zeros((4, 1) + g.shape), Targets(rho, u))
    assert rep.J == 0.0


def test_cost_half_on_unit_square():
    g = Grid((8, 8))
    t = np.linspace(0, 1, 11)
    rho = np.ones((11,) + g.shape)
    u = np.random.default_rng(0).standard_normal((11, 2) + g.shape)
    rep = evaluate_cost(g, _traj(g, t, rho, u), np.zeros((10, 2) + g.shape), Targets(None, u))
    assert np.isclose(rep.J, 0.5, atol=1e-14)


def test_cost_matches_exact_integral_second_order_in_time():
    """J for rho = t sin(pi x), u = 0, U = cos(pi t) sin(pi x) against exact integrals."""
    g = Grid((16,))
    x = g.coords()[0]
    errs = []
    for N in (10, 20, 40):
        t = np.linspace(0, 1, N + 1)
        rho = np.array([tt * np.sin(np.pi * x) for tt in t])
        U = np.array([[np.cos(np.pi * tt) * np.sin(np.pi * x)] for tt in t[:-1]])
        rep = evaluate_cost(g, _traj(g, t, rho, np.zeros((N + 1, 1) + g.shape)), U)
        # spatial trapezoid is exact for sin^2 on this grid; tracking: 1/2 * 1/3 * 1/2
        tracking = 0.5 * (1 / 3) * 0.5
        # control uses left samples on [t_k, t_k+1): dt sum cos^2 * 1/2
        control = 0.5 * (1 / N) * np.sum(np.cos(np.pi * t[:-1]) ** 2) * 0.5
        errs.append(abs(rep.J - (tracking + control)))
    assert errs[0] / errs[1] > 3.5 and errs[1] / errs[2] > 3.5


# -- controls, Ekeland metric and spikes ------------------------------------------


def test_control_outside_ball_rejected():
    g = Grid((8,))
    with pytest.raises(ControlOutsideBall):
        ControlField(g, 10 * np.ones((4, 1) + g.shape), 1.0, 0.25)


def test_ekeland_distance_examples(rng):
    g = Grid((8,))
    dt = 0.1
    U = ControlField.zeros(g, 20, 1.0, dt)
    assert ekeland_distance(U, U, dt) == 0.0
    W = 0.5 * _interior_field(g, rng) / norm_l2(g, _interior_field(g, rng))
    W = project_to_ball(g, W, 0.9)
    h1 = spike_variation(U, 0.5, 0.3, W)
    assert ekeland_distance(h1, U, dt) == pytest.approx(0.3, abs=1e-15)
    both = spike_variation(h1, 1.5, 0.2, W)
    assert ekeland_distance(both, U, dt) == pytest.approx(0.5, abs=1e-15)


def test_spike_with_current_value_is_identity(rng):
    g = Grid((8,))
    vals = np.array([project_to_ball(g, _interior_field(g, rng), 0.5) for _ in range(10)])
    U = ControlField(g, vals, 1.0, 0.1)
    same = spike_variation(U, 0.5, 0.1, U.values[4])
    assert np.array_equal(same.values, U.values)


def test_spike_misaligned_raises():
    g = Grid((8,))
    U = ControlField.zeros(g, 10, 1.0, 0.1)
    with pytest.raises(AlignmentError):
        spike_variation(U, 0.55, 0.1, np.zeros((1,) + g.shape))
    with pytest.raises(AlignmentError):
        spike_variation(U, 0.2, 0.3, np.zeros((1,) + g.shape))


def test_spike_energy_and_distance_bound(rng):
    g = Grid((16,))
    dt, R = 0.05, 2.0
    vals = np.array([project_to_ball(g, _interior_field(g, rng), R) for _ in range(40)])
    U = ControlField(g, vals, R, dt)
    Z = ControlField.zeros(g, 40, R, dt)
    W = project_to_ball(g, _interior_field(g, rng), R)
    for m in (1, 3, 8):
        h = m * dt
        Zh = spike_variation(Z, 1.0, h, W)
        assert np.isclose(dt * np.sum(sample_norms(g, Zh.values) ** 2), h * norm_l2(g, W) ** 2)
        Uh = spike_variation(U, 1.5, h, W)
        diff = Uh.values - U.values
        assert np.sqrt(dt * np.sum(sample_norms(g, diff) ** 2)) <= 2 * R * np.sqrt(h)


# -- projection -------------------------------------------------------------------


def test_projection_examples(rng):
    g = Grid((8,))
    f = _interior_field(g, rng)
    f *= 1.0 / norm_l2(g, f)
    assert np.array_equal(project_to_ball(g, 0.5 * f, 1.0), 0.5 * f)
    assert np.allclose(project_to_ball(g, 2 * f, 1.0), f)


def test_projection_variational_inequality(rng):
    g = Grid((8, 8))
    R = 1.3
    for _ in range(5):
        x = 3 * _interior_field(g, rng)
        p = project_to_ball(g, x, R)
        for _ in range(100):
            w = project_to_ball(g, _interior_field(g, rng) * rng.uniform(0, 2), R)
            assert inner(g, x - p, w - p) <= 1e-10


# -- constraint sets ----------------------------------------------------------------


def _ball(g, t, r=0.5):
    obs = FieldObservable(g, t, "identity", 1.0, 1.0)
    center = obs.zeros()
    return ConstraintSpec(obs, "ball", center=center, radius=r), obs


def test_distance_and_subgradient_examples(rng):
    g = Grid((8,))
    t = np.linspace(0, 1, 5)
    con, obs = _ball(g, t)
    x = obs.random(rng)
    inside = tuple(0.1 * p / np.sqrt(obs.inner(x, x)) for p in x)
    assert con.distance(inside) == 0.0
    assert all(np.abs(e).max() == 0.0 for e in con.subgradient(inside))
    far = tuple(1.5 * p / np.sqrt(obs.inner(x, x)) for p in x)
    assert np.isclose(con.distance(far), 1.0)
    assert np.isclose(con.norm(con.subgradient(far)), 1.0)


@pytest.mark.parametrize("kind", ["ball", "box"])
def test_distance_is_lipschitz(kind, rng):
    g = Grid((8,))
    t = np.linspace(0, 1, 5)
    obs = FieldObservable(g, t, "kernel", 1.0, 0.5, width=0.2)
    con = (ConstraintSpec(obs, "ball", center=obs.zeros(), radius=0.3) if kind == "ball" else
           ConstraintSpec(obs, "box", lo=(-0.2, -0.2), hi=(0.2, 0.2)))
    for _ in range(100):
        x, y = obs.random(rng), obs.random(rng)
        diff = tuple(p - q for p, q in zip(x, y))
        assert abs(con.distance(x) - con.distance(y)) <= con.norm(diff) + 1e-12


def test_kernel_observable_adjoint_pairing(rng):
    g = Grid((6, 5))
    t = np.linspace(0, 1, 4)
    obs = FieldObservable(g, t, "kernel", 0.7, 1.3, width=0.15)
    rho = rng.standard_normal((4,) + g.shape)
    u = rng.standard_normal((4, 2) + g.shape)
    a = obs.random(rng)
    lhs = obs.inner(obs.apply(rho, u), a)
    sr, su = obs.adjoint(a)
    om = time_weights(3, 1 / 3)
    rhs = sum(om[n] * (inner(g, rho[n], sr[n]) + inner(g, u[n], su[n])) for n in range(4))
    assert np.isclose(lhs, rhs, rtol=1e-12)


def test_average_observable_adjoint_pairing(rng):
    g = Grid((8, 8))
    t = np.linspace(0, 0.5, 6)
    obs = AverageObservable(g, t, [("rho", (0.5, 0.5), 0.2), ("u2", (0.3, 0.6), 0.1)])
    rho = rng.standard_normal((6,) + g.shape)
    u = rng.standard_normal((6, 2) + g.shape)
    a = obs.random(rng)
    sr, su = obs.adjoint(a)
    om = time_weights(5, 0.1)
    rhs = sum(om[n] * (inner(g, rho[n], sr[n]) + inner(g, u[n], su[n])) for n in range(6))
    assert np.isclose(obs.inner(obs.apply(rho, u), a), rhs, rtol=1e-12)
    assert np.allclose(obs.apply(np.ones_like(rho), np.zeros_like(u)), [1.0, 0.0])


# -- penalized functional -------------------------------------------------------------


def _state_cost(g, t, scale):
    rho = scale * np.ones((len(t),) + g.shape)
    return _traj(g, t, rho, np.zeros((len(t), 1) + g.shape))


def test_penalized_inactive_constraint():
    g = Grid((8,))
    t = np.linspace(0, 1, 5)
    st = _state_cost(g, t, 1.0)
    U = np.zeros((4, 1) + g.shape)
    J = evaluate_cost(g, st, U).J
    rep, a = penalized_cost(g, st, U, 0.01, J_star=J - 0.1, constraint=ConstraintSpec())
    assert np.isclose(rep.J_eps, 0.11) and rep.lambda_eps == 1.0 and a is None


def test_penalized_at_feasible_optimum_equals_eps():
    g = Grid((8,))
    t = np.linspace(0, 1, 5)
    st = _state_cost(g, t, 0.1)
    U = np.zeros((4, 1) + g.shape)
    con, _ = _ball(g, t, r=10.0)
    J = evaluate_cost(g, st, U).J
    rep, _ = penalized_cost(g, st, U, 0.02, J_star=J, constraint=con)
    assert rep.J_eps == pytest.approx(0.02, abs=1e-15)


@settings(max_examples=60, deadline=None)
@given(st.floats(0.01, 5.0), st.floats(0.0, 3.0), st.floats(1e-4, 1.0))
def test_multiplier_bounds(scale, shift, eps):
    g = Grid((8,))
    t = np.linspace(0, 1, 5)
    st_ = _state_cost(g, t, scale)
    U = np.zeros((4, 1) + g.shape)
    con, _ = _ball(g, t, r=0.5)
    J = evaluate_cost(g, st_, U).J
    rep, a = penalized_cost(g, st_, U, eps, J_star=J - shift, constraint=con)
    lam, an = rep.lambda_eps, rep.a_eps_norm
    assert 0 <= lam <= 1 and 0 <= an <= 1
    assert 1 - 1e-12 <= lam + an <= 2 + 1e-12
    assert np.isclose(con.norm(a), an, atol=1e-12)
