import numpy as np
import pytest

from lcns import grid as G
from lcns.base_state import (PressureLaw, coefficient_norms, make_base, manufacture,
                             taylor_velocity, time_grid, unchecked_base, validate)
from lcns.errors import MassResidual, PositivityViolation
from lcns.grid import FluidParams, Grid

P = FluidParams(1.0, 0.0)


def test_rest_state_has_zero_force():
    b = make_base("rest", Grid((16,)), time_grid(1.0, 8), P, pressure_law=PressureLaw.linear())
    assert np.abs(b.f).max() == 0.0
    assert b.m == b.M == 1.0


def test_stratified_force_is_twice_density_gradient():
    errs = []
    for n in (16, 32, 64):
        g = Grid((n,))
        b = manufacture(lambda x: 2 + np.sin(np.pi * x[0]), lambda t, x: np.zeros_like(x),
                        PressureLaw.quadratic(), g, time_grid(1.0, 4), P)
        x = g.coords()[0]
        errs.append(np.abs(b.f[0, 0] - 2 * np.pi * np.cos(np.pi * x)).max())
    assert errs[-1] < 1e-2 and errs[0] / errs[1] > 3.5 and errs[1] / errs[2] > 3.5


def test_stratified_extrema_are_analytic():
    g = Grid((64,))
    b = make_base("stratified", g, time_grid(1.0, 4), P, rho0=2.0, amp=1.0)
    assert np.isclose(b.m, 2.0) and np.isclose(b.M, 3.0)


def test_taylor_state_divergence_free_and_vanishing():
    a = 0.3
    g = Grid((32, 32))
    b = make_base("taylor", g, time_grid(0.1, 4), P, amp=a)
    assert b.mass_residual <= 1e-10 * a
    assert np.abs(b.u_tilde[:, :, g.boundary_mask()]).max() == 0.0
    rep = validate(b)
    assert rep.violations == [] and rep.boundary_trace == 0.0


def test_taylor_needs_two_dimensions():
    with pytest.raises(ValueError):
        make_base("taylor", Grid((16,)), time_grid(1, 4), P)


def test_unknown_family():
    with pytest.raises(ValueError):
        make_base("couette", Grid((16,)), time_grid(1, 4), P)


def test_manufacture_rejects_negative_density():
    with pytest.raises(PositivityViolation):
        manufacture(lambda x: np.cos(np.pi * x[0]), lambda t, x: np.zeros_like(x),
                    PressureLaw.linear(), Grid((16,)), time_grid(1, 4), P)


def test_manufacture_rejects_compressive_base_flow():
    u = lambda t, x: np.stack([np.sin(np.pi * x[0]) * np.sin(np.pi * x[1]), 0 * x[0]])
    with pytest.raises(MassResidual):
        manufacture(lambda x: np.ones(x.shape[1:]), u, PressureLaw.linear(),
                    Grid((16, 16)), time_grid(1, 4), P)


def test_rest_coefficient_norms_vanish_except_pressure():
    b = make_base("rest", Grid((16,)), time_grid(1.0, 4), P)
    c = coefficient_norms(b, 0)
    assert c["dp_inf"] == 1.0
    for k, v in c.items():
        if k not in ("dp_inf", "rho_inf"):
            assert v == 0.0, k


def test_shear_coefficient_norms_match_fine_quadrature():
    """Taylor base: grid norms against analytic integrands on a much finer grid."""
    a = 0.2
    b = make_base("taylor", Grid((64, 64)), time_grid(0.1, 2), P, amp=a)
    c = coefficient_norms(b, 0)
    n = 801
    s = np.linspace(0, 1, n)
    X, Y = np.meshgrid(np.pi * s, np.pi * s, indexing="ij")
    u1 = a * np.sin(X) ** 2 * np.sin(2 * Y)
    u2 = -a * np.sin(2 * X) * np.sin(Y) ** 2
    d11 = a * np.pi * np.sin(2 * X) * np.sin(2 * Y)
    d12 = 2 * a * np.pi * np.sin(X) ** 2 * np.cos(2 * Y)
    d21 = -2 * a * np.pi * np.cos(2 * X) * np.sin(Y) ** 2
    d22 = -a * np.pi * np.sin(2 * X) * np.sin(2 * Y)
    grad_inf = np.sqrt(d11 ** 2 + d12 ** 2 + d21 ** 2 + d22 ** 2).max()
    acc1 = u1 * d11 + u2 * d12
    acc2 = u1 * d21 + u2 * d22
    w = np.full(n, 1.0 / (n - 1))
    w[0] = w[-1] = 0.5 / (n - 1)
    acc_L3 = np.sum(np.outer(w, w) * np.sqrt(acc1 ** 2 + acc2 ** 2) ** 3) ** (1 / 3)
    assert abs(c["grad_u_inf"] - grad_inf) / grad_inf < 0.02
    assert abs(c["accel_L3"] - acc_L3) / acc_L3 < 0.02
    assert np.isclose(c["u_inf"], np.sqrt(u1 ** 2 + u2 ** 2).max(), rtol=0.02)


def test_validate_flags_negative_density():
    g = Grid((16,))
    b = unchecked_base(g, P, time_grid(1, 4), np.cos(np.pi * g.coords()[0]))
    assert "PositivityViolation" in validate(b).violations


def test_cfl_bound_includes_sound_speed():
    g = Grid((32,))
    b = make_base("rest", g, time_grid(1, 4), P, pressure_law=PressureLaw.linear(4.0))
    assert np.isclose(b.cfl_bound(), g.h / 2.0)
