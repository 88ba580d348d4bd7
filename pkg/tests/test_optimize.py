import numpy as np
import pytest

from lcns.adjoint import AdjointSources, reduced_gradient, solve_adjoint
from lcns.control import ConstraintSpec, FieldObservable, Targets, sample_norms
from lcns.errors import InfeasiblePenalty, StagnationWithoutConvergence
from lcns.optimize import IterateRecord, OptimizerOptions, optimize

from conftest import rest_base, tracking_problem


def test_zero_problem_returns_zero_control():
    b = rest_base(32)
    res = optimize(b, targets=Targets(), radius=1.0)
    assert res.converged and res.cost.J == 0.0
    assert np.abs(res.control.values).max() == 0.0


def test_unconstrained_tracking_is_stationary():
    b, tg = tracking_problem()
    res = optimize(b, targets=tg, radius=100.0)
    assert res.converged
    g = reduced_gradient(res.control, res.adjoint, 1.0, b)
    assert np.sqrt(b.dt * np.sum(sample_norms(b.grid, g) ** 2)) <= 1e-6
    J = [r.J for r in res.log]
    assert all(b2 <= a + 1e-14 for a, b2 in zip(J, J[1:]))


def test_binding_radius_saturates():
    b, tg = tracking_problem()
    R = 0.1
    res = optimize(b, targets=tg, radius=R)
    n = res.control.norms()
    assert res.converged and n.max() <= R * (1 + 1e-12)
    # active set: samples where the unconstrained minimizer xi / rho~ leaves the ball
    q = res.adjoint.xi[:-1] / b.rho_tilde
    q[:, :, b.grid.boundary_mask()] = 0
    qn = sample_norms(b.grid, q)
    active = qn >= R
    assert active.any() and (~active).any()
    assert np.allclose(n[active], R, rtol=1e-6)
    assert np.allclose(res.control.values[~active], q[~active], atol=1e-5)


def test_iteration_cap_raises_stagnation():
    b, tg = tracking_problem()
    with pytest.raises(StagnationWithoutConvergence) as exc:
        optimize(b, targets=tg, radius=100.0, opts=OptimizerOptions(max_iter=1))
    assert exc.value.residual > 1e-6


def test_infeasible_constraint_raises():
    b, tg = tracking_problem(cells=16, steps=16)
    obs = FieldObservable(b.grid, b.times, "identity", c_rho=0.0, c_u=1.0)
    rho_c, u_c = obs.zeros()
    u_c[:] = 1.0          # velocity must equal 1 on the walls, where it is pinned to 0
    con = ConstraintSpec(obs, "ball", center=(rho_c, u_c), radius=0.0)
    with pytest.raises(InfeasiblePenalty):
        optimize(b, targets=tg, constraint=con, radius=100.0,
                 opts=OptimizerOptions(al_max_outer=3, max_iter=50))


def test_iterate_record_columns():
    r = IterateRecord("plain", 0, 1.0, None, 0.0, None, None, 0.5, 1.0)
    assert len(r.row()) == len(IterateRecord.CSV_COLUMNS)
    assert IterateRecord.CSV_COLUMNS[1:] == ("iter", "J", "J_eps", "d_W", "lambda_eps",
                                             "a_eps_norm", "proj_grad_residual", "step")
