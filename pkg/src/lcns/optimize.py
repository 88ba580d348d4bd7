"""Projected-gradient optimization with penalty continuation for state constraints.

Unconstrained runs minimize J over the control ball with a spectral
projected gradient method (Barzilai-Borwein trial step, Armijo backtracking
on the projection arc, monotone). Runs with an active state constraint

1. compute a reference value ``J*`` with an augmented Lagrangian solve on
   ``d_W(F(rho, u))``,
2. minimize ``J_eps = sqrt((J - J* + eps)^2 + d_W^2)`` for ``eps_k = eps0 2^-k``,
   warm-starting every stage from the previous iterate and logging the
   multipliers ``lambda_eps`` and ``a_eps``.
"""
import logging
from dataclasses import dataclass, field

import numpy as np

from .adjoint import AdjointSources, reduced_gradient, solve_adjoint
from .control import (ControlField, Targets, evaluate_cost, penalized_cost,
                      project_to_ball, _lin)
from .errors import InfeasiblePenalty, StagnationWithoutConvergence
from .forward import LinearizedSystem, solve_linearized

log = logging.getLogger(__name__)


@dataclass
class OptimizerOptions:
    tol: float = 1e-6
    max_iter: int = 500
    armijo_c: float = 1e-4
    backtrack: float = 0.5
    max_backtracks: int = 40
    step0: float = 1.0
    step_min: float = 1e-10
    step_max: float = 1e10
    eps0: float = 1e-2
    schedule_length: int = 6
    al_penalty: float = 10.0
    al_max_outer: int = 30
    feas_tol: float = 1e-7
    gradient_mode: str = "transpose"
    lambda_mult: float = 1.0


@dataclass
class IterateRecord:
    stage: str
    iteration: int
    J: float
    J_eps: float
    d_W: float
    lambda_eps: float
    a_eps_norm: float
    residual: float
    step: float

    CSV_COLUMNS = ("stage", "iter", "J", "J_eps", "d_W", "lambda_eps", "a_eps_norm",
                   "proj_grad_residual", "step")

    def row(self):
        return (self.stage, self.iteration, self.J, self.J_eps, self.d_W, self.lambda_eps,
                self.a_eps_norm, self.residual, self.step)


@dataclass
class OptimizeResult:
    control: ControlField
    state: object
    adjoint: object
    cost: object
    log: list
    converged: bool
    J_star: float = None
    multipliers: dict = field(default_factory=dict)


class _Problem:
    """Cost, gradient and state bookkeeping for one base state."""

    def __init__(self, base, rho0, u0, targets, constraint, opts, system=None):
        self.base = base
        self.grid = base.grid
        self.rho0, self.u0 = rho0, u0
        self.targets = targets or Targets()
        self.constraint = constraint
        self.opts = opts
        self.system = system or LinearizedSystem(base)
        self.dt = base.dt

    def inner(self, a, b):
        return float(self.dt * np.sum(a * b * self.grid.weights()))

    def state(self, U):
        return solve_linearized(self.base, U, rho0=self.rho0, u0=self.u0, system=self.system)

    def gradient(self, U, state, lam, a=None):
        src_r, src_u = (None, None)
        if a is not None and self.constraint is not None:
            src_r, src_u = self.constraint.adjoint_source(a)
        sources = AdjointSources(lam, self.targets.rho_d, self.targets.u_d, src_r, src_u)
        adj = solve_adjoint(self.base, state, sources, mode=self.opts.gradient_mode,
                            system=self.system)
        return reduced_gradient(U, adj, lam, self.base), adj


def _spg(problem, U, evaluate, R, opts, stage, records, max_iter=None, accept=None):
    """Spectral projected gradient on the control ball.

    ``evaluate(U) -> (value, grad, info)``; ``accept(info)`` may veto trial
    points (used to keep ``J - J* + eps`` nonnegative).
    """
    g_ = problem.grid
    proj = lambda V: project_to_ball(g_, V, R)
    max_iter = opts.max_iter if max_iter is None else max_iter
    f, grad, info = evaluate(U)
    step = opts.step0
    U_prev = g_prev = None
    residual = np.inf
    for it in range(max_iter + 1):
        pg = U - proj(U - grad)
        residual = np.sqrt(max(problem.inner(pg, pg), 0.0))
        records.append(_record(stage, it, info, residual, step))
        if residual <= opts.tol:
            return U, f, grad, info, residual, True
        if it == max_iter:
            break
        if U_prev is not None:
            s = U - U_prev
            y = grad - g_prev
            sy = problem.inner(s, y)
            step = problem.inner(s, s) / sy if sy > 0 else opts.step_max
            step = min(max(step, opts.step_min), opts.step_max)
        d = proj(U - step * grad) - U
        slope = problem.inner(grad, d)
        alpha = 1.0
        for _ in range(opts.max_backtracks):
            Ut = U + alpha * d
            ft, gt, it_info = evaluate(Ut)
            ok = accept is None or accept(it_info)
            if ok and ft <= f + opts.armijo_c * alpha * slope:
                break
            alpha *= opts.backtrack
        else:
            log.warning("%s: line search failed at iteration %d", stage, it)
            break
        U_prev, g_prev = U, grad
        U, f, grad, info = proj(Ut), ft, gt, it_info
    return U, f, grad, info, residual, False


def _record(stage, it, info, residual, step):
    return IterateRecord(stage, it, info["J"], info.get("J_eps"), info.get("d_W", 0.0),
                         info.get("lambda_eps"), info.get("a_eps_norm"), residual, step)


def optimize(base, rho0=None, u0=None, targets=None, constraint=None, radius=1.0,
             opts=None, U0=None, system=None):
    """Minimize the tracking cost over the control ball, honoring an optional state constraint."""
    opts = opts or OptimizerOptions()
    problem = _Problem(base, rho0, u0, targets, constraint, opts, system)
    g_, N, dt = base.grid, base.nsteps, base.dt
    lam = opts.lambda_mult
    U = np.zeros((N, g_.dim) + g_.shape) if U0 is None else project_to_ball(
        g_, np.asarray(getattr(U0, "values", U0), dtype=float), radius)
    records = []
    cache = {}

    def eval_plain(V):
        st = problem.state(V)
        rep = evaluate_cost(g_, st, V, problem.targets)
        grad, adj = problem.gradient(V, st, lam)
        cache["last"] = (st, adj, rep)
        return lam * rep.J, grad, {"J": rep.J, "state": st, "adjoint": adj, "report": rep}

    active = constraint is not None and constraint.active
    if not active:
        U, f, grad, info, residual, ok = _spg(problem, U, eval_plain, radius, opts, "plain", records)
        if not ok:
            raise StagnationWithoutConvergence(
                f"projected-gradient residual {residual:.3e} > tol {opts.tol:.1e} "
                f"after {opts.max_iter} iterations", residual)
        ctrl = ControlField(g_, U, radius, dt)
        mult = {"lambda": lam, "a": None}
        return OptimizeResult(ctrl, info["state"], info["adjoint"], info["report"], records,
                              True, multipliers=mult)

    # -- augmented Lagrangian reference solve ---------------------------------
    nu = constraint.observable.zeros()
    mu = opts.al_penalty
    d_hist = []
    for outer in range(opts.al_max_outer):
        def eval_al(V, nu=nu, mu=mu):
            st = problem.state(V)
            rep = evaluate_cost(g_, st, V, problem.targets)
            x = constraint.observe(st)
            shifted = _lin(x, nu, 1.0, 1.0 / mu)
            resid = _lin(shifted, constraint.project(shifted), 1.0, -1.0)
            a = _lin(resid, resid, mu, 0.0)
            grad, adj = problem.gradient(V, st, 1.0, a)
            val = rep.J + 0.5 * mu * constraint.inner(resid, resid)
            return val, grad, {"J": rep.J, "d_W": constraint.distance(x), "state": st,
                               "adjoint": adj, "report": rep, "x": x}
        U, f, grad, info, residual, ok = _spg(problem, U, eval_al, radius, opts,
                                              f"al{outer}", records)
        x = info["x"]
        d = info["d_W"]
        d_hist.append(d)
        shifted = _lin(x, nu, 1.0, 1.0 / mu)
        nu = _lin(shifted, constraint.project(shifted), mu, -mu)
        log.info("augmented Lagrangian pass %d: J=%.6g d_W=%.3e", outer, info["J"], d)
        if d <= opts.feas_tol * max(1.0, constraint.norm(x)) and ok:
            break
        if len(d_hist) >= 2 and d_hist[-1] > 0.25 * d_hist[-2]:
            mu *= 10.0
    else:
        raise InfeasiblePenalty(
            f"augmented Lagrangian did not reach feasibility: d_W = {d_hist[-1]:.3e}")
    J_star = info["J"]

    # -- penalty continuation -------------------------------------------------
    final = None
    d_stage = []
    for k in range(opts.schedule_length):
        eps = opts.eps0 * 2.0 ** (-k)

        def eval_pen(V, eps=eps):
            st = problem.state(V)
            rep, a_eps = penalized_cost(g_, st, V, eps, J_star, constraint, problem.targets)
            grad, adj = problem.gradient(V, st, rep.lambda_eps, a_eps)
            return rep.J_eps, grad, {"J": rep.J, "J_eps": rep.J_eps, "d_W": rep.d_W,
                                     "lambda_eps": rep.lambda_eps, "a_eps_norm": rep.a_eps_norm,
                                     "a_eps": a_eps, "state": st, "adjoint": adj,
                                     "report": rep, "gap": rep.J - J_star + eps}
        U, f, grad, info, residual, ok = _spg(
            problem, U, eval_pen, radius, opts, f"eps{k}", records,
            accept=lambda inf: inf["gap"] >= 0.0)
        d_stage.append(info["d_W"])
        final = (U, info, residual, ok, eps)
    if len(d_stage) > 1 and d_stage[-1] > d_stage[0] * (1 + 1e-9) and d_stage[-1] > opts.feas_tol:
        raise InfeasiblePenalty(
            f"d_W grew across the penalty schedule: {d_stage[0]:.3e} -> {d_stage[-1]:.3e}")
    U, info, residual, ok, eps = final
    if not ok:
        raise StagnationWithoutConvergence(
            f"penalized stage stopped at residual {residual:.3e} > tol {opts.tol:.1e}", residual)
    ctrl = ControlField(g_, U, radius, dt)
    mult = {"lambda": info["lambda_eps"], "a": info["a_eps"], "a_norm": info["a_eps_norm"],
            "eps": eps, "J_star": J_star}
    return OptimizeResult(ctrl, info["state"], info["adjoint"], info["report"], records, ok,
                          J_star=J_star, multipliers=mult)
