"""Backward-in-time adjoint system and the reduced gradient.

Two discretizations share one interface:

``mode="continuous"`` (default) marches the adjoint PDE system with the
time mirror of the forward scheme::

    sigma^n = sigma^{n+1} + dt [u~ . grad sigma^{n+1} + p' div(xi^{n+1}/rho~)
                                + xi^{n+1} . (f - a)/rho~ + lam (rho_d - rho)^{n+1} - s_rho^{n+1}]
    (I - dt S(./rho~)) xi^n = xi^{n+1} + dt [div(xi^{n+1} (x) u~) - (grad u~)^T xi^{n+1}
                                + rho~ grad sigma^n + lam (u_d - u)^{n+1} - s_u^{n+1}]

with ``a = d_t u~ + u~ . grad u~``, upwinding in the reversed direction and
terminal data zero.

``mode="transpose"`` runs the exact reverse sweep of the discrete forward
scheme, so the resulting gradient is the gradient of the discrete cost to
round-off.

In both modes ``xi[n]`` is the multiplier paired with the control sample
acting on ``[t_n, t_{n+1})`` and the gradient is ``lam * U_n - xi[n] / rho~``.
"""
from dataclasses import dataclass

import numpy as np

from .errors import GridMismatch, NonFiniteState
from .forward import LinearizedSystem


@dataclass
class AdjointSources:
    """Cost multiplier, tracking targets and the constraint source ``([F_rho]*a, [F_u]*a)``.

    Targets and sources are time-sampled on the state time grid; ``None``
    stands for zero.
    """

    lambda_mult: float = 1.0
    rho_d: np.ndarray = None
    u_d: np.ndarray = None
    src_rho: np.ndarray = None
    src_u: np.ndarray = None

    @property
    def constraint_active(self):
        return self.src_rho is not None or self.src_u is not None


@dataclass
class AdjointTrajectory:
    times: np.ndarray
    sigma: np.ndarray      # (N+1, *shape)
    xi: np.ndarray         # (N+1, dim, *shape)
    mode: str = "continuous"

    def norms(self, grid):
        from .grid import norm_l2
        return (np.array([norm_l2(grid, s) for s in self.sigma]),
                np.array([norm_l2(grid, x) for x in self.xi]))


def time_weights(N, dt):
    """Trapezoid weights on N+1 equispaced samples."""
    w = np.full(N + 1, dt)
    w[0] = w[-1] = 0.5 * dt
    return w


def _pointwise_sources(base, state, sources):
    """Per-level residual fields lam*(q - q_d) + s_q for q in (rho, u)."""
    lam = sources.lambda_mult
    r = lam * (state.rho - (0.0 if sources.rho_d is None else sources.rho_d))
    v = lam * (state.u - (0.0 if sources.u_d is None else sources.u_d))
    if sources.src_rho is not None:
        r = r + sources.src_rho
    if sources.src_u is not None:
        v = v + sources.src_u
    return r, v


def _check(base, state):
    g = base.grid
    N = base.nsteps
    if state.rho.shape != (N + 1,) + g.shape or state.u.shape != (N + 1, g.dim) + g.shape:
        raise GridMismatch("state trajectory does not match the base state grid/times")
    if not np.allclose(state.times, base.times):
        raise GridMismatch("state and base state use different time grids")


def solve_adjoint(base, state, sources, mode="continuous", system=None):
    """Integrate the adjoint system from t=T down to 0."""
    _check(base, state)
    system = system or LinearizedSystem(base)
    g, N, dt = base.grid, base.nsteps, base.dt
    r_src, u_src = _pointwise_sources(base, state, sources)
    omega = time_weights(N, dt)
    sig = np.zeros((N + 1, g.size))
    xi = np.zeros((N + 1, system.nu))

    if mode == "transpose":
        w_r, w_u = system.w_rho, system.w_u
        p_r = omega[N] * w_r * r_src[N].ravel()
        p_u = omega[N] * w_u * system.u_to_vec(u_src[N])
        for n in range(N - 1, -1, -1):
            xi[n] = -p_u / w_u
            sig[n] = -p_r / w_r
            p_r, p_u, _ = system.step_transpose(n, p_r, p_u)
            p_r = p_r + omega[n] * w_r * r_src[n].ravel()
            p_u = p_u + omega[n] * w_u * system.u_to_vec(u_src[n])
            if not (np.all(np.isfinite(p_r)) and np.all(np.isfinite(p_u))):
                raise NonFiniteState(f"non-finite adjoint at step {n}")
    elif mode == "continuous":
        for n in range(N - 1, -1, -1):
            Adv, Xs, Xx, Gs = system.adjoint_ops(n)
            c = omega[n + 1] / dt
            s_next, x_next = sig[n + 1], xi[n + 1]
            sig[n] = s_next + dt * (Adv @ s_next + Xs @ x_next - c * r_src[n + 1].ravel())
            rhs = x_next + dt * (Xx @ x_next + Gs @ sig[n] - c * system.u_to_vec(u_src[n + 1]))
            xi[n] = system.rho_int * system.solve_K(rhs)
            if not (np.all(np.isfinite(sig[n])) and np.all(np.isfinite(xi[n]))):
                raise NonFiniteState(f"non-finite adjoint at step {n}")
    else:
        raise ValueError(f"unknown adjoint mode {mode!r}")

    return AdjointTrajectory(
        times=base.times.copy(),
        sigma=sig.reshape((N + 1,) + g.shape),
        xi=np.array([system.vec_to_u(v) for v in xi]),
        mode=mode,
    )


def reduced_gradient(control, adjoint, lambda_mult, base):
    """``g_n = lambda_mult * U_n - xi[n] / rho~`` for every control sample."""
    U = np.asarray(getattr(control, "values", control), dtype=float)
    N = len(U)
    if adjoint.xi.shape[0] != N + 1 or adjoint.xi.shape[1:] != U.shape[1:]:
        raise GridMismatch("control and adjoint trajectories do not match")
    g = lambda_mult * U - adjoint.xi[:N] / base.rho_tilde
    g[:, :, base.grid.boundary_mask()] = 0.0
    return g
