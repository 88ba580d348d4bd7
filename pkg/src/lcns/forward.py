"""Semi-implicit time stepping of the controlled linearized system.

Unknowns are the density perturbation ``rho`` on all nodes and the
velocity perturbation ``u`` on interior nodes (wall values are exactly
zero). One step of size ``dt`` from ``t_n``:

    rho' = rho - dt * (A_n rho + Q u)                    upwind transport
    u'   = M^{-1} [u - dt * (C_n u + P_n rho')] + dt * R U_n

with ``M = I - dt * R S`` the implicit viscous operator, ``R = 1/rho_tilde``
and ``S`` the discrete stress divergence. ``M`` is symmetric positive
definite after scaling by ``rho_tilde``; it is either factorized once or
solved by conjugate gradients.
"""
from dataclasses import dataclass, field
from functools import reduce

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import grid as G
from .base_state import coefficient_norms
from .errors import CflViolation, GridMismatch, LinearSolveDiverged, NonFiniteState

CG_RTOL = 1e-10


def _diag(v):
    return sp.diags(np.ravel(v), format="csr")


def _upwind_flux_div(grid, w):
    """Flux-form first-order upwind matrix for div(rho * w).

    Face velocities are averages of node values; boundary nodes own half
    cells and see zero flux through the wall, so the trapezoid-weighted sum
    of the result vanishes.
    """
    mats = []
    for a, (n, h) in enumerate(zip(grid.extents, grid.spacing)):
        wa = np.moveaxis(w[a], a, 0)
        face = 0.5 * (wa[1:] + wa[:-1])               # (n, ...)
        rest = int(np.prod(wa.shape[1:]))
        face = face.reshape(n, rest)
        pos = np.maximum(face, 0.0)
        neg = np.minimum(face, 0.0)
        length = np.full(n + 1, h)
        length[0] = length[-1] = 0.5 * h
        rows, cols, vals = [], [], []
        base = np.arange(rest)
        for i in range(n):
            # flux through face i+1/2: pos*rho_i + neg*rho_{i+1}
            left = i * rest + base
            right = (i + 1) * rest + base
            for target, sign in ((i, 1.0), (i + 1, -1.0)):
                tgt = target * rest + base
                rows += [tgt, tgt]
                cols += [left, right]
                vals += [sign * pos[i] / length[target], sign * neg[i] / length[target]]
        mat = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                            shape=(grid.size, grid.size))
        # the loop works in an axis-moved ordering; permute back
        perm = np.moveaxis(np.arange(grid.size).reshape(grid.shape), a, 0).ravel()
        P = sp.csr_matrix((np.ones(grid.size), (perm, np.arange(grid.size))),
                          shape=(grid.size, grid.size))
        mats.append(P @ mat @ P.T)
    return reduce(lambda x, y: x + y, mats).tocsr()


def _upwind_adjoint_advection(grid, w):
    """Matrix for w . grad(sigma) upwinded for backward-in-time transport.

    Marching from T down to 0 the characteristic speed is -w, so the
    stencil takes the neighbour in the direction of +w.
    """
    mats = []
    for a, (n, h) in enumerate(zip(grid.extents, grid.spacing)):
        wa = w[a].ravel()
        m = n + 1
        fwd = sp.diags([-np.ones(m), np.ones(m - 1)], [0, 1], shape=(m, m), format="lil")
        bwd = sp.diags([np.ones(m), -np.ones(m - 1)], [0, -1], shape=(m, m), format="lil")
        # wall rows: velocity vanishes there, keep the stencil inside the grid
        fwd[m - 1, :] = 0
        bwd[0, :] = 0
        Fa = G._along_axis(grid, fwd.tocsr() / h, a)
        Ba = G._along_axis(grid, bwd.tocsr() / h, a)
        mats.append(_diag(np.maximum(wa, 0.0)) @ Fa + _diag(np.minimum(wa, 0.0)) @ Ba)
    return reduce(lambda x, y: x + y, mats).tocsr()


def interior_selector(grid):
    """Sparse (all nodes x interior nodes) scatter matrix and the interior index list."""
    iidx = np.flatnonzero(grid.interior_mask().ravel())
    sel = sp.csr_matrix((np.ones(len(iidx)), (iidx, np.arange(len(iidx)))),
                        shape=(grid.size, len(iidx)))
    return sel, iidx


def stress_matrix(grid, params):
    """mu lap + (mu+lam) grad div on interior velocity unknowns (component-major)."""
    sel, _ = interior_selector(grid)
    pint = sel.T.tocsr()
    d = grid.dim
    mu, lam = params.mu, params.lam
    lap = sum(G.second_derivative(grid, a, a) for a in range(d))
    blocks = [[None] * d for _ in range(d)]
    for a in range(d):
        for b in range(d):
            op = (mu + lam) * G.second_derivative(grid, a, b)
            if a == b:
                op = op + mu * lap
            blocks[a][b] = pint @ op @ sel
    return sp.bmat(blocks, format="csr")


class LinearizedSystem:
    """Sparse operators of the discrete linearized system on one base state."""

    def __init__(self, base, linear_solver="direct", cg_maxiter=2000):
        self.base = base
        self.grid = grid = base.grid
        self.params = base.params
        self.dt = base.dt
        self.nsteps = base.nsteps
        self.linear_solver = linear_solver
        self.cg_maxiter = cg_maxiter
        d = grid.dim
        self.imask = grid.interior_mask().ravel()
        self.iidx = np.flatnonzero(self.imask)
        ni = len(self.iidx)
        self.ni = ni
        self.nu = d * ni
        self.nrho = grid.size
        # scatter interior component values onto all nodes
        sel = sp.csr_matrix((np.ones(ni), (self.iidx, np.arange(ni))), shape=(grid.size, ni))
        self._sel = sel
        self.E = [sp.hstack([sel if b == a else sp.csr_matrix((grid.size, ni)) for b in range(d)]).tocsr()
                  for a in range(d)]
        self.Pint = sel.T.tocsr()
        d1, _ = G.derivative_matrices(grid)
        self.d1 = d1
        rho = base.rho_tilde.ravel()
        self.rho_full = rho
        self.rho_int = np.tile(rho[self.iidx], d)
        self.R = _diag(1.0 / self.rho_int)
        self.w_rho = grid.weights().ravel()
        self.w_u = np.tile(self.w_rho[self.iidx], d)

        self.S = stress_matrix(grid, self.params)
        # div(rho~ u) with the summation-by-parts closure at wall nodes keeps
        # the total density perturbation exactly conserved
        self.dsbp = dsbp = G.sbp_derivative_matrices(grid)
        self.Q = reduce(lambda x, y: x + y,
                        [dsbp[a] @ _diag(rho) @ self.E[a] for a in range(d)]).tocsr()
        self.K = (_diag(self.rho_int) - self.dt * self.S).tocsc()
        self._lu = spla.splu(self.K) if linear_solver == "direct" else None
        self._Kdiag = self.K.diagonal()
        self._step_ops = {}
        self._adj_ops = {}

    # -- helpers ---------------------------------------------------------
    def u_to_vec(self, u):
        return np.concatenate([u[a].ravel()[self.iidx] for a in range(self.grid.dim)])

    def vec_to_u(self, v):
        out = np.zeros((self.grid.dim, self.grid.size))
        for a in range(self.grid.dim):
            out[a, self.iidx] = v[a * self.ni:(a + 1) * self.ni]
        return out.reshape((self.grid.dim,) + self.grid.shape)

    def solve_K(self, b):
        if self._lu is not None:
            return self._lu.solve(b)
        x, info = spla.cg(self.K, b, rtol=CG_RTOL, maxiter=self.cg_maxiter,
                          M=_diag(1.0 / self._Kdiag))
        bnorm = np.linalg.norm(b)
        res = np.linalg.norm(self.K @ x - b)
        if info != 0 or (bnorm > 0 and res > CG_RTOL * bnorm * 1.0001):
            raise LinearSolveDiverged(
                f"conjugate gradients stopped at relative residual {res / max(bnorm, 1e-300):.3e}")
        return x

    def step_ops(self, n):
        """(A_n, C_n, P_n) at time index n; cached (shared when the base is steady)."""
        key = 0 if self.base.steady else n
        if key in self._step_ops:
            return self._step_ops[key]
        g, base, d = self.grid, self.base, self.grid.dim
        ut = base.u_tilde[n]
        A = _upwind_flux_div(g, ut)
        J = G.jacobian(g, ut)
        adv = reduce(lambda x, y: x + y, [_diag(ut[k]) @ self.d1[k] for k in range(d)])
        blocks = [[None] * d for _ in range(d)]
        for i in range(d):
            for j in range(d):
                op = _diag(J[i, j]) @ self._sel
                if i == j:
                    op = op + adv @ self._sel
                blocks[i][j] = self.Pint @ op
        C = sp.bmat(blocks, format="csr")
        accel = base.material_accel(n)
        rinv = _diag(1.0 / base.rho_tilde)
        dp = _diag(base.dp)
        P = sp.vstack([self.Pint @ rinv @ (self.d1[i] @ dp + _diag(accel[i] - base.f[n][i]))
                       for i in range(d)]).tocsr()
        ops = (A, C, P)
        self._step_ops[key] = ops
        return ops

    # -- forward -----------------------------------------------------------
    def step(self, n, rho, u, U_n):
        """Advance flattened (rho, u) from t_n with control sample U_n (interior vector)."""
        A, C, P = self.step_ops(n)
        dt = self.dt
        rho_new = rho - dt * (A @ rho + self.Q @ u)
        rhs = u - dt * (C @ u + P @ rho_new)
        u_new = self.solve_K(self.rho_int * rhs) + dt * (U_n / self.rho_int)
        return rho_new, u_new

    def rhs(self, n, rho, u, U_n):
        """Semi-discrete right-hand side (N1, N2) at time index n."""
        A, C, P = self.step_ops(n)
        n1 = -(A @ rho + self.Q @ u)
        n2 = -(C @ u) - P @ rho + (self.S @ u + U_n) / self.rho_int
        return n1, n2

    def step_transpose(self, n, p_rho, p_u):
        """Pull Euclidean adjoints of (rho', u') back through one step.

        Returns ``(p_rho_n, p_u_n, p_U)`` where ``p_U`` is the Euclidean
        gradient with respect to the control sample ``U_n``.
        """
        A, C, P = self.step_ops(n)
        dt = self.dt
        p_U = dt * p_u / self.rho_int
        q = self.rho_int * self.solve_K(p_u)
        p_hat = p_rho - dt * (P.T @ q)
        pu = q - dt * (C.T @ q) - dt * (self.Q.T @ p_hat)
        pr = p_hat - dt * (A.T @ p_hat)
        return pr, pu, p_U

    # -- continuous adjoint operators ---------------------------------------
    def adjoint_ops(self, n):
        key = 0 if self.base.steady else n
        if key in self._adj_ops:
            return self._adj_ops[key]
        g, base, d = self.grid, self.base, self.grid.dim
        ut = base.u_tilde[n]
        Adv = _upwind_adjoint_advection(g, ut)              # u~ . grad sigma
        # Dadj_a = -W^-1 D_a^T W: central at interior nodes, one-sided at the
        # wall, and the exact pairing partner of the conservative derivative
        w = self.w_rho
        Dadj = [-(_diag(1.0 / w) @ self.dsbp[a].T @ _diag(w)).tocsr() for a in range(d)]
        rinv = _diag(1.0 / base.rho_tilde)
        dp = _diag(base.dp)
        accel = base.material_accel(n)
        coef = (base.f[n] - accel) / base.rho_tilde          # (f - a) / rho~
        # sigma rhs from xi (interior vector): p' div(xi/rho~) + xi.(f-a)/rho~
        Xs = reduce(lambda x, y: x + y,
                    [dp @ Dadj[a] @ rinv @ self.E[a] + _diag(coef[a]) @ self.E[a]
                     for a in range(d)]).tocsr()
        # xi rhs: div(xi (x) u~) - (grad u~)^T xi, interior rows
        J = G.jacobian(g, ut)
        transport = reduce(lambda x, y: x + y, [Dadj[k] @ _diag(ut[k]) for k in range(d)])
        blocks = [[None] * d for _ in range(d)]
        for i in range(d):
            for j in range(d):
                # component i of -(grad u~)^T xi is -sum_j xi_j d_i u~_j
                op = -_diag(J[j, i]) @ self._sel
                if i == j:
                    op = op + transport @ self._sel
                blocks[i][j] = self.Pint @ op
        Xx = sp.bmat(blocks, format="csr")
        # rho~ grad sigma on interior rows
        Gs = sp.vstack([self.Pint @ _diag(base.rho_tilde) @ Dadj[i] for i in range(d)]).tocsr()
        ops = (Adv, Xs, Xx, Gs)
        self._adj_ops[key] = ops
        return ops


# ---------------------------------------------------------------------------
# Trajectories


@dataclass
class EnergyReport:
    times: np.ndarray
    E: np.ndarray
    dissipation: np.ndarray
    identity_residual: np.ndarray
    groenwall_bound: np.ndarray
    identity_energy: np.ndarray = None
    terms: np.ndarray = None          # (N+1, 14) values of the identity integrands
    term_defect: np.ndarray = None
    prop_a2_lhs: np.ndarray = None
    prop_a2_bound: np.ndarray = None

    def rows(self):
        return [(t, e, d, r, b) for t, e, d, r, b in
                zip(self.times, self.E, self.dissipation, self.identity_residual,
                    self.groenwall_bound)]


@dataclass
class StateTrajectory:
    times: np.ndarray
    rho: np.ndarray                  # (N+1, *shape)
    u: np.ndarray                    # (N+1, dim, *shape)
    control: np.ndarray = None       # (N, dim, *shape)
    energy: EnergyReport = None
    meta: dict = field(default_factory=dict)

    @property
    def dt(self):
        return float(self.times[1] - self.times[0])


def _control_values(control):
    return np.asarray(getattr(control, "values", control), dtype=float)


def check_cfl(base, cfl=1.0):
    bound = base.cfl_bound(cfl)
    if base.dt > bound * (1 + 1e-12):
        raise CflViolation(f"time step {base.dt:.4g} exceeds CFL bound {bound:.4g}")
    return bound


def solve_linearized(base, control=None, rho0=None, u0=None, system=None,
                     cfl=1.0, monitor=False, linear_solver="direct"):
    """Integrate the controlled linearized system on the base-state time grid."""
    g = base.grid
    check_cfl(base, cfl)
    system = system or LinearizedSystem(base, linear_solver=linear_solver)
    N = base.nsteps
    rho0 = g.zeros_scalar() if rho0 is None else np.asarray(rho0, dtype=float)
    u0 = g.zeros_vector() if u0 is None else np.asarray(u0, dtype=float)
    if rho0.shape != g.shape or u0.shape != (g.dim,) + g.shape:
        raise GridMismatch("initial data do not match the grid")
    wall = g.boundary_mask()
    if np.abs(u0[:, wall]).max(initial=0.0) > 1e-12 * (1.0 + np.abs(u0).max()):
        raise ValueError("initial velocity must vanish on the boundary")
    u0 = u0.copy()
    u0[:, wall] = 0.0
    U = np.zeros((N, g.dim) + g.shape) if control is None else _control_values(control)
    if U.shape != (N, g.dim) + g.shape:
        raise GridMismatch(f"control shape {U.shape} does not match {(N, g.dim) + g.shape}")

    rho = rho0.ravel().copy()
    u = system.u_to_vec(u0)
    rhos, us = [rho.copy()], [u.copy()]
    for n in range(N):
        rho, u = system.step(n, rho, u, system.u_to_vec(U[n]))
        if not (np.all(np.isfinite(rho)) and np.all(np.isfinite(u))):
            raise NonFiniteState(f"non-finite state after step {n + 1}")
        rhos.append(rho.copy())
        us.append(u.copy())
    traj = StateTrajectory(
        times=base.times.copy(),
        rho=np.array(rhos).reshape((N + 1,) + g.shape),
        u=np.array([system.vec_to_u(v) for v in us]),
        control=U.copy(),
    )
    if monitor:
        traj.energy = energy_monitor(traj, base, system)
    return traj


# ---------------------------------------------------------------------------
# Energy monitors


def energy_density_integral(grid, params, rho, u):
    """Integral of 1/2 (rho^2 + |grad rho|^2 + |u|^2 + mu |grad u|^2 + (mu+lam) |div u|^2)."""
    gr = G.grad(grid, rho)
    ju = G.jacobian(grid, u)
    du = G.div(grid, u)
    return 0.5 * (G.inner(grid, rho, rho) + G.inner(grid, gr, gr) + G.inner(grid, u, u)
                  + params.mu * G.inner(grid, ju, ju)
                  + (params.mu + params.lam) * G.inner(grid, du, du))


def dissipation(grid, params, u):
    ju = G.jacobian(grid, u)
    du = G.div(grid, u)
    return params.mu * G.inner(grid, ju, ju) + (params.mu + params.lam) * G.inner(grid, du, du)


def identity_terms(base, n, rho, u, U):
    """The fourteen integrands of the energy identity at time index n."""
    g = base.grid
    ut = base.u_tilde[n]
    rt = base.rho_tilde
    gr = G.grad(g, rho)
    grt = G.grad(g, rt)
    hrt = np.stack([G.grad(g, c) for c in grt])
    Ju = G.jacobian(g, u)
    Jut = G.jacobian(g, ut)
    divu = G.div(g, u)
    divut = G.div(g, ut)
    accel = base.material_accel(n)
    ip = lambda a, b: G.inner(g, a, b)
    one = np.ones(g.shape)
    return np.array([
        -ip(rt * u, np.einsum("j...,ij...->i...", u, Jut)),
        -ip(rho * accel, u),
        ip(rho * u, base.f[n]) + ip(u, U),
        ip(rho * base.dp, divu),
        -0.5 * ip(rho ** 2, divut),
        -ip(rho * rt, divu),
        -ip(rho * u, grt),
        -0.5 * ip(divut, np.sum(gr ** 2, axis=0)),
        -ip(rho * gr, G.grad(g, divut)),
        -ip(one, np.einsum("i...,j...,ij...->...", gr, gr, Jut)),
        -ip(np.sum(gr * grt, axis=0), divu),
        -ip(rt * gr, G.grad(g, divu)),
        -ip(one, np.einsum("i...,j...,ij...->...", gr, u, hrt)),
        -ip(one, np.einsum("i...,j...,ij...->...", grt, gr, Ju)),
    ])


def groenwall_rate(coeffs, params, m, M):
    """Integrable rate A + B1 + B2 assembled from base-state coefficient norms."""
    A = (1.0 + 2.0 * coeffs["grad_u_inf"] + coeffs["accel_L3"] ** 2 + coeffs["f_L3"] ** 2
         + coeffs["dp_inf"] + M + coeffs["grad_div_u_L3"] ** 2 + coeffs["grad_rho_inf"] ** 2
         + coeffs["hess_rho_L3"] ** 2 + coeffs["div_u_inf"])
    B1 = (coeffs["f_L3"] ** 2 + coeffs["accel_L3"] ** 2 + coeffs["grad_dp_L3"] ** 2
          + coeffs["dp_inf"] ** 2 + coeffs["dp_grad_dp_L3"] ** 2)
    B2 = M * (1.0 + coeffs["grad_u_inf"] ** 2 + coeffs["u_inf"] ** 2)
    return A + B1 + B2


def groenwall_prefactor(params, m, M):
    """Explicit stand-in for the implied constant of the a priori estimate."""
    return 2.0 * (1.0 + 1.0 / params.mu) * max(1.0, M) / min(1.0, m)


def energy_monitor(traj, base, system=None):
    """Energy, dissipation, identity residual and Grönwall ceiling along a trajectory.

    The identity residual compares the change of
    ``1/2 (rho^2 + |grad rho|^2 + rho_tilde |u|^2)`` with the time integral
    (trapezoid) of its semi-discrete power, so it measures the time
    discretization defect alone.
    """
    g, params = base.grid, base.params
    system = system or LinearizedSystem(base)
    N = len(traj.times) - 1
    dt = traj.dt
    U = traj.control if traj.control is not None else np.zeros((N, g.dim) + g.shape)
    E = np.empty(N + 1)
    diss = np.empty(N + 1)
    Eid = np.empty(N + 1)
    terms = np.empty((N + 1, 14))
    defect = np.empty(N + 1)
    a2_integrand = np.empty(N + 1)
    a2_rate = np.empty(N + 1)
    rate = np.empty(N + 1)
    powers_left = np.empty(N)
    powers_right = np.empty(N)
    d1, _ = G.derivative_matrices(g)

    def power(n, rho_v, u_v, U_v):
        n1, n2 = system.rhs(n, rho_v, u_v, U_v)
        gr = [d @ rho_v for d in d1]
        gn = [d @ n1 for d in d1]
        w = system.w_rho
        return (np.sum(w * rho_v * n1) + sum(np.sum(w * a * b) for a, b in zip(gr, gn))
                + np.sum(system.w_u * system.rho_int * u_v * n2))

    rho_flat = traj.rho.reshape(N + 1, -1)
    u_vec = [system.u_to_vec(u) for u in traj.u]
    for n in range(N + 1):
        rho, u = traj.rho[n], traj.u[n]
        E[n] = energy_density_integral(g, params, rho, u)
        diss[n] = dissipation(g, params, u)
        gr = G.grad(g, rho)
        Eid[n] = 0.5 * (G.inner(g, rho, rho) + G.inner(g, gr, gr)
                        + G.inner(g, base.rho_tilde * u, u))
        Un = U[min(n, N - 1)]
        terms[n] = identity_terms(base, n, rho, u, Un)
        Uv = system.u_to_vec(Un)
        defect[n] = power(n, rho_flat[n], u_vec[n], Uv) - (terms[n].sum() - diss[n])
        coeffs = coefficient_norms(base, n)
        rate[n] = groenwall_rate(coeffs, params, base.m, base.M)
        n1, n2 = system.rhs(n, rho_flat[n], u_vec[n], Uv)
        a2_integrand[n] = (np.sum(system.w_u * n2 ** 2)
                           + np.sum(system.w_u * (system.S @ u_vec[n]) ** 2))
        a2_rate[n] = (coeffs["f_L3"] ** 2 + coeffs["accel_L3"] ** 2 + coeffs["grad_dp_L3"] ** 2
                      + coeffs["dp_inf"] ** 2 + coeffs["dp_grad_dp_L3"] ** 2 + 1.0) * \
            (G.inner(g, rho, rho) + G.inner(g, gr, gr)) + \
            base.M * (1.0 + coeffs["grad_u_inf"] ** 2 + coeffs["u_inf"] ** 2) * \
            G.inner(g, G.jacobian(g, u), G.jacobian(g, u))
        if n < N:
            powers_left[n] = power(n, rho_flat[n], u_vec[n], Uv)
            powers_right[n] = power(n, rho_flat[n + 1], u_vec[n + 1], Uv)

    cum_power = np.concatenate([[0.0], np.cumsum(0.5 * dt * (powers_left + powers_right))])
    residual = Eid - Eid[0] - cum_power
    u_energy = np.concatenate([[0.0], np.cumsum(dt * np.array(
        [G.inner(g, U[k], U[k]) for k in range(N)]))])
    cum_rate = np.concatenate([[0.0], np.cumsum(0.5 * dt * (rate[1:] + rate[:-1]))])
    K0 = groenwall_prefactor(params, base.m, base.M)
    bound = K0 * (E[0] + u_energy) * np.exp(cum_rate)
    cum = lambda v: np.concatenate([[0.0], np.cumsum(0.5 * dt * (v[1:] + v[:-1]))])
    a2_lhs = cum(a2_integrand)
    ju0 = G.jacobian(g, traj.u[0])
    du0 = G.div(g, traj.u[0])
    a2_init = 0.5 * (params.mu * G.inner(g, ju0, ju0) + (params.mu + params.lam) * G.inner(g, du0, du0))
    a2_bound = (8.0 * max(1.0, base.M) ** 2 / min(1.0, base.m) ** 2 * (1.0 + params.mu + abs(params.lam))
                * (a2_init + u_energy + cum(a2_rate)) + 0.0)
    return EnergyReport(
        times=traj.times.copy(), E=E, dissipation=diss, identity_residual=residual,
        groenwall_bound=bound, identity_energy=Eid, terms=terms, term_defect=defect,
        prop_a2_lhs=a2_lhs, prop_a2_bound=a2_bound,
    )
