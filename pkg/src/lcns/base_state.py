"""Background states for the linearization, built by manufactured forcing.

A base state ``(rho_tilde, u_tilde)`` is chosen analytically and the body
force is back-solved so that the nonlinear momentum balance holds exactly
for the discrete operators. Only families with steady density and
``div(rho_tilde * u_tilde) = 0`` are supported, which keeps the mass
equation satisfied without a nonlinear solve.
"""
from dataclasses import dataclass, field

import numpy as np

from . import grid as G
from .errors import MassResidual, PositivityViolation


@dataclass(frozen=True)
class PressureLaw:
    """Barotropic law, either a polynomial ``sum c_k r**k`` or ``kappa * r**gamma``."""

    kind: str = "polynomial"
    coeffs: tuple = (0.0, 1.0)
    kappa: float = 1.0
    gamma: float = 1.4

    def p(self, r):
        r = np.asarray(r, dtype=float)
        if self.kind == "power":
            return self.kappa * r ** self.gamma
        return np.polynomial.polynomial.polyval(r, self.coeffs)

    def dp(self, r):
        r = np.asarray(r, dtype=float)
        if self.kind == "power":
            return self.kappa * self.gamma * r ** (self.gamma - 1.0)
        return np.polynomial.polynomial.polyval(r, np.polynomial.polynomial.polyder(self.coeffs))

    @classmethod
    def linear(cls, c2=1.0):
        return cls("polynomial", (0.0, float(c2)))

    @classmethod
    def quadratic(cls):
        return cls("polynomial", (0.0, 0.0, 1.0))


@dataclass(frozen=True, eq=False)
class BaseState:
    grid: G.Grid
    params: G.FluidParams
    times: np.ndarray
    rho_tilde: np.ndarray        # steady, shape grid.shape
    u_tilde: np.ndarray          # (N+1, dim, *shape)
    dt_u_tilde: np.ndarray       # (N+1, dim, *shape)
    f: np.ndarray                # (N+1, dim, *shape)
    pressure_law: PressureLaw
    m: float
    M: float
    mass_residual: float = 0.0
    name: str = "custom"
    steady: bool = False
    meta: dict = field(default_factory=dict)

    @property
    def dt(self):
        return float(self.times[1] - self.times[0])

    @property
    def nsteps(self):
        return len(self.times) - 1

    @property
    def dp(self):
        """p'(rho_tilde) as a scalar field."""
        return self.pressure_law.dp(self.rho_tilde)

    def material_accel(self, n):
        """dt u_tilde + u_tilde . grad u_tilde at time index n."""
        u = self.u_tilde[n]
        return self.dt_u_tilde[n] + G.advect(self.grid, u, u)

    def max_speed(self):
        return float(np.max(np.sqrt(np.sum(self.u_tilde ** 2, axis=1))))

    def sound_speed(self):
        return float(np.sqrt(np.max(np.abs(self.dp))))

    def cfl_bound(self, cfl=1.0):
        """Largest admissible time step for the explicit transport/coupling terms."""
        return cfl * self.grid.h / max(self.max_speed() + self.sound_speed(), 1.0)


def _as_times(times):
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or len(times) < 2:
        raise ValueError("need at least two time levels")
    steps = np.diff(times)
    if not np.allclose(steps, steps[0], rtol=1e-12, atol=0):
        raise ValueError("time grid must be uniform")
    return times


def time_grid(T, nsteps):
    return np.linspace(0.0, float(T), int(nsteps) + 1)


def manufacture(rho_expr, u_expr, pressure_law, grid, times, params,
                dt_u_expr=None, m=None, M=None, tol=1e-10, name="custom"):
    """Build a base state and back-solve the body force.

    ``rho_expr(x)`` gives the steady density, ``u_expr(t, x)`` and
    ``dt_u_expr(t, x)`` the velocity and its analytic time derivative
    (``None`` means a steady velocity). ``x`` is ``grid.coords()``.
    """
    times = _as_times(times)
    x = grid.coords()
    rho = np.broadcast_to(np.asarray(rho_expr(x), dtype=float), grid.shape).copy()
    rmin, rmax = float(rho.min()), float(rho.max())
    m = rmin if m is None else float(m)
    M = rmax if M is None else float(M)
    if not (m > 0 and rmin >= m * (1 - 1e-12)):
        raise PositivityViolation(f"density minimum {rmin:.6g} violates lower bound m={m:.6g}")
    if rmax > M * (1 + 1e-12):
        raise PositivityViolation(f"density maximum {rmax:.6g} exceeds M={M:.6g}")

    bmask = grid.boundary_mask()
    u_all, du_all, f_all = [], [], []
    dp = pressure_law.dp(rho)
    pressure_force = dp * G.grad(grid, rho)      # grad p(rho) by the chain rule
    for t in times:
        u = np.broadcast_to(np.asarray(u_expr(t, x), dtype=float), (grid.dim,) + grid.shape).copy()
        du = (np.zeros_like(u) if dt_u_expr is None else
              np.broadcast_to(np.asarray(dt_u_expr(t, x), dtype=float), u.shape).copy())
        trace = np.abs(u[:, bmask]).max()
        if trace > 1e-10 * max(1.0, np.abs(u).max()):
            raise ValueError(f"velocity does not vanish on the boundary (trace {trace:.3g})")
        u[:, bmask] = 0.0
        du[:, bmask] = 0.0
        f = du + G.advect(grid, u, u) + (pressure_force - G.stress_div(grid, u, params)) / rho
        u_all.append(u)
        du_all.append(du)
        f_all.append(f)
    u_all = np.array(u_all)

    imask = grid.interior_mask()
    residual = 0.0
    scale = 1.0
    for u in u_all:
        r = G.div(grid, rho * u)
        residual = max(residual, float(np.abs(r[imask]).max()))
        scale = max(scale, float(np.abs(rho * u).max()))
    if residual > tol * scale:
        raise MassResidual(f"mass residual {residual:.3e} exceeds {tol * scale:.3e}")

    return BaseState(
        grid=grid, params=params, times=times, rho_tilde=rho, u_tilde=u_all,
        dt_u_tilde=np.array(du_all), f=np.array(f_all), pressure_law=pressure_law,
        m=m, M=M, mass_residual=residual, name=name,
        steady=dt_u_expr is None,
    )


# ---------------------------------------------------------------------------
# Shipped families


def rest_state(grid, times, params, rho0=1.0, pressure_law=None):
    pressure_law = pressure_law or PressureLaw.linear()
    return manufacture(lambda x: rho0 * np.ones(x.shape[1:]),
                       lambda t, x: np.zeros_like(x), pressure_law, grid, times,
                       params, name="rest")


def stratified_state(grid, times, params, rho0=2.0, amp=1.0, pressure_law=None):
    """Steady density ``rho0 + amp*sin(pi x_1)`` at rest."""
    pressure_law = pressure_law or PressureLaw.quadratic()
    return manufacture(lambda x: rho0 + amp * np.sin(np.pi * x[0] / grid.lengths[0]),
                       lambda t, x: np.zeros_like(x), pressure_law, grid, times,
                       params, name="stratified")


def taylor_velocity(x, lengths):
    X = np.pi * x[0] / lengths[0]
    Y = np.pi * x[1] / lengths[1]
    return np.stack([np.sin(X) ** 2 * np.sin(2 * Y), -np.sin(2 * X) * np.sin(Y) ** 2]
                    + [np.zeros_like(X)] * (x.shape[0] - 2))


def taylor_state(grid, times, params, amp=0.1, omega=0.0, rho0=1.0, pressure_law=None):
    """Divergence-free Taylor-style vortex, amplitude ``amp*cos(omega t)``.

    Requires dim >= 2 and a square cross-section in the first two axes for
    the discrete divergence to vanish at interior nodes.
    """
    if grid.dim < 2:
        raise ValueError("the Taylor family needs at least two dimensions")
    pressure_law = pressure_law or PressureLaw.linear()
    L = grid.lengths
    u_expr = lambda t, x: amp * np.cos(omega * t) * taylor_velocity(x, L)
    dt_u_expr = None
    if omega != 0.0:
        dt_u_expr = lambda t, x: -amp * omega * np.sin(omega * t) * taylor_velocity(x, L)
    return manufacture(lambda x: rho0 * np.ones(x.shape[1:]), u_expr, pressure_law,
                       grid, times, params, dt_u_expr=dt_u_expr, name="taylor")


def vortex_state(grid, times, params, amp=0.1, rho0=1.0, delta=0.5, pressure_law=None):
    """Taylor vortex carrying a density constant along its streamlines.

    The discrete mass residual is a truncation error of order h**2, so the
    tolerance is scaled accordingly.
    """
    if grid.dim < 2:
        raise ValueError("the vortex family needs at least two dimensions")
    pressure_law = pressure_law or PressureLaw.linear()
    L = grid.lengths

    def rho(x):
        return rho0 + delta * (np.sin(np.pi * x[0] / L[0]) * np.sin(np.pi * x[1] / L[1])) ** 2

    return manufacture(rho, lambda t, x: amp * taylor_velocity(x, L), pressure_law,
                       grid, times, params, tol=50.0 * grid.h ** 2, name="vortex")


FAMILIES = {
    "rest": rest_state,
    "stratified": stratified_state,
    "taylor": taylor_state,
    "vortex": vortex_state,
}


def make_base(family, grid, times, params, **kwargs):
    try:
        builder = FAMILIES[family]
    except KeyError:
        raise ValueError(f"unknown base-state family {family!r}; known: {sorted(FAMILIES)}")
    return builder(grid, times, params, **kwargs)


# ---------------------------------------------------------------------------
# Validation report


@dataclass
class BaseReport:
    rho_min: float
    rho_max: float
    m: float
    M: float
    mass_residual: float
    boundary_trace: float
    coefficients: dict          # name -> per-time array
    violations: list

    def max_coefficients(self):
        return {k: float(np.max(v)) for k, v in self.coefficients.items()}


def coefficient_norms(base, n):
    """Norms of base-state coefficients entering the a priori energy bounds."""
    g = base.grid
    u = base.u_tilde[n]
    grad_u = G.jacobian(g, u)
    grad_rho = G.grad(g, base.rho_tilde)
    hess_rho = np.stack([G.grad(g, c) for c in grad_rho])
    dp = base.dp
    return {
        "grad_u_inf": G.norm_lp(g, grad_u, np.inf),
        "accel_L3": G.norm_lp(g, base.material_accel(n), 3),
        "grad_rho_inf": G.norm_lp(g, grad_rho, np.inf),
        "hess_rho_L3": G.norm_lp(g, hess_rho, 3),
        "dp_inf": G.norm_lp(g, dp, np.inf),
        "grad_dp_L3": G.norm_lp(g, G.grad(g, dp), 3),
        "dp_grad_dp_L3": G.norm_lp(g, dp * G.grad(g, dp), 3),
        "grad_div_u_L3": G.norm_lp(g, G.grad(g, G.div(g, u)), 3),
        "div_u_inf": G.norm_lp(g, G.div(g, u), np.inf),
        "f_L3": G.norm_lp(g, base.f[n], 3),
        "u_inf": G.norm_lp(g, u, np.inf),
        "rho_inf": float(np.abs(base.rho_tilde).max()),
    }


def validate(base):
    """Report-only check of the base-state hypotheses; never raises."""
    g = base.grid
    bmask = g.boundary_mask()
    violations = []
    rmin, rmax = float(base.rho_tilde.min()), float(base.rho_tilde.max())
    if not (rmin > 0 and rmin >= base.m * (1 - 1e-12)):
        violations.append("PositivityViolation")
    imask = g.interior_mask()
    residual = max(float(np.abs(G.div(g, base.rho_tilde * u)[imask]).max())
                   for u in base.u_tilde)
    trace = float(np.abs(base.u_tilde[:, :, bmask]).max()) if base.u_tilde.size else 0.0
    per_time = [coefficient_norms(base, n) for n in range(len(base.times))]
    coeffs = {k: np.array([c[k] for c in per_time]) for k in per_time[0]}
    return BaseReport(rmin, rmax, base.m, base.M, residual, trace, coeffs, violations)


def unchecked_base(grid, params, times, rho_tilde, u_tilde=None, pressure_law=None):
    """Assemble a BaseState without the positivity guard (for validation tests)."""
    times = _as_times(times)
    n = len(times)
    zeros = np.zeros((n, grid.dim) + grid.shape)
    u_tilde = zeros if u_tilde is None else u_tilde
    rho_tilde = np.asarray(rho_tilde, dtype=float)
    return BaseState(grid, params, times, rho_tilde, u_tilde, zeros.copy(), zeros.copy(),
                     pressure_law or PressureLaw.linear(), m=float(rho_tilde.min()),
                     M=float(rho_tilde.max()), name="unchecked", steady=True)
