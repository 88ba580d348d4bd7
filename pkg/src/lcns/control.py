"""Controls, tracking cost, Ekeland metric, spike variations and state constraints."""
from dataclasses import dataclass, field, replace

import numpy as np

from . import grid as G
from .adjoint import time_weights
from .errors import AlignmentError, ControlOutsideBall, GridMismatch

BALL_TOL = 1e-12


# ---------------------------------------------------------------------------
# Controls


def sample_norms(grid, values):
    """Spatial L2 norm of every time sample."""
    v = np.asarray(values, dtype=float)
    sq = (v ** 2 * grid.weights()).reshape(len(v), -1).sum(axis=1)
    return np.sqrt(sq)


@dataclass
class ControlField:
    """Piecewise-constant control: sample k acts on ``[t_k, t_{k+1})``."""

    grid: G.Grid
    values: np.ndarray          # (N, dim, *shape)
    radius: float
    dt: float

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != self.grid.dim + 2 or v.shape[1:] != (self.grid.dim,) + self.grid.shape:
            raise GridMismatch(f"control values of shape {v.shape} do not fit the grid")
        if not self.radius > 0:
            raise ValueError("ball radius must be positive")
        if not np.all(np.isfinite(v)):
            raise ValueError("control values must be finite")
        v[:, :, self.grid.boundary_mask()] = 0.0
        nrm = sample_norms(self.grid, v)
        if nrm.size and nrm.max() > self.radius * (1 + BALL_TOL) + BALL_TOL:
            k = int(np.argmax(nrm))
            raise ControlOutsideBall(
                f"sample {k} has L2 norm {nrm[k]:.6g} > R = {self.radius:.6g}")
        object.__setattr__(self, "values", v)

    @classmethod
    def zeros(cls, grid, nsteps, radius, dt):
        return cls(grid, np.zeros((nsteps, grid.dim) + grid.shape), radius, dt)

    @property
    def nsteps(self):
        return len(self.values)

    def norms(self):
        return sample_norms(self.grid, self.values)

    def with_values(self, values):
        return replace(self, values=values)


def project_to_ball(grid, g, R):
    """Project every time sample of ``g`` onto the closed L2 ball of radius R."""
    g = np.array(g, dtype=float)
    single = g.shape == (grid.dim,) + grid.shape
    if single:
        g = g[None]
    nrm = sample_norms(grid, g)
    scale = np.where(nrm > R, R / np.where(nrm > 0, nrm, 1.0), 1.0)
    out = g * scale.reshape((-1,) + (1,) * (g.ndim - 1))
    return out[0] if single else out


def ekeland_distance(U1, U2, dt):
    """Measure of the set of times where two piecewise-constant controls differ."""
    a = np.asarray(getattr(U1, "values", U1))
    b = np.asarray(getattr(U2, "values", U2))
    if a.shape != b.shape:
        raise GridMismatch("controls live on different grids")
    differ = np.any((a != b).reshape(len(a), -1), axis=1)
    return float(np.count_nonzero(differ) * dt)


def _steps(value, dt, what):
    k = value / dt
    kr = round(k)
    if abs(k - kr) > 1e-9 * max(1.0, abs(k)):
        raise AlignmentError(f"{what}={value!r} is not a multiple of dt={dt!r}")
    return int(kr)


def spike_variation(U, tau, h, W_value):
    """Replace the control by ``W_value`` on ``(tau - h, tau)``."""
    k_tau = _steps(tau, U.dt, "tau")
    k_h = _steps(h, U.dt, "h")
    if not (0 < k_h <= k_tau <= U.nsteps):
        raise AlignmentError(f"need 0 < h <= tau <= T, got h={h}, tau={tau}")
    W_value = np.asarray(W_value, dtype=float)
    nrm = G.norm_l2(U.grid, W_value)
    if nrm > U.radius * (1 + BALL_TOL) + BALL_TOL:
        raise ControlOutsideBall(f"spike value has norm {nrm:.6g} > R = {U.radius:.6g}")
    v = U.values.copy()
    v[k_tau - k_h:k_tau] = W_value
    return U.with_values(v)


# ---------------------------------------------------------------------------
# Cost


@dataclass
class Targets:
    rho_d: np.ndarray = None     # (N+1, *shape) or None for zero
    u_d: np.ndarray = None       # (N+1, dim, *shape) or None for zero


@dataclass
class CostReport:
    tracking_u: float
    tracking_rho: float
    control_energy: float
    J: float
    J_eps: float = None
    d_W: float = 0.0
    lambda_eps: float = None
    a_eps_norm: float = None

    def as_dict(self):
        return {k: v for k, v in self.__dict__.items()}


def _sq_bochner(grid, traj, dt):
    return G.bochner_norm(grid, traj, dt) ** 2


def evaluate_cost(grid, state, control, targets=None):
    """``J = 1/2 (|u - u_d|^2 + |rho - rho_d|^2 + |U|^2)`` in L2(0,T; L2)."""
    targets = targets or Targets()
    dt = state.dt
    du = state.u - (0.0 if targets.u_d is None else targets.u_d)
    dr = state.rho - (0.0 if targets.rho_d is None else targets.rho_d)
    U = np.asarray(getattr(control, "values", control), dtype=float)
    if U.shape[0] != len(state.times) - 1:
        raise GridMismatch("control and state use different time grids")
    tu = _sq_bochner(grid, du, dt)
    tr = _sq_bochner(grid, dr, dt)
    ce = float(dt * np.sum(sample_norms(grid, U) ** 2))
    return CostReport(tracking_u=tu, tracking_rho=tr, control_energy=ce, J=0.5 * (tu + tr + ce))


# ---------------------------------------------------------------------------
# Observables and convex sets


def _gauss_1d(x, width, wq):
    k = np.exp(-0.5 * ((x[:, None] - x[None, :]) / width) ** 2) * wq[None, :]
    return k / k.sum(axis=1, keepdims=True)


def _apply_axes(mats, f, lead):
    out = f
    for a, m in enumerate(mats):
        out = np.moveaxis(np.tensordot(m, out, axes=([1], [lead + a])), 0, lead + a)
    return out


class FieldObservable:
    """Linear observable ``F(rho, u) = (c_rho K rho, c_u K u)`` with K identity or a
    normalized separable Gaussian smoother. The observable space is the
    pair space L2(0,T; L2) x L2(0,T; L2^d)."""

    def __init__(self, grid, times, kind="identity", c_rho=1.0, c_u=1.0, width=0.1):
        if kind not in ("identity", "kernel"):
            raise ValueError(f"unknown observable kind {kind!r}")
        self.grid, self.times, self.kind = grid, np.asarray(times), kind
        self.c_rho, self.c_u, self.width = float(c_rho), float(c_u), float(width)
        self.omega = time_weights(len(times) - 1, float(times[1] - times[0]))
        self.w = grid.weights()
        if kind == "kernel":
            self._k = []
            self._kt = []
            for x, h, n in zip(grid.axes(), grid.spacing, grid.extents):
                wq = np.full(n + 1, h)
                wq[0] = wq[-1] = 0.5 * h
                k = _gauss_1d(x, width, wq)
                self._k.append(k)
                self._kt.append((k.T * wq[None, :]) / wq[:, None])   # W^-1 K^T W

    def _smooth(self, f, lead, adjoint=False):
        if self.kind == "identity":
            return f
        return _apply_axes(self._kt if adjoint else self._k, f, lead)

    def apply(self, rho, u):
        return (self.c_rho * self._smooth(rho, 1), self.c_u * self._smooth(u, 2))

    def adjoint(self, a):
        """Pointwise L2 representatives of ``([F_rho]* a, [F_u]* a)``."""
        return (self.c_rho * self._smooth(a[0], 1, True), self.c_u * self._smooth(a[1], 2, True))

    def inner(self, x, y):
        s = 0.0
        for p, q in zip(x, y):
            prod = (p * q * self.w).reshape(len(self.omega), -1).sum(axis=1)
            s += float(np.dot(self.omega, prod))
        return s

    def zeros(self):
        N1 = len(self.times)
        return (np.zeros((N1,) + self.grid.shape), np.zeros((N1, self.grid.dim) + self.grid.shape))

    def random(self, rng):
        return tuple(rng.standard_normal(z.shape) for z in self.zeros())


class AverageObservable:
    """Finitely many weighted space-time averages; observable space R^K.

    Each functional is ``(field, center, width)`` with field ``"rho"`` or
    ``"u<i>"``; it averages that field against a normalized Gaussian bump
    over space and uniformly over [0, T].
    """

    def __init__(self, grid, times, functionals):
        self.grid, self.times = grid, np.asarray(times)
        T = float(self.times[-1] - self.times[0])
        self.omega = time_weights(len(times) - 1, float(times[1] - times[0])) / T
        x = grid.coords()
        w = grid.weights()
        self.specs = list(functionals)
        self.bumps = []
        for name, center, width in self.specs:
            r2 = sum((x[a] - c) ** 2 for a, c in enumerate(np.atleast_1d(center)))
            b = np.exp(-0.5 * r2 / width ** 2)
            self.bumps.append(b / np.sum(w * b))
        self.w = w

    def _field(self, name, rho, u):
        return rho if name == "rho" else u[:, int(name[1:]) - 1]

    def apply(self, rho, u):
        return np.array([
            float(np.dot(self.omega, (self._field(name, rho, u) * self.w * b).reshape(len(self.omega), -1).sum(axis=1)))
            for (name, _, _), b in zip(self.specs, self.bumps)])

    def adjoint(self, a):
        N1 = len(self.times)
        src_r = np.zeros((N1,) + self.grid.shape)
        src_u = np.zeros((N1, self.grid.dim) + self.grid.shape)
        # L2(0,T;L2) representative: d/d(field) of sum_k a_k phi_k divided by the quadrature weights
        scale = self.omega / time_weights(N1 - 1, float(self.times[1] - self.times[0]))
        for ak, (name, _, _), b in zip(a, self.specs, self.bumps):
            contrib = ak * scale[:, None] * b.ravel()[None, :]
            contrib = contrib.reshape((N1,) + self.grid.shape)
            if name == "rho":
                src_r += contrib
            else:
                src_u[:, int(name[1:]) - 1] += contrib
        return src_r, src_u

    def inner(self, x, y):
        return float(np.dot(x, y))

    def zeros(self):
        return np.zeros(len(self.specs))

    def random(self, rng):
        return rng.standard_normal(len(self.specs))


def _lin(x, y, a=1.0, b=1.0):
    if isinstance(x, tuple):
        return tuple(a * p + b * q for p, q in zip(x, y))
    return a * x + b * y


@dataclass
class ConstraintSpec:
    """State constraint ``F(rho, u) in W`` with W whole space, a ball or a box.

    Ball: ``{x : |x - center| <= radius}``. Box: ``{lo <= x <= hi}`` entrywise
    (pointwise for field observables).
    """

    observable: object = None
    set_kind: str = "whole"
    center: object = None
    radius: float = 0.0
    lo: object = None
    hi: object = None
    lambda_mult: float = 1.0
    a: object = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.set_kind not in ("whole", "ball", "box"):
            raise ValueError(f"unknown constraint set {self.set_kind!r}")
        if self.set_kind != "whole" and self.observable is None:
            raise ValueError("an active constraint needs an observable")
        if self.set_kind == "ball" and not self.radius >= 0:
            raise ValueError("ball radius must be nonnegative")
        if self.set_kind == "box":
            lo = -np.inf if self.lo is None else self.lo
            hi = np.inf if self.hi is None else self.hi
            if np.any(np.asarray(lo) > np.asarray(hi)) if not isinstance(lo, tuple) else False:
                raise ValueError("box is empty (lo > hi)")

    @property
    def active(self):
        return self.set_kind != "whole"

    def observe(self, state):
        if self.observable is None:
            return None
        return self.observable.apply(state.rho, state.u)

    def inner(self, x, y):
        return self.observable.inner(x, y)

    def norm(self, x):
        return float(np.sqrt(max(self.inner(x, x), 0.0)))

    def project(self, x):
        if self.set_kind == "whole":
            return x
        if self.set_kind == "ball":
            d = _lin(x, self.center, 1.0, -1.0)
            r = self.norm(d)
            if r <= self.radius:
                return x
            return _lin(self.center, d, 1.0, self.radius / r)
        lo = self.lo if self.lo is not None else (-np.inf if not isinstance(x, tuple) else (-np.inf,) * len(x))
        hi = self.hi if self.hi is not None else (np.inf if not isinstance(x, tuple) else (np.inf,) * len(x))
        if isinstance(x, tuple):
            return tuple(np.clip(p, l, h) for p, l, h in zip(x, lo, hi))
        return np.clip(x, lo, hi)

    def distance(self, x):
        if self.set_kind == "whole":
            return 0.0
        if self.set_kind == "ball":
            return max(0.0, self.norm(_lin(x, self.center, 1.0, -1.0)) - self.radius)
        return self.norm(_lin(x, self.project(x), 1.0, -1.0))

    def subgradient(self, x):
        """Unit-norm subgradient of d_W outside W, zero inside or on the boundary."""
        if self.set_kind == "whole":
            return None if self.observable is None else self.observable.zeros()
        d = self.distance(x)
        if d <= 0.0:
            return self.observable.zeros()
        if self.set_kind == "ball":
            diff = _lin(x, self.center, 1.0, -1.0)
            return _lin(diff, diff, 1.0 / self.norm(diff), 0.0)
        diff = _lin(x, self.project(x), 1.0, -1.0)
        return _lin(diff, diff, 1.0 / d, 0.0)

    def adjoint_source(self, a):
        if self.observable is None or a is None:
            return None, None
        return self.observable.adjoint(a)

    def sample(self, rng, n, x_ref=None):
        """``n`` points of W, half of them on its boundary where it has one."""
        out = []
        for k in range(n):
            if self.set_kind == "ball":
                z = self.observable.random(rng)
                z = _lin(z, z, 1.0 / self.norm(z), 0.0)
                r = self.radius if k % 2 == 0 else self.radius * rng.uniform() ** 0.5
                out.append(_lin(self.center, z, 1.0, r))
            elif self.set_kind == "box":
                base = x_ref if x_ref is not None else self.observable.zeros()
                z = _lin(base, self.observable.random(rng), 1.0, 1.0)
                p = self.project(z)
                if k % 2 == 1:
                    # pull strictly inside along the segment towards the projected reference
                    p = _lin(p, self.project(base), 0.5, 0.5)
                out.append(p)
            else:
                base = x_ref if x_ref is not None else self.observable.zeros()
                out.append(_lin(base, self.observable.random(rng), 1.0, 1.0))
        return out


def penalized_cost(grid, state, control, eps, J_star, constraint=None, targets=None):
    """Penalized functional and its multipliers ``lambda_eps``, ``a_eps``.

    Returns ``(report, a_eps)``.
    """
    rep = evaluate_cost(grid, state, control, targets)
    gap = rep.J - J_star + eps
    if constraint is not None and constraint.active:
        x = constraint.observe(state)
        d = constraint.distance(x)
        eta = constraint.subgradient(x)
    else:
        d, eta = 0.0, None
    J_eps = float(np.hypot(gap, d))
    rep.J_eps = J_eps
    rep.d_W = d
    if J_eps > 0:
        rep.lambda_eps = gap / J_eps
        rep.a_eps_norm = d / J_eps
    else:
        rep.lambda_eps, rep.a_eps_norm = 1.0, 0.0
    a_eps = None
    if eta is not None:
        a_eps = _lin(eta, eta, rep.a_eps_norm, 0.0)
    return rep, a_eps
