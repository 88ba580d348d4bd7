"""Structured node grids, field helpers and discrete differential operators.

Fields are plain numpy arrays. A scalar field on a grid has shape
``grid.shape`` (one value per node), a vector field has shape
``(grid.dim, *grid.shape)``. Nodes include the boundary, so the no-slip
condition is imposed by holding boundary values of velocity-like fields at
exactly zero.

All operators are second order: central differences at interior nodes and
one-sided three-point (first derivative) or four-point (second derivative)
stencils on the boundary. The sparse matrices are cached per grid.
"""
from dataclasses import dataclass
from functools import lru_cache, reduce

import numpy as np
import scipy.sparse as sp

from .errors import GridMismatch, ParameterViolation


@dataclass(frozen=True)
class Grid:
    """Uniform node grid on the box ``[0, L_1] x ... x [0, L_d]``.

    ``extents`` counts cells per axis, so there are ``extents[a] + 1`` nodes
    along axis ``a``.
    """

    extents: tuple
    lengths: tuple = None

    def __post_init__(self):
        extents = tuple(int(n) for n in np.atleast_1d(self.extents))
        lengths = self.lengths
        if lengths is None:
            lengths = (1.0,) * len(extents)
        lengths = tuple(float(v) for v in np.atleast_1d(lengths))
        object.__setattr__(self, "extents", extents)
        object.__setattr__(self, "lengths", lengths)
        if not 1 <= len(extents) <= 3:
            raise ValueError(f"grid dimension must be 1, 2 or 3, got {len(extents)}")
        if len(lengths) != len(extents):
            raise ValueError("lengths and extents differ in length")
        if min(extents) < 4:
            raise ValueError("need at least 4 cells per axis")
        if min(lengths) <= 0:
            raise ValueError("box lengths must be positive")

    @property
    def dim(self):
        return len(self.extents)

    @property
    def spacing(self):
        return tuple(L / n for L, n in zip(self.lengths, self.extents))

    @property
    def shape(self):
        return tuple(n + 1 for n in self.extents)

    @property
    def size(self):
        return int(np.prod(self.shape))

    @property
    def volume(self):
        return float(np.prod(self.lengths))

    @property
    def h(self):
        """Largest spacing, used in tolerance and CFL formulas."""
        return max(self.spacing)

    def axes(self):
        return [np.linspace(0.0, L, n + 1) for L, n in zip(self.lengths, self.extents)]

    def coords(self):
        """Node coordinates, shape ``(dim, *shape)``."""
        return np.stack(np.meshgrid(*self.axes(), indexing="ij"))

    def refine(self, factor=2):
        return Grid(tuple(factor * n for n in self.extents), self.lengths)

    def boundary_mask(self):
        mask = np.zeros(self.shape, dtype=bool)
        for a in range(self.dim):
            idx = [slice(None)] * self.dim
            idx[a] = 0
            mask[tuple(idx)] = True
            idx[a] = -1
            mask[tuple(idx)] = True
        return mask

    def interior_mask(self):
        return ~self.boundary_mask()

    def weights(self):
        """Trapezoid quadrature weights (node control-volume sizes)."""
        w1 = []
        for h, n in zip(self.spacing, self.extents):
            w = np.full(n + 1, h)
            w[0] = w[-1] = 0.5 * h
            w1.append(w)
        return reduce(np.multiply.outer, w1)

    def zeros_scalar(self):
        return np.zeros(self.shape)

    def zeros_vector(self):
        return np.zeros((self.dim,) + self.shape)


@dataclass(frozen=True)
class FluidParams:
    """Shear viscosity ``mu`` and bulk viscosity ``eta``.

    ``lam = eta - 2 mu / 3`` is the second Lamé-type coefficient.
    """

    mu: float = 1.0
    eta: float = 0.0

    def __post_init__(self):
        if not self.mu > 0:
            raise ParameterViolation(f"shear viscosity must be positive, got mu={self.mu}")
        if not 4 * self.mu + 3 * self.lam > 0:
            raise ParameterViolation(
                f"need 4*mu + 3*lam > 0, got mu={self.mu}, lam={self.lam}"
            )

    @property
    def lam(self):
        return self.eta - 2.0 * self.mu / 3.0

    @classmethod
    def from_lame(cls, mu, lam):
        return cls(mu=mu, eta=lam + 2.0 * mu / 3.0)


# ---------------------------------------------------------------------------
# 1D stencils


def _d1_matrix(n, h):
    """First derivative on n+1 nodes, one-sided second order at the ends."""
    m = n + 1
    rows, cols, vals = [], [], []
    for i in range(1, m - 1):
        rows += [i, i]
        cols += [i - 1, i + 1]
        vals += [-0.5 / h, 0.5 / h]
    rows += [0, 0, 0, m - 1, m - 1, m - 1]
    cols += [0, 1, 2, m - 1, m - 2, m - 3]
    vals += [-1.5 / h, 2.0 / h, -0.5 / h, 1.5 / h, -2.0 / h, 0.5 / h]
    return sp.csr_matrix((vals, (rows, cols)), shape=(m, m))


def _d1_sbp_matrix(n, h):
    """Summation-by-parts first derivative: central inside, [-1, 1]/h at the ends.

    With trapezoid weights H it satisfies H D + (H D)^T = diag(-1, 0, ..., 0, 1).
    """
    m = n + 1
    d = _d1_matrix(n, h).tolil()
    d[0, :] = 0
    d[m - 1, :] = 0
    d[0, 0], d[0, 1] = -1.0 / h, 1.0 / h
    d[m - 1, m - 1], d[m - 1, m - 2] = 1.0 / h, -1.0 / h
    return d.tocsr()


def _d2_matrix(n, h):
    """Compact second derivative, one-sided four-point stencil at the ends."""
    m = n + 1
    h2 = h * h
    rows, cols, vals = [], [], []
    for i in range(1, m - 1):
        rows += [i, i, i]
        cols += [i - 1, i, i + 1]
        vals += [1.0 / h2, -2.0 / h2, 1.0 / h2]
    for i, sgn in ((0, 1), (m - 1, -1)):
        rows += [i] * 4
        cols += [i, i + sgn, i + 2 * sgn, i + 3 * sgn]
        vals += [2.0 / h2, -5.0 / h2, 4.0 / h2, -1.0 / h2]
    return sp.csr_matrix((vals, (rows, cols)), shape=(m, m))


def _along_axis(grid, mat, axis):
    mats = [sp.identity(s, format="csr") for s in grid.shape]
    mats[axis] = mat
    return reduce(lambda a, b: sp.kron(a, b, format="csr"), mats)


@lru_cache(maxsize=32)
def derivative_matrices(grid):
    """Per-axis sparse first and second derivative matrices on flattened nodes."""
    d1 = [_along_axis(grid, _d1_matrix(n, h), a)
          for a, (n, h) in enumerate(zip(grid.extents, grid.spacing))]
    d2 = [_along_axis(grid, _d2_matrix(n, h), a)
          for a, (n, h) in enumerate(zip(grid.extents, grid.spacing))]
    return d1, d2


@lru_cache(maxsize=32)
def sbp_derivative_matrices(grid):
    """Per-axis summation-by-parts first derivatives (used for conservative fluxes)."""
    return [_along_axis(grid, _d1_sbp_matrix(n, h), a)
            for a, (n, h) in enumerate(zip(grid.extents, grid.spacing))]


@lru_cache(maxsize=32)
def second_derivative(grid, a, b):
    """Sparse matrix for d^2/dx_a dx_b (compact when a == b)."""
    d1, d2 = derivative_matrices(grid)
    if a == b:
        return d2[a]
    return (d1[a] @ d1[b]).tocsr()


# ---------------------------------------------------------------------------
# Field operators


def _check_scalar(grid, s):
    s = np.asarray(s, dtype=float)
    if s.shape != grid.shape:
        raise GridMismatch(f"scalar field shape {s.shape} does not match grid {grid.shape}")
    return s


def _check_vector(grid, v):
    v = np.asarray(v, dtype=float)
    if v.shape != (grid.dim,) + grid.shape:
        raise GridMismatch(
            f"vector field shape {v.shape} does not match {(grid.dim,) + grid.shape}"
        )
    return v


def grad(grid, s):
    s = _check_scalar(grid, s).ravel()
    d1, _ = derivative_matrices(grid)
    return np.stack([(d @ s).reshape(grid.shape) for d in d1])


def div(grid, v):
    v = _check_vector(grid, v)
    d1, _ = derivative_matrices(grid)
    out = np.zeros(grid.size)
    for a in range(grid.dim):
        out += d1[a] @ v[a].ravel()
    return out.reshape(grid.shape)


def laplacian(grid, s):
    """Scalar Laplacian; vector input is treated componentwise."""
    s = np.asarray(s, dtype=float)
    _, d2 = derivative_matrices(grid)
    if s.shape == grid.shape:
        flat = s.ravel()
        return sum(d @ flat for d in d2).reshape(grid.shape)
    _check_vector(grid, s)
    return np.stack([laplacian(grid, c) for c in s])


def grad_div(grid, v):
    v = _check_vector(grid, v)
    out = np.zeros_like(v)
    for a in range(grid.dim):
        acc = np.zeros(grid.size)
        for b in range(grid.dim):
            acc += second_derivative(grid, a, b) @ v[b].ravel()
        out[a] = acc.reshape(grid.shape)
    return out


def stress_div(grid, u, params):
    """Divergence of the Newtonian stress: mu*lap(u) + (mu+lam)*grad(div u)."""
    u = _check_vector(grid, u)
    return params.mu * laplacian(grid, u) + (params.mu + params.lam) * grad_div(grid, u)


def jacobian(grid, v):
    """``J[i, j] = d v_i / d x_j`` with shape ``(dim, dim, *shape)``."""
    v = _check_vector(grid, v)
    return np.stack([grad(grid, v[i]) for i in range(grid.dim)])


def advect(grid, w, v):
    """(w . grad) v for vector v, or w . grad s for scalar s."""
    w = _check_vector(grid, w)
    v = np.asarray(v, dtype=float)
    if v.shape == grid.shape:
        return np.einsum("j...,j...->...", w, grad(grid, v))
    return np.einsum("j...,ij...->i...", w, jacobian(grid, v))


# Adjoint-stencil variants: exact negative transposes in the trapezoid
# inner product, so inner(grad s, v) + inner(s, div_adjoint v) == 0 exactly.


def div_adjoint(grid, v):
    v = _check_vector(grid, v)
    d1, _ = derivative_matrices(grid)
    w = grid.weights().ravel()
    out = np.zeros(grid.size)
    for a in range(grid.dim):
        out -= d1[a].T @ (w * v[a].ravel())
    return (out / w).reshape(grid.shape)


def grad_adjoint(grid, s):
    s = _check_scalar(grid, s)
    d1, _ = derivative_matrices(grid)
    w = grid.weights().ravel()
    ws = w * s.ravel()
    return np.stack([(-(d.T @ ws) / w).reshape(grid.shape) for d in d1])


# ---------------------------------------------------------------------------
# Inner products and norms


def inner(grid, a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.shape[-grid.dim:] != grid.shape:
        raise GridMismatch(f"cannot pair fields of shapes {a.shape} and {b.shape}")
    w = grid.weights()
    return float(np.sum(w * (a * b).reshape((-1,) + grid.shape)))


def norm_l2(grid, a):
    return float(np.sqrt(max(inner(grid, a, a), 0.0)))


def norm_h1(grid, a):
    a = np.asarray(a, dtype=float)
    if a.shape == grid.shape:
        g = grad(grid, a)
        return float(np.sqrt(inner(grid, a, a) + inner(grid, g, g)))
    g = jacobian(grid, a)
    return float(np.sqrt(inner(grid, a, a) + inner(grid, g, g)))


def norm_lp(grid, a, p):
    """Discrete L^p norm of a scalar/vector/tensor field (pointwise Euclidean)."""
    a = np.asarray(a, dtype=float)
    mag = np.sqrt(np.sum(a.reshape((-1,) + grid.shape) ** 2, axis=0))
    if np.isinf(p):
        return float(mag.max())
    return float(np.sum(grid.weights() * mag ** p) ** (1.0 / p))


def bochner_norm(grid, traj, dt):
    """L2-in-time norm of a field trajectory using the trapezoid rule in time."""
    traj = np.asarray(traj, dtype=float)
    if len(traj) == 0:
        return 0.0
    sq = np.array([inner(grid, f, f) for f in traj])
    if len(sq) == 1:
        return 0.0
    return float(np.sqrt(dt * (sq.sum() - 0.5 * (sq[0] + sq[-1]))))
