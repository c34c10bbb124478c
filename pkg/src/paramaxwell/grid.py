"""Staggered (Yee, TM polarisation) discretisation of the damped Maxwell operator.

State vectors are flat float64 arrays of length ``d``. The layout is fixed:
``ez`` (interior nodes, row-major), then ``hx`` (row-major), then ``hy``
(row-major). Every numerical routine accepts arrays of shape ``(..., d)``.

Node sets on the unit square with ``dx = 1/nx``:

* ``ez[a, b]`` sits at ``((a + 1) dx, (b + 1) dx)``, shape ``(nx-1, nx-1)``;
  boundary values are zero (perfect conductor).
* ``hx[i, j]`` sits at ``(i dx, (j + 1/2) dx)``, shape ``(nx+1, nx)``.
* ``hy[i, j]`` sits at ``((i + 1/2) dx, j dx)``, shape ``(nx, nx+1)``.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
import scipy.linalg

from ._parallel import apply_rows


@dataclass(frozen=True)
class GridSpec:
    nx: int

    def __post_init__(self):
        if int(self.nx) != self.nx or self.nx < 2:
            raise ValueError(f"nx must be an integer >= 2, got {self.nx!r}")

    @property
    def dx(self) -> float:
        return float(Fraction(1, self.nx))

    @property
    def shapes(self) -> tuple[tuple[int, int], ...]:
        n = self.nx
        return ((n - 1, n - 1), (n + 1, n), (n, n + 1))

    @property
    def sizes(self) -> tuple[int, int, int]:
        return tuple(a * b for a, b in self.shapes)

    @property
    def dof(self) -> int:
        return sum(self.sizes)

    def slices(self) -> tuple[slice, slice, slice]:
        ne, nh, _ = self.sizes
        return slice(0, ne), slice(ne, ne + nh), slice(ne + nh, self.dof)

    def coordinates(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """(x, y) coordinate grids of each component's node set, in layout order."""
        n, h = self.nx, self.dx
        i_int = np.arange(1, n) * h
        i_all = np.arange(0, n + 1) * h
        i_half = (np.arange(0, n) + 0.5) * h
        return [
            np.meshgrid(i_int, i_int, indexing="ij"),
            np.meshgrid(i_all, i_half, indexing="ij"),
            np.meshgrid(i_half, i_all, indexing="ij"),
        ]


@dataclass(frozen=True)
class MaxwellCoefficients:
    eps: float = 1.0
    mu: float = 1.0
    sigma: float = 0.0

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError(f"eps must be > 0, got {self.eps}")
        if not self.mu > 0:
            raise ValueError(f"mu must be > 0, got {self.mu}")
        if not self.sigma >= 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")


@dataclass
class FieldState:
    """Component view of one state; convert with :meth:`to_vector` / :meth:`from_vector`."""

    ez: np.ndarray
    hx: np.ndarray
    hy: np.ndarray

    @classmethod
    def zeros(cls, grid: GridSpec) -> "FieldState":
        return cls(*(np.zeros(s) for s in grid.shapes))

    @classmethod
    def from_vector(cls, grid: GridSpec, u: np.ndarray) -> "FieldState":
        u = check_state(grid, u)
        if u.ndim != 1:
            raise ValueError("FieldState.from_vector expects a single state")
        return cls(*(u[s].reshape(shape).copy() for s, shape in zip(grid.slices(), grid.shapes)))

    def to_vector(self, grid: GridSpec) -> np.ndarray:
        parts = (self.ez, self.hx, self.hy)
        for name, part, shape in zip(("ez", "hx", "hy"), parts, grid.shapes):
            if np.shape(part) != shape:
                raise ValueError(f"{name} has shape {np.shape(part)}, expected {shape}")
        return np.concatenate([np.asarray(p, dtype=float).ravel() for p in parts])


def check_state(grid: GridSpec, u, finite: bool = True) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.ndim == 0 or u.shape[-1] != grid.dof:
        raise ValueError(f"state has trailing size {u.shape[-1:] or ()}, grid needs {grid.dof}")
    if finite and not np.all(np.isfinite(u)):
        raise ValueError("state contains non-finite values")
    return u


def curl_stencil(grid: GridSpec, coeffs: MaxwellCoefficients, u: np.ndarray) -> np.ndarray:
    """Apply the undamped Maxwell operator by finite-difference stencils.

    This is the defining stencil; the assembled matrix is built from it.
    """
    n, h = grid.nx, grid.dx
    u = np.asarray(u, dtype=float)
    batch = u.shape[:-1]
    se, sx, sy = grid.slices()
    ez = u[..., se].reshape(batch + grid.shapes[0])
    hx = u[..., sx].reshape(batch + grid.shapes[1])
    hy = u[..., sy].reshape(batch + grid.shapes[2])

    # ez padded with its zero boundary: index i in 0..n
    ezp = np.zeros(batch + (n + 1, n + 1))
    ezp[..., 1:n, 1:n] = ez

    # eps dEz/dt = dHy/dx - dHx/dy at interior nodes
    dhy_dx = (hy[..., 1:n, 1:n] - hy[..., 0 : n - 1, 1:n]) / h
    dhx_dy = (hx[..., 1:n, 1:n] - hx[..., 1:n, 0 : n - 1]) / h
    ez_out = (dhy_dx - dhx_dy) / coeffs.eps
    # mu dHx/dt = -dEz/dy,  mu dHy/dt = dEz/dx
    hx_out = -(ezp[..., :, 1:] - ezp[..., :, :-1]) / h / coeffs.mu
    hy_out = (ezp[..., 1:, :] - ezp[..., :-1, :]) / h / coeffs.mu

    return np.concatenate(
        [ez_out.reshape(batch + (-1,)), hx_out.reshape(batch + (-1,)), hy_out.reshape(batch + (-1,))],
        axis=-1,
    )


def weights(grid: GridSpec, coeffs: MaxwellCoefficients) -> np.ndarray:
    """Diagonal of the mass matrix of the discrete H inner product."""
    w = np.empty(grid.dof)
    se, sx, sy = grid.slices()
    area = grid.dx**2
    w[se] = coeffs.eps * area
    w[sx] = coeffs.mu * area
    w[sy] = coeffs.mu * area
    return w


def inner_product(coeffs: MaxwellCoefficients, grid: GridSpec, u, v) -> np.ndarray:
    u = check_state(grid, u, finite=False)
    v = check_state(grid, v, finite=False)
    return np.sum(weights(grid, coeffs) * u * v, axis=-1)


def h_norm(coeffs: MaxwellCoefficients, grid: GridSpec, u) -> np.ndarray:
    return np.sqrt(inner_product(coeffs, grid, u, u))


@dataclass
class DiscreteMaxwellOperator:
    grid: GridSpec
    coeffs: MaxwellCoefficients
    m_matrix: np.ndarray
    semigroup_cache: dict = field(default_factory=dict, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    @property
    def dof(self) -> int:
        return self.grid.dof

    @property
    def weights(self) -> np.ndarray:
        return weights(self.grid, self.coeffs)

    def inner(self, u, v):
        return inner_product(self.coeffs, self.grid, u, v)

    def norm(self, u):
        return h_norm(self.coeffs, self.grid, u)

    def semigroup_matrix(self, delta: float) -> np.ndarray:
        """Dense ``exp(delta (M - sigma I))``, computed once per step size."""
        delta = float(delta)
        if not delta >= 0:
            raise ValueError(f"step must be >= 0, got {delta}")
        mat = self.semigroup_cache.get(delta)
        if mat is None:
            mat = _semigroup(self, delta)
            with self._lock:
                mat = self.semigroup_cache.setdefault(delta, mat)
        return mat


def build_operator(grid: GridSpec, coeffs: MaxwellCoefficients) -> DiscreteMaxwellOperator:
    if not isinstance(grid, GridSpec):
        grid = GridSpec(int(grid))
    m = curl_stencil(grid, coeffs, np.eye(grid.dof)).T
    m = np.ascontiguousarray(m)
    m.setflags(write=False)
    return DiscreteMaxwellOperator(grid=grid, coeffs=coeffs, m_matrix=m)


def apply_curl_damped(op: DiscreteMaxwellOperator, u) -> np.ndarray:
    """``(M - sigma I) u`` through the assembled matrix."""
    u = check_state(op.grid, u, finite=False)
    return u @ op.m_matrix.T - op.coeffs.sigma * u


def _semigroup(op: DiscreteMaxwellOperator, delta: float) -> np.ndarray:
    d = op.dof
    if delta == 0.0:
        return np.eye(d)
    # W^{1/2} M W^{-1/2} is antisymmetric; exponentiate that and map back so the
    # result is orthogonal in the weighted norm up to rounding.
    sw = np.sqrt(op.weights)
    a = (sw[:, None] * op.m_matrix) / sw[None, :]
    a = 0.5 * (a - a.T)
    q = scipy.linalg.expm(delta * a)
    mat = (q / sw[:, None]) * sw[None, :]
    mat *= np.exp(-op.coeffs.sigma * delta)
    mat = np.ascontiguousarray(mat)
    mat.setflags(write=False)
    return mat


def semigroup_apply(op: DiscreteMaxwellOperator, delta: float, u) -> np.ndarray:
    u = check_state(op.grid, u)
    s = op.semigroup_matrix(delta)
    if float(delta) == 0.0:
        return u.copy()
    return apply_rows(u, s)
