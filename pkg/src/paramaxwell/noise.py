"""Truncated Q-Wiener noise with counter-based, resolution-consistent increments.

Eigenpairs are ``e_mn(x, y) = 2 sin(m pi x) sin(n pi y)`` and
``lambda_mn = (m^2 + n^2)^(-r)``.

Every Brownian increment of mode ``(m, n)`` on the finest lattice step ``s`` is a
pure function of ``(seed, sample_index, m, n, s)``: each mode has its own Philox
key and the ``s``-th normal uses raw words ``2s`` and ``2s + 1`` (Box-Muller).

Noise fields on the finest steps are snapped to the lattice ``2**-40``. Sums of
such values are exact in double precision whatever the grouping, so a window
field equals the sum of its sub-window fields bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache

import numpy as np

from .grid import GridSpec

FIELD_QUANTUM = 2.0**-40


@dataclass(frozen=True)
class NoiseBasis:
    grid: GridSpec
    n_modes: int
    decay_r: float
    modes: tuple[tuple[int, int, float], ...]
    eval_cache: np.ndarray = field(repr=False)  # (n_modes**2, dof)

    @property
    def size(self) -> int:
        return len(self.modes)

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.array([lam for _, _, lam in self.modes], dtype=float)

    @property
    def trace(self) -> float:
        return float(np.sum(self.eigenvalues))


def eigenfunction(m: int, n: int, x, y):
    return 2.0 * np.sin(m * np.pi * x) * np.sin(n * np.pi * y)


def build_basis(grid: GridSpec, n_modes: int = 8, decay_r: float = 2.0) -> NoiseBasis:
    if int(n_modes) != n_modes or n_modes < 0:
        raise ValueError(f"n_modes must be a non-negative integer, got {n_modes!r}")
    if not decay_r > 1:
        raise ValueError(f"decay_r must be > 1 for a trace-class covariance, got {decay_r}")
    pairs = [(m, n) for m in range(1, n_modes + 1) for n in range(1, n_modes + 1)]
    pairs.sort(key=lambda mn: (mn[0] ** 2 + mn[1] ** 2, mn))
    modes = tuple((m, n, float((m * m + n * n) ** (-decay_r))) for m, n in pairs)

    coords = grid.coordinates()
    table = np.empty((len(modes), grid.dof))
    for row, (m, n, _) in enumerate(modes):
        table[row] = np.concatenate([eigenfunction(m, n, x, y).ravel() for x, y in coords])
    table.setflags(write=False)
    return NoiseBasis(grid, int(n_modes), float(decay_r), modes, table)


def _mode_key(seed: int, sample_index: int, m: int, n: int) -> np.ndarray:
    return np.random.SeedSequence([int(seed), int(sample_index), m, n]).generate_state(2, np.uint64)


def standard_normals(seed: int, sample_index: int, m: int, n: int, count: int) -> np.ndarray:
    """The first ``count`` standard normals of mode ``(m, n)``; prefix-stable in ``count``."""
    bits = np.random.Philox(key=_mode_key(seed, sample_index, m, n)).random_raw(2 * count)
    bits = bits.reshape(count, 2) >> np.uint64(11)
    u1 = (bits[:, 0].astype(float) + 1.0) * 2.0**-53  # (0, 1]
    u2 = bits[:, 1].astype(float) * 2.0**-53  # [0, 1)
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


def lattice_steps(span: float, step: float, what: str = "span") -> int:
    """Exact integer ratio span/step (>= 1)."""
    ratio = _ratio(span, step)
    if ratio is None:
        raise ValueError(f"{what} {span} is not an integer multiple of step {step}")
    return ratio


@lru_cache(maxsize=4096)
def _ratio(span: float, step: float) -> int | None:
    ratio = Fraction(span) / Fraction(step)
    if ratio.denominator != 1 or ratio.numerator < 1:
        return None
    return ratio.numerator


@lru_cache(maxsize=1024)
def is_dyadic(step: float) -> bool:
    """True for an exact power of two (1/2, 1/64, 1, 4, ...)."""
    f = Fraction(step)
    if f <= 0:
        return False
    num, den = f.numerator, f.denominator
    return (num & (num - 1)) == 0 and (den & (den - 1)) == 0


@dataclass(frozen=True)
class WienerPath:
    """Brownian increments of one sample (``sample_index`` an int) or a stack of samples.

    ``increments`` has shape ``(*batch, n_modes**2, n_steps)``, where ``batch`` is
    ``()`` for one sample and ``(S,)`` for a stack.
    """

    basis: NoiseBasis
    seed: int
    sample_index: int | tuple[int, ...]
    t_end: float
    delta_ref: float
    increments: np.ndarray = field(repr=False)
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_steps(self) -> int:
        return self.increments.shape[-1]

    @property
    def batch_shape(self) -> tuple[int, ...]:
        return self.increments.shape[:-2]

    def steps(self, t0: float, t1: float) -> tuple[int, int]:
        """Lattice indices of a window, with alignment checks."""
        f0 = Fraction(t0) / Fraction(self.delta_ref)
        f1 = Fraction(t1) / Fraction(self.delta_ref)
        if f0.denominator != 1 or f1.denominator != 1:
            raise ValueError(f"window [{t0}, {t1}] is not aligned to the step {self.delta_ref}")
        s0, s1 = f0.numerator, f1.numerator
        if not 0 <= s0 <= s1 <= self.n_steps:
            raise ValueError(f"window [{t0}, {t1}] lies outside [0, {self.t_end}]")
        return s0, s1

    def finest_fields(self) -> np.ndarray:
        """Quantised noise field of every lattice step, shape ``(*batch, n_steps, dof)``.

        Computed once, one fixed-shape product per sample so the bits of a sample
        never depend on how many samples are stacked with it.
        """
        cached = self._cache.get(1)
        if cached is not None:
            return cached
        dof = self.basis.grid.dof
        nb = int(np.prod(self.batch_shape, dtype=np.int64))
        incr = self.increments.reshape(nb, self.basis.size, self.n_steps)
        out = np.zeros((nb, self.n_steps, dof))
        if self.basis.size:
            sqrt_lam = np.sqrt(self.basis.eigenvalues)
            for b in range(nb):
                coef = np.ascontiguousarray((incr[b] * sqrt_lam[:, None]).T)
                f = coef @ self.basis.eval_cache
                out[b] = np.rint(f / FIELD_QUANTUM) * FIELD_QUANTUM
        out = out.reshape(self.batch_shape + (self.n_steps, dof))
        out.setflags(write=False)
        return self._cache.setdefault(1, out)

    def level(self, width: int) -> np.ndarray:
        """Fields of the consecutive windows of ``width`` steps, ``(*batch, n_steps // width, dof)``."""
        width = int(width)
        cached = self._cache.get(width)
        if cached is not None:
            return cached
        if width < 1 or self.n_steps % width:
            raise ValueError(f"window width {width} does not tile {self.n_steps} steps")
        fine = self.finest_fields()
        # lattice values: the sum is exact, grouping is irrelevant
        out = fine.reshape(self.batch_shape + (self.n_steps // width, width, fine.shape[-1])).sum(axis=-2)
        out.setflags(write=False)
        return self._cache.setdefault(width, out)

    def window_fields(self, start, width: int) -> np.ndarray:
        """Noise fields summed over ``width`` lattice steps from each index in ``start``.

        Returns shape ``(*batch, *start.shape, dof)``.
        """
        start = np.asarray(start, dtype=np.int64)
        width = int(width)
        if width < 1:
            raise ValueError("window width must be >= 1")
        if start.size and (start.min() < 0 or start.max() + width > self.n_steps):
            raise ValueError("noise window outside the sampled path")
        nbatch = len(self.batch_shape)
        if self.n_steps % width == 0 and not np.any(start % width):
            lev = self.level(width)
            return lev[(slice(None),) * nbatch + (start // width,)]
        fine = self.finest_fields()
        idx = start[..., None] + np.arange(width)
        return fine[(slice(None),) * nbatch + (idx,)].sum(axis=-2)

    def stack_index(self, i: int) -> "WienerPath":
        """Single-sample view of a stacked path."""
        if not self.batch_shape:
            raise ValueError("path is not stacked")
        return WienerPath(self.basis, self.seed, self.sample_index[i], self.t_end,
                          self.delta_ref, self.increments[i])


def sample_path(basis: NoiseBasis, seed: int, sample_index, t_end: float, delta_ref: float) -> WienerPath:
    """Sample Brownian increments on the lattice ``delta_ref``.

    ``sample_index`` may be an int or a sequence of ints (stacked path).
    """
    if not delta_ref > 0:
        raise ValueError("delta_ref must be > 0")
    if not is_dyadic(delta_ref):
        raise ValueError(f"delta_ref {delta_ref} is not a power of two")
    n_steps = lattice_steps(t_end, delta_ref, "t_end")
    scale = np.sqrt(delta_ref)

    def one(idx: int) -> np.ndarray:
        inc = np.empty((basis.size, n_steps))
        for row, (m, n, _) in enumerate(basis.modes):
            inc[row] = scale * standard_normals(seed, idx, m, n, n_steps)
        return inc

    if np.ndim(sample_index) == 0:
        incs, sidx = one(int(sample_index)), int(sample_index)
    else:
        sidx = tuple(int(i) for i in sample_index)
        incs = np.stack([one(i) for i in sidx]) if sidx else np.empty((0, basis.size, n_steps))
    incs.setflags(write=False)
    return WienerPath(basis, int(seed), sidx, float(t_end), float(delta_ref), incs)


def increment_field(basis: NoiseBasis, path: WienerPath, t0: float, t1: float, component: str | None = None):
    """``W(t1) - W(t0)`` at the staggered nodes.

    With ``component`` in {"ez", "hx", "hy"} the grid-shaped component field is
    returned; with ``None`` the flat state-layout vector.
    """
    if path.basis is not basis and path.basis.modes != basis.modes:
        raise ValueError("path was sampled for a different basis")
    s0, s1 = path.steps(t0, t1)
    if s1 == s0:
        vec = np.zeros(path.batch_shape + (basis.grid.dof,))
    else:
        vec = path.window_fields(np.int64(s0), s1 - s0)
    if component is None:
        return vec
    names = ("ez", "hx", "hy")
    if component not in names:
        raise ValueError(f"component must be one of {names}")
    k = names.index(component)
    sl = basis.grid.slices()[k]
    return vec[..., sl].reshape(path.batch_shape + basis.grid.shapes[k])
