"""Stochastic exponential integrator, used as coarse, fine and reference propagator.

One step over ``[t0, t1]`` with ``h = t1 - t0`` is::

    u' = S(h) (u + h F(u) + B(u) dW)

which is ``S(h) u + S(h) F(u) h + S(h) B(u) dW`` with the semigroup applied once
to the combined vector. ``B`` is evaluated at the left end point (Ito).

States may carry leading axes: ``(*path.batch_shape, *n.shape, dof)`` where
``n`` holds coarse interval indices (1-based).
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from ._parallel import apply_rows
from .grid import DiscreteMaxwellOperator, check_state
from .noise import WienerPath, is_dyadic, lattice_steps

DRIFT_KINDS = ("u_plus_cos", "cos", "zero", "linear", "constant")
DIFFUSION_KINDS = ("sin", "identity", "zero", "constant")

_KIND_RE = re.compile(r"^\s*([a-z_]+)\s*(?:\(\s*([^()]*?)\s*\))?\s*$")


def parse_kind(text: str, allowed: tuple[str, ...]) -> tuple[str, float]:
    """Parse ``"cos"`` or ``"linear(0.5)"`` into ``(kind, parameter)``."""
    m = _KIND_RE.match(str(text))
    if not m or m.group(1) not in allowed:
        raise ValueError(f"unknown kind {text!r}; expected one of {allowed}")
    kind, arg = m.group(1), m.group(2)
    needs_arg = kind in ("linear", "constant")
    if needs_arg and arg is None:
        raise ValueError(f"{kind} needs a parameter, e.g. {kind}(1.0)")
    if not needs_arg and arg is not None:
        raise ValueError(f"{kind} takes no parameter")
    param = float(arg) if needs_arg else 0.0
    if not np.isfinite(param):
        raise ValueError(f"parameter of {kind} must be finite")
    return kind, param


@dataclass(frozen=True)
class NonlinearitySpec:
    """Pointwise drift ``f`` and diffusion ``g``; ``F(u) = f(u)``, ``B(u) dW = g(u) * dW``."""

    drift_kind: str = "u_plus_cos"
    diffusion_kind: str = "sin"
    drift_param: float = 0.0
    diffusion_param: float = 0.0

    def __post_init__(self):
        if self.drift_kind not in DRIFT_KINDS:
            raise ValueError(f"drift_kind must be one of {DRIFT_KINDS}")
        if self.diffusion_kind not in DIFFUSION_KINDS:
            raise ValueError(f"diffusion_kind must be one of {DIFFUSION_KINDS}")

    @classmethod
    def parse(cls, drift: str, diffusion: str) -> "NonlinearitySpec":
        dk, dp = parse_kind(drift, DRIFT_KINDS)
        gk, gp = parse_kind(diffusion, DIFFUSION_KINDS)
        return cls(dk, gk, dp, gp)

    @property
    def drift_label(self) -> str:
        return _label(self.drift_kind, self.drift_param)

    @property
    def diffusion_label(self) -> str:
        return _label(self.diffusion_kind, self.diffusion_param)

    @property
    def drift_lipschitz(self) -> float:
        return {"u_plus_cos": 2.0, "cos": 1.0, "zero": 0.0, "constant": 0.0}.get(
            self.drift_kind, abs(self.drift_param)
        )

    @property
    def diffusion_lipschitz(self) -> float:
        return {"sin": 1.0, "identity": 1.0}.get(self.diffusion_kind, 0.0)

    @property
    def deterministic(self) -> bool:
        return self.diffusion_kind == "zero" or (
            self.diffusion_kind == "constant" and self.diffusion_param == 0.0
        )


def _label(kind: str, param: float) -> str:
    return f"{kind}({param:g})" if kind in ("linear", "constant") else kind


def drift_values(spec: NonlinearitySpec, u: np.ndarray) -> np.ndarray | None:
    """``f(u)`` pointwise, or ``None`` when identically zero."""
    k = spec.drift_kind
    if k == "u_plus_cos":
        return u + np.cos(u)
    if k == "cos":
        return np.cos(u)
    if k == "linear":
        return spec.drift_param * u
    if k == "constant" and spec.drift_param != 0.0:
        return np.full_like(u, spec.drift_param)
    return None


def diffusion_values(spec: NonlinearitySpec, u: np.ndarray) -> np.ndarray | None:
    """``g(u)`` pointwise, or ``None`` when identically zero."""
    k = spec.diffusion_kind
    if k == "sin":
        return np.sin(u)
    if k == "identity":
        return u
    if k == "constant" and spec.diffusion_param != 0.0:
        return np.full_like(u, spec.diffusion_param)
    return None


def apply_drift(spec: NonlinearitySpec, u) -> np.ndarray:
    u = _finite(u)
    f = drift_values(spec, u)
    return np.zeros_like(u) if f is None else f


def apply_diffusion(spec: NonlinearitySpec, u, dW) -> np.ndarray:
    u = _finite(u)
    dW = np.asarray(dW, dtype=float)
    if dW.shape != u.shape:
        raise ValueError(f"noise shape {dW.shape} does not match state shape {u.shape}")
    g = diffusion_values(spec, u)
    return np.zeros_like(u) if g is None else g * dW


def _finite(u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if not np.all(np.isfinite(u)):
        raise ValueError("state contains non-finite values")
    return u


@dataclass(frozen=True)
class TimeGridSpec:
    """Coarse step ``delta_T``, ``j_sub`` fine steps per coarse step, reference oversampling ``rho_ref``."""

    t_end: float
    delta_T: float
    j_sub: int = 4
    rho_ref: int = 16

    def __post_init__(self):
        if not is_dyadic(self.delta_T):
            raise ValueError(f"delta_T must be a power of two, got {self.delta_T}")
        lattice_steps(self.t_end, self.delta_T, "t_end")
        for name in ("j_sub", "rho_ref"):
            v = getattr(self, name)
            if int(v) != v or not is_dyadic(int(v)):
                raise ValueError(f"{name} must be a power of two >= 1, got {v}")

    @property
    def n_intervals(self) -> int:
        return lattice_steps(self.t_end, self.delta_T)

    @property
    def dt(self) -> float:
        return float(Fraction(self.delta_T) / self.j_sub)

    @property
    def dt_ref(self) -> float:
        return float(Fraction(self.delta_T) / (self.j_sub * self.rho_ref))

    def times(self) -> np.ndarray:
        return np.arange(self.n_intervals + 1) * self.delta_T


def _window_steps(path: WienerPath, h: float) -> int:
    try:
        return lattice_steps(h, path.delta_ref, "step")
    except ValueError:
        raise ValueError(f"step {h} is not a multiple of the noise lattice {path.delta_ref}") from None


def _step(op, spec, u, h, dW):
    """One exponential step with a prepared noise field (``None`` for no noise)."""
    w = u
    f = drift_values(spec, u)
    if f is not None:
        w = w + h * f
    if dW is not None:
        g = diffusion_values(spec, u)
        if g is not None:
            w = w + g * dW
    return apply_rows(w, op.semigroup_matrix(h))


def exponential_step(op: DiscreteMaxwellOperator, spec: NonlinearitySpec, path: WienerPath, u, t0, t1):
    u = check_state(op.grid, u)
    h = float(Fraction(t1) - Fraction(t0))
    if not h > 0:
        raise ValueError("step must satisfy t1 > t0")
    dW = None
    if not spec.deterministic:
        s0, s1 = path.steps(t0, t1)
        dW = path.window_fields(np.int64(s0), s1 - s0)
    return _step(op, spec, u, h, dW)


def _sweep(op, spec, path, u, start, substeps: int, h: float):
    """``substeps`` sequential steps of size ``h`` from lattice index ``start``."""
    u = check_state(op.grid, u)
    width = 0 if spec.deterministic else _window_steps(path, h)
    for j in range(substeps):
        dW = None if spec.deterministic else path.window_fields(start + j * width, width)
        u = _step(op, spec, u, h, dW)
    return u


def _interval_start(time: TimeGridSpec, path: WienerPath | None, n, spec: NonlinearitySpec):
    n = np.asarray(n, dtype=np.int64)
    if n.size and (n.min() < 1 or n.max() > time.n_intervals):
        raise ValueError(f"interval index must lie in 1..{time.n_intervals}")
    if spec.deterministic:
        return n
    if path.t_end < time.t_end:
        raise ValueError("noise path is shorter than the time horizon")
    return (n - 1) * _window_steps(path, time.delta_T)


def coarse_G(op, spec: NonlinearitySpec, time: TimeGridSpec, path: WienerPath, u, n):
    """One exponential step over the coarse interval ``[t_{n-1}, t_n]``."""
    start = _interval_start(time, path, n, spec)
    return _sweep(op, spec, path, u, start, 1, time.delta_T)


def fine_F_exponential(op, spec: NonlinearitySpec, time: TimeGridSpec, path: WienerPath, u, n):
    """``j_sub`` exponential steps of size ``dt`` across ``[t_{n-1}, t_n]``."""
    start = _interval_start(time, path, n, spec)
    return _sweep(op, spec, path, u, start, time.j_sub, time.dt)


def fine_F_reference(op, spec: NonlinearitySpec, time: TimeGridSpec, path: WienerPath, u, n):
    """Oversampled stand-in for the exact flow: ``j_sub * rho_ref`` steps of ``dt / rho_ref``."""
    start = _interval_start(time, path, n, spec)
    if not spec.deterministic and Fraction(time.dt_ref) < Fraction(path.delta_ref):
        raise ValueError(f"reference step {time.dt_ref} is finer than the noise lattice {path.delta_ref}")
    return _sweep(op, spec, path, u, start, time.j_sub * time.rho_ref, time.dt_ref)


FINE_PROPAGATORS = {"exponential": fine_F_exponential, "reference": fine_F_reference}
