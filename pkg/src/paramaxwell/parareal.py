"""Parareal iteration with the exponential coarse propagator.

Iterate ``k + 1`` is built from iterate ``k`` as::

    u_n^{k+1} = G(u_{n-1}^{k+1}) + R_n,    R_n = F(u_{n-1}^k) - G(u_{n-1}^k)

The fine values ``F(u_{n-1}^k)`` for all ``n`` are independent and are computed as
one batched sweep; ``G(u_{n-1}^k)`` is reused from the previous correction pass.
"""

from __future__ import annotations

import time as _time
from dataclasses import dataclass, field

import numpy as np

from .grid import DiscreteMaxwellOperator, check_state
from .noise import WienerPath
from .propagators import FINE_PROPAGATORS, NonlinearitySpec, TimeGridSpec, coarse_G, fine_F_reference


@dataclass(frozen=True)
class PararealConfig:
    time: TimeGridSpec
    k_max: int = 3
    tol: float = 0.0
    fine_kind: str = "exponential"

    def __post_init__(self):
        if int(self.k_max) != self.k_max or self.k_max < 0:
            raise ValueError(f"k_max must be a non-negative integer, got {self.k_max}")
        if not self.tol >= 0:
            raise ValueError(f"tol must be >= 0, got {self.tol}")
        if self.fine_kind not in FINE_PROPAGATORS:
            raise ValueError(f"fine_kind must be one of {tuple(FINE_PROPAGATORS)}")


@dataclass
class PararealRun:
    """Result of :func:`run`.

    ``errors[k]`` holds ``||u_n^(k) - u_n^ref||_H^2`` with shape ``(*batch, N+1)``;
    ``increments[k]`` holds ``sup_n ||u_n^(k) - u_n^(k-1)||_H`` (``increments[0]`` is nan).
    """

    config: PararealConfig
    reference: np.ndarray
    final: np.ndarray
    errors: np.ndarray
    increments: np.ndarray
    iterates: list[np.ndarray] | None = None
    proxy: np.ndarray | None = None
    proxy_errors: np.ndarray | None = None
    timings: dict = field(default_factory=dict)

    @property
    def k_stop(self) -> int:
        return self.errors.shape[0] - 1

    def sup_error(self, k: int) -> np.ndarray:
        """Per-sample ``sup_n ||u_n^(k) - u_n^ref||_H``."""
        return np.sqrt(self.errors[k].max(axis=-1))


def _check_u0(op, path, u0):
    u0 = check_state(op.grid, u0)
    batch = path.batch_shape if path is not None else ()
    if u0.shape[:-1] != batch:
        u0 = np.broadcast_to(u0, batch + (op.dof,)).copy()
    return u0


def sequential(op, spec, time: TimeGridSpec, path, u0, propagator) -> np.ndarray:
    """Sequential sweep ``u_n = P(u_{n-1}, n)``; returns ``(*batch, N+1, dof)``."""
    u0 = _check_u0(op, path, u0)
    n_int = time.n_intervals
    out = np.empty(u0.shape[:-1] + (n_int + 1, op.dof))
    out[..., 0, :] = u0
    for n in range(1, n_int + 1):
        try:
            out[..., n, :] = propagator(op, spec, time, path, out[..., n - 1, :], n)
        except ValueError as exc:
            raise ValueError(f"interval {n}: {exc}") from exc
        if not np.all(np.isfinite(out[..., n, :])):
            raise ValueError(f"interval {n}: state became non-finite")
    return out


def initialize(op, spec, cfg: PararealConfig, path, u0) -> np.ndarray:
    """Iterate 0: sequential coarse sweep."""
    return sequential(op, spec, cfg.time, path, u0, coarse_G)


def residual(op, spec, cfg: PararealConfig, path, u, n) -> np.ndarray:
    """``F(u) - G(u)`` over interval ``n``."""
    fine = FINE_PROPAGATORS[cfg.fine_kind]
    return fine(op, spec, cfg.time, path, u, n) - coarse_G(op, spec, cfg.time, path, u, n)


@dataclass
class SweepResult:
    iterate: np.ndarray
    coarse: np.ndarray  # G(u_{n-1}^{k+1}), n = 1..N
    fine: np.ndarray  # F(u_{n-1}^k)
    residual: np.ndarray  # fine - previous coarse


def sweep(
    op, spec, cfg: PararealConfig, path, prev: np.ndarray,
    prev_coarse: np.ndarray | None = None, timings: dict | None = None,
) -> SweepResult:
    """One parareal iteration from ``prev`` (shape ``(*batch, N+1, dof)``).

    ``prev_coarse`` are the values ``G(u_{n-1}^k)``; recomputed when omitted.
    """
    time = cfg.time
    n_int = time.n_intervals
    idx = np.arange(1, n_int + 1)
    left = prev[..., :-1, :]
    if prev_coarse is None:
        prev_coarse = coarse_G(op, spec, time, path, left, idx)
    t = _time.perf_counter()
    fine = FINE_PROPAGATORS[cfg.fine_kind](op, spec, time, path, left, idx)
    t_fine = _time.perf_counter()
    res = fine - prev_coarse

    new = np.empty_like(prev)
    coarse = np.empty_like(prev_coarse)
    new[..., 0, :] = prev[..., 0, :]
    for n in range(1, n_int + 1):
        g = coarse_G(op, spec, time, path, new[..., n - 1, :], n)
        coarse[..., n - 1, :] = g
        new[..., n, :] = g + res[..., n - 1, :]
    if not np.all(np.isfinite(new)):
        bad = int(np.argmax(~np.isfinite(new).reshape(-1, n_int + 1, new.shape[-1]).all(axis=(0, 2))))
        raise ValueError(f"interval {bad}: state became non-finite")
    if timings is not None:
        timings["fine"] = timings.get("fine", 0.0) + t_fine - t
        timings["correction"] = timings.get("correction", 0.0) + _time.perf_counter() - t_fine
    return SweepResult(new, coarse, fine, res)


def run(
    op: DiscreteMaxwellOperator,
    spec: NonlinearitySpec,
    cfg: PararealConfig,
    path: WienerPath | None,
    u0,
    keep_iterates: bool = True,
    with_proxy: bool = False,
) -> PararealRun:
    """Full parareal solve with errors against the sequential fine solution.

    ``with_proxy`` additionally sweeps the oversampled reference propagator and
    records errors against it.
    """
    u0 = _check_u0(op, path, u0)
    time = cfg.time
    timings = {"initialize": 0.0, "reference": 0.0, "fine": 0.0, "correction": 0.0}

    t = _time.perf_counter()
    it = initialize(op, spec, cfg, path, u0)
    timings["initialize"] = _time.perf_counter() - t

    t = _time.perf_counter()
    ref = sequential(op, spec, time, path, u0, FINE_PROPAGATORS[cfg.fine_kind])
    proxy = None
    if with_proxy:
        proxy = ref if cfg.fine_kind == "reference" else sequential(op, spec, time, path, u0, fine_F_reference)
    timings["reference"] = _time.perf_counter() - t

    def sq_err(x, target):
        return op.norm(x - target) ** 2

    errors = [sq_err(it, ref)]
    proxy_errors = [sq_err(it, proxy)] if proxy is not None else None
    incs = [np.full(it.shape[:-2], np.nan)]
    iterates = [it] if keep_iterates else None

    # G(u_{n-1}^(0)) is exactly the initial sweep
    prev_coarse = it[..., 1:, :]
    for _k in range(cfg.k_max):
        step = sweep(op, spec, cfg, path, it, prev_coarse, timings)
        new = step.iterate
        incs.append(np.sqrt((op.norm(new - it) ** 2).max(axis=-1)))
        it, prev_coarse = new, step.coarse
        errors.append(sq_err(it, ref))
        if proxy_errors is not None:
            proxy_errors.append(sq_err(it, proxy))
        if keep_iterates:
            iterates.append(it)
        if cfg.tol > 0 and np.all(incs[-1] <= cfg.tol):
            break

    return PararealRun(
        config=cfg,
        reference=ref,
        final=it,
        errors=np.stack(errors),
        increments=np.stack(incs),
        iterates=iterates,
        proxy=proxy,
        proxy_errors=None if proxy_errors is None else np.stack(proxy_errors),
        timings=timings,
    )
