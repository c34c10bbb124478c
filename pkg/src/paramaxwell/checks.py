"""Runtime invariant checks shared by ``selftest`` and the acceptance suite."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import GridSpec, MaxwellCoefficients, apply_curl_damped, build_operator
from .harness import PAIRS, initial_state
from .noise import build_basis, sample_path, standard_normals
from .parareal import PararealConfig, run
from .propagators import NonlinearitySpec, TimeGridSpec


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    limit: float

    def line(self) -> str:
        mark = "PASS" if self.passed else "FAIL"
        return f"{mark}  {self.name}: {self.value:.3e} (limit {self.limit:.1e})"


def skew_adjointness(nx: int = 16, pairs: int = 100, seed: int = 0, eps: float = 1.0, mu: float = 1.0) -> CheckResult:
    """``|<Mu, v> + <u, Mv>|`` relative to ``|<Mu, v>| + |<u, Mv>|`` (norm products when both vanish)."""
    op = build_operator(GridSpec(nx), MaxwellCoefficients(eps, mu, 0.0))
    rng = np.random.default_rng(seed)
    u = rng.standard_normal((pairs, op.dof))
    v = rng.standard_normal((pairs, op.dof))
    mu_, mv = apply_curl_damped(op, u), apply_curl_damped(op, v)
    a, b = op.inner(mu_, v), op.inner(u, mv)
    scale = op.norm(mu_) * op.norm(v) + op.norm(u) * op.norm(mv)
    worst = float(np.max(np.abs(a + b) / scale))
    return CheckResult("skew-adjointness", worst <= 1e-12, worst, 1e-12)


def contraction(nx: int = 16, sigmas=(0.0, 2.0, 32.0), deltas=(2.0**-8, 2.0**-4, 1.0), seed: int = 0) -> CheckResult:
    """``||S(delta) u||_H = exp(-sigma delta) ||u||_H``, relative error."""
    grid = GridSpec(nx)
    rng = np.random.default_rng(seed)
    u = rng.standard_normal((8, grid.dof))
    worst = 0.0
    for sigma in sigmas:
        op = build_operator(grid, MaxwellCoefficients(1.0, 1.0, sigma))
        for d in deltas:
            su = u @ op.semigroup_matrix(d).T
            want = np.exp(-sigma * d) * op.norm(u)
            worst = max(worst, float(np.max(np.abs(op.norm(su) - want) / op.norm(u))))
    return CheckResult("semigroup norm identity", worst <= 1e-10, worst, 1e-10)


def aggregation(windows: int = 1000, seed: int = 0, nx: int = 8) -> CheckResult:
    """Window fields equal the sum of their two halves and of their finest steps, bit for bit."""
    basis = build_basis(GridSpec(nx), 8, 2.0)
    n_steps = 256
    path = sample_path(basis, seed, 0, 1.0, 1.0 / n_steps)
    fine = path.finest_fields()
    rng = np.random.default_rng(seed)
    bad = 0
    for _ in range(windows):
        s0 = int(rng.integers(0, n_steps - 1))
        s1 = int(rng.integers(s0 + 1, n_steps + 1))
        whole = path.window_fields(np.int64(s0), s1 - s0)
        ok = np.array_equal(whole, fine[s0:s1].sum(axis=0))
        if s1 - s0 >= 2:
            m = int(rng.integers(s0 + 1, s1))
            halves = path.window_fields(np.int64(s0), m - s0) + path.window_fields(np.int64(m), s1 - m)
            ok = ok and np.array_equal(whole, halves)
        bad += not ok
    return CheckResult("noise aggregation (mismatched windows)", bad == 0, float(bad), 0.0)


def increment_variance(draws: int = 10_000, delta_ref: float = 2.0**-8, seed: int = 0) -> CheckResult:
    """Sample variance of ``sqrt(delta) xi`` against ``delta`` (relative deviation)."""
    x = np.sqrt(delta_ref) * standard_normals(seed, 0, 1, 1, draws)
    dev = abs(float(np.var(x, ddof=1)) / delta_ref - 1.0)
    return CheckResult("increment variance", dev <= 0.10, dev, 0.10)


def exactness(configs: int = 10, seed: int = 0, nx: int = 8) -> CheckResult:
    """After ``k`` iterations the first ``k`` intervals match the fine solution."""
    rng = np.random.default_rng(seed)
    grid = GridSpec(nx)
    basis = build_basis(grid, 4, 2.0)
    worst = 0.0
    for c in range(configs):
        drift, diffusion = PAIRS[c % len(PAIRS)]
        sigma = float(rng.choice([0.0, 2.0, 8.0]))
        n_int = int(rng.integers(2, 7))
        dT = 2.0 ** -int(rng.integers(3, 6))
        j_sub = int(rng.choice([2, 4]))
        op = build_operator(grid, MaxwellCoefficients(1.0, 1.0, sigma))
        tg = TimeGridSpec(n_int * dT, dT, j_sub, 1)
        path = sample_path(basis, seed, c, tg.t_end, tg.dt)
        spec = NonlinearitySpec.parse(drift, diffusion)
        r = run(op, spec, PararealConfig(tg, k_max=n_int), path, initial_state(grid, c))
        ref_norm = op.norm(r.reference)
        for k in range(n_int + 1):
            err = np.sqrt(r.errors[k, : k + 1])
            worst = max(worst, float(np.max(err / (1.0 + ref_norm[: k + 1]))))
    return CheckResult("parareal exactness", worst <= 1e-12, worst, 1e-12)


def run_all(quick: bool = False) -> list[CheckResult]:
    n = 10 if quick else 100
    return [
        skew_adjointness(pairs=n),
        contraction(),
        aggregation(windows=100 if quick else 1000),
        increment_variance(),
        exactness(configs=3 if quick else 10),
    ]
