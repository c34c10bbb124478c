"""Monte Carlo studies, order fits, the cost model and CSV output.

Samples are processed in fixed-size stacks: each stack shares one stacked
Wiener path so every propagator call is a single batched product. Per-sample
results never depend on the thread count; aggregation sums in sample order.
"""

from __future__ import annotations

import csv
import statistics
import time as _time
from dataclasses import asdict, dataclass, field, fields
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .grid import DiscreteMaxwellOperator, FieldState, GridSpec, MaxwellCoefficients, build_operator
from .noise import NoiseBasis, build_basis, is_dyadic, sample_path
from .parareal import PararealConfig, PararealRun, run, sequential
from .propagators import NonlinearitySpec, TimeGridSpec, coarse_G, exponential_step

PAIRS = (("u_plus_cos", "sin"), ("cos", "identity"))


# ---------------------------------------------------------------- setup


@dataclass(frozen=True)
class ProblemSetup:
    """Everything that defines the discrete problem apart from the time grid."""

    nx: int = 16
    eps: float = 1.0
    mu: float = 1.0
    sigma: float = 2.0
    n_modes: int = 8
    decay_r: float = 2.0
    drift: str = "u_plus_cos"
    diffusion: str = "sin"
    j_sub: int = 4
    rho_ref: int = 16
    fine_kind: str = "exponential"

    def grid(self) -> GridSpec:
        return GridSpec(self.nx)

    def coefficients(self, sigma: float | None = None) -> MaxwellCoefficients:
        return MaxwellCoefficients(self.eps, self.mu, self.sigma if sigma is None else sigma)

    def nonlinearity(self) -> NonlinearitySpec:
        return NonlinearitySpec.parse(self.drift, self.diffusion)

    def with_(self, **kw) -> "ProblemSetup":
        return ProblemSetup(**{**asdict(self), **kw})


@dataclass(frozen=True)
class StudySpec:
    samples: int = 50
    base_seed: int = 0
    batch: int = 8
    sigmas: tuple[float, ...] = (0.0, 2.0, 8.0, 32.0)
    k_list: tuple[int, ...] = (2, 3, 4)
    coarse_steps: tuple[float, ...] = (2.0**-6, 2.0**-7, 2.0**-8, 2.0**-9)
    t_end_list: tuple[float, ...] = (1.0, 10.0, 20.0)
    t_end: float = 1.0
    delta_T: float = 2.0**-6
    k_max: int = 20
    pairs: tuple[tuple[str, str], ...] = PAIRS
    exp_ratio: int = 8

    def __post_init__(self):
        if int(self.samples) != self.samples or self.samples < 1:
            raise ValueError(f"samples must be an integer >= 1, got {self.samples}")
        if int(self.batch) != self.batch or self.batch < 1:
            raise ValueError(f"batch must be an integer >= 1, got {self.batch}")
        if not 0 <= int(self.base_seed) < 2**64:
            raise ValueError("seed must fit in an unsigned 64-bit integer")
        for s in tuple(self.coarse_steps) + (self.delta_T,):
            if not is_dyadic(s):
                raise ValueError(f"coarse step {s} is not a power of two")
        if len(set(self.coarse_steps)) != len(self.coarse_steps):
            raise ValueError("coarse steps must be distinct")
        if any(s < 0 for s in self.sigmas):
            raise ValueError("sigma >= 0 required for every entry of sigmas")
        if any(int(k) != k or k < 0 for k in self.k_list):
            raise ValueError("k_list entries must be non-negative integers")
        if int(self.k_max) != self.k_max or self.k_max < 0:
            raise ValueError("k_max must be a non-negative integer")
        if int(self.exp_ratio) != self.exp_ratio or not is_dyadic(int(self.exp_ratio)):
            raise ValueError("exp_ratio must be a power of two")

    def sample_batches(self) -> list[range]:
        return [range(lo, min(lo + self.batch, self.samples)) for lo in range(0, self.samples, self.batch)]


def initial_state(grid: GridSpec, seed: int = 0) -> np.ndarray:
    """Gaussian pulse in ``ez``; ``hx`` uniform random along y, ``hy`` along x."""
    rng = np.random.default_rng([int(seed), 0x1D])
    (xe, ye), _, _ = grid.coordinates()
    ez = 0.1 * np.exp(-50.0 * ((xe - 0.5) ** 2 + (ye - 0.5) ** 2))
    n = grid.nx
    hx = np.tile(rng.random(n), (n + 1, 1))
    hy = np.tile(rng.random(n)[:, None], (1, n + 1))
    return FieldState(ez, hx, hy).to_vector(grid)


def noise_step(times: Iterable[TimeGridSpec], extra: Iterable[float] = (), fine_kind: str = "exponential") -> float:
    """Coarsest dyadic lattice that carries every step the runs will take."""
    steps = [Fraction(extra_step) for extra_step in extra]
    for t in times:
        steps.append(Fraction(t.dt_ref if fine_kind == "reference" else t.dt))
    return float(min(steps))


@dataclass
class _Context:
    op: DiscreteMaxwellOperator
    spec: NonlinearitySpec
    basis: NoiseBasis
    u0: np.ndarray


_OPERATORS: dict = {}


def _cached_operator(grid: GridSpec, coeffs: MaxwellCoefficients) -> DiscreteMaxwellOperator:
    key = (grid, coeffs)
    if key not in _OPERATORS:
        _OPERATORS[key] = build_operator(grid, coeffs)
    return _OPERATORS[key]


def _ctx(setup, seed, sigma=None, spec=None) -> _Context:
    grid = setup.grid()
    op = _cached_operator(grid, setup.coefficients(sigma))
    return _Context(op, spec or setup.nonlinearity(), build_basis(grid, setup.n_modes, setup.decay_r),
                    initial_state(grid, seed))


# ---------------------------------------------------------------- statistics


def _stack_errors(runs: Sequence[PararealRun], k: int) -> np.ndarray:
    if not runs:
        raise ValueError("at least one run is required")
    cfg = runs[0].config
    rows = []
    for r in runs:
        if r.config != cfg:
            raise ValueError("runs do not share one configuration")
        if k > r.k_stop:
            raise ValueError(f"iteration {k} not available (run stopped at {r.k_stop})")
        e = np.asarray(r.errors[k])
        rows.append(e.reshape(-1, e.shape[-1]))
    return np.concatenate(rows, axis=0)


def mean_square_error(runs: Sequence[PararealRun], k: int) -> tuple[np.ndarray, float]:
    """``sqrt(mean_samples ||u_n^(k) - u_n^ref||_H^2)`` per ``n`` and its sup over ``n``."""
    per_n = np.sqrt(_stack_errors(runs, k).mean(axis=0))
    return per_n, float(per_n.max())


def mean_square_summary(sq_errors: np.ndarray) -> tuple[float, float, int]:
    """``(sup_n rms, half-width, n*)`` from per-sample squared errors of shape ``(M, N+1)``.

    The half-width is ``1.96 std / sqrt(M)`` of the squared errors at the
    maximising ``n``, carried to the root scale by the delta method.
    """
    sq = np.asarray(sq_errors, dtype=float)
    m = sq.shape[0]
    mean = sq.mean(axis=0)
    n_star = int(np.argmax(mean))
    rms = float(np.sqrt(mean[n_star]))
    if m < 2 or rms == 0.0:
        return rms, 0.0, n_star
    hw_sq = 1.96 * float(sq[:, n_star].std(ddof=1)) / np.sqrt(m)
    return rms, hw_sq / (2.0 * rms), n_star


@dataclass(frozen=True)
class OrderFit:
    slope: float
    intercept: float
    residual: float


def estimate_order(points: Sequence[tuple[float, float]]) -> OrderFit:
    """Least-squares fit of ``log2 e = slope log2 dT + intercept``; residual is the RMS misfit."""
    pts = [(float(d), float(e)) for d, e in points]
    if len(pts) < 3:
        raise ValueError("an order fit needs at least 3 points")
    x = np.log2([d for d, _ in pts])
    if len(np.unique(x)) != len(x):
        raise ValueError("step sizes must be distinct")
    if any(not (e > 0 and np.isfinite(e)) for _, e in pts):
        raise ValueError("errors must be positive and finite for a log fit")
    y = np.log2([e for _, e in pts])
    xm, ym = x.mean(), y.mean()
    slope = float(np.sum((x - xm) * (y - ym)) / np.sum((x - xm) ** 2))
    intercept = float(ym - slope * xm)
    resid = float(np.sqrt(np.mean((y - slope * x - intercept) ** 2)))
    return OrderFit(slope, intercept, resid)


# ---------------------------------------------------------------- sampling loop


def monte_carlo(
    setup: ProblemSetup,
    study: StudySpec,
    times: Sequence[TimeGridSpec],
    k_max: int,
    sigma: float | None = None,
    spec: NonlinearitySpec | None = None,
    t_noise: float | None = None,
) -> list[np.ndarray]:
    """Squared errors ``(k_max+1, M, N+1)`` for each time grid, sharing noise across grids."""
    ctx = _ctx(setup, study.base_seed, sigma, spec)
    delta_ref = noise_step(times, fine_kind=setup.fine_kind)
    t_noise = max(t.t_end for t in times) if t_noise is None else t_noise
    out = [[] for _ in times]
    for idx in study.sample_batches():
        path = None
        if not ctx.spec.deterministic:
            path = sample_path(ctx.basis, study.base_seed, idx, t_noise, delta_ref)
        for slot, tg in enumerate(times):
            cfg = PararealConfig(tg, k_max=k_max, fine_kind=setup.fine_kind)
            r = run(ctx.op, ctx.spec, cfg, path, ctx.u0, keep_iterates=False)
            err = r.errors
            if path is None:
                # without noise every sample is the same run
                err = np.broadcast_to(err[:, None, :], (err.shape[0], len(idx), err.shape[-1]))
            out[slot].append(err)
        del path
    return [np.concatenate(chunks, axis=1) for chunks in out]


# ---------------------------------------------------------------- studies


@dataclass
class ConvergenceRow:
    study_id: str
    drift_kind: str
    diffusion_kind: str
    sigma: float
    k: int
    delta_T: float
    mse: float
    mse_halfwidth: float
    samples: int


@dataclass
class OrderRow:
    study_id: str
    k: int
    slope: float
    slope_residual: float
    expected_slope: float


@dataclass
class ErrorReport:
    rows: list[ConvergenceRow] = field(default_factory=list)
    orders: list[OrderRow] = field(default_factory=list)

    def order(self, study_id: str, k: int) -> OrderRow:
        for o in self.orders:
            if o.study_id == study_id and o.k == k:
                return o
        raise KeyError((study_id, k))


def study_id(drift: str, diffusion: str) -> str:
    return f"{drift}/{diffusion}"


def convergence_study(setup: ProblemSetup, study: StudySpec) -> ErrorReport:
    """Error against the sequential fine solution over the coarse-step grid, per pair and ``k``."""
    if len(study.coarse_steps) < 3:
        raise ValueError("a convergence study needs at least 3 coarse steps")
    report = ErrorReport()
    k_hi = max(study.k_list)
    steps = sorted(study.coarse_steps, reverse=True)
    times = [TimeGridSpec(study.t_end, s, setup.j_sub, setup.rho_ref) for s in steps]
    for drift, diffusion in study.pairs:
        spec = NonlinearitySpec.parse(drift, diffusion)
        sid = study_id(spec.drift_label, spec.diffusion_label)
        errs = monte_carlo(setup, study, times, k_hi, spec=spec)
        for k in study.k_list:
            pts = []
            for step, sq in zip(steps, errs):
                rms, hw, _ = mean_square_summary(sq[k])
                report.rows.append(ConvergenceRow(sid, spec.drift_label, spec.diffusion_label, setup.sigma,
                                                  k, step, rms, hw, study.samples))
                pts.append((step, rms))
            try:
                fit = estimate_order(pts)
            except ValueError:
                # errors at the rounding floor (e.g. k >= N) carry no slope
                fit = OrderFit(float("nan"), float("nan"), float("nan"))
            report.orders.append(OrderRow(sid, k, fit.slope, fit.residual, k / 2))
    return report


@dataclass
class CurveRow:
    """One point of an error-versus-iteration curve."""

    key: float
    k: int
    sup_error: float
    halfwidth: float
    worst_sample: float  # max over samples of sup_n ||u_n^(k) - u_n^ref||_H


def damping_study(setup: ProblemSetup, study: StudySpec) -> list[CurveRow]:
    """Error against ``k = 0..k_max`` for each damping coefficient, on common noise."""
    if 0.0 not in [float(s) for s in study.sigmas]:
        raise ValueError("the damping study needs sigma = 0 in its list")
    tg = TimeGridSpec(study.t_end, study.delta_T, setup.j_sub, setup.rho_ref)
    rows = []
    for sigma in study.sigmas:
        (sq,) = monte_carlo(setup, study, [tg], study.k_max, sigma=float(sigma))
        rows.extend(_curve(float(sigma), sq))
    return rows


def longtime_study(setup: ProblemSetup, study: StudySpec) -> list[CurveRow]:
    """Error against ``k = 0..k_max`` for each horizon in ``t_end_list``."""
    rows = []
    for t_end in study.t_end_list:
        tg = TimeGridSpec(t_end, study.delta_T, setup.j_sub, setup.rho_ref)
        (sq,) = monte_carlo(setup, study, [tg], study.k_max)
        rows.extend(_curve(float(t_end), sq))
    return rows


def _curve(key: float, sq: np.ndarray) -> list[CurveRow]:
    rows = []
    for k in range(sq.shape[0]):
        rms, hw, _ = mean_square_summary(sq[k])
        rows.append(CurveRow(key, k, rms, hw, float(np.sqrt(sq[k].max()))))
    return rows


# ---------------------------------------------------------------- cost model


@dataclass(frozen=True)
class CostModelParams:
    K: int
    T: float
    delta_T: float
    delta_t_fine: float
    tau_G: float
    tau_F_aux: float
    n_proc: int
    tau_exp: float
    delta_T_prime: float

    def __post_init__(self):
        if int(self.K) != self.K or self.K < 0:
            raise ValueError(f"K must be a non-negative integer, got {self.K}")
        for f in fields(self):
            if f.name != "K" and not (getattr(self, f.name) > 0 and np.isfinite(getattr(self, f.name))):
                raise ValueError(f"{f.name} must be > 0, got {getattr(self, f.name)}")


def predict_cost(p: CostModelParams) -> tuple[float, float, float]:
    """``(cost_parareal, cost_exp, efficiency)`` in exact rational arithmetic."""
    fr = {f.name: Fraction(getattr(p, f.name)) for f in fields(p)}
    coarse = (fr["K"] + 1) * fr["T"] / fr["delta_T"] * fr["tau_G"]
    fine = fr["K"] * fr["T"] / fr["delta_t_fine"] * fr["tau_F_aux"] / fr["n_proc"]
    par = coarse + fine
    exp = fr["T"] / fr["delta_T_prime"] * fr["tau_exp"]
    if par == 0:
        raise ValueError("parareal cost is zero; efficiency undefined")
    return float(par), float(exp), float(exp / par)


def _median_time(fn, calls: int) -> float:
    fn()  # warm caches
    ts = []
    for _ in range(calls):
        t = _time.perf_counter()
        fn()
        ts.append(_time.perf_counter() - t)
    return statistics.median(ts)


def measure_costs(
    setup: ProblemSetup, study: StudySpec, K: int, n_proc: int = 1, calls: int = 100
) -> CostModelParams:
    """Micro-benchmark one coarse step, one fine sub-step and one exponential step."""
    ctx = _ctx(setup, study.base_seed)
    tg = TimeGridSpec(study.t_end, study.delta_T, setup.j_sub, setup.rho_ref)
    dT_prime = float(Fraction(study.delta_T) / study.exp_ratio)
    path = sample_path(ctx.basis, study.base_seed, 0, study.t_end, min(tg.dt, dT_prime))
    u = ctx.u0
    tau_G = _median_time(lambda: coarse_G(ctx.op, ctx.spec, tg, path, u, 1), calls)
    tau_F = _median_time(lambda: exponential_step(ctx.op, ctx.spec, path, u, 0.0, tg.dt), calls)
    tau_E = _median_time(lambda: exponential_step(ctx.op, ctx.spec, path, u, 0.0, dT_prime), calls)
    return CostModelParams(K, study.t_end, study.delta_T, tg.dt, tau_G, tau_F, n_proc, tau_E, dT_prime)


# ---------------------------------------------------------------- efficiency


@dataclass
class EfficiencyRow:
    method: str
    delta_T: float
    t_end: float
    error_l2: float
    cpu_seconds: float


def efficiency_study(setup: ProblemSetup, study: StudySpec, k: int = 2) -> list[EfficiencyRow]:
    """Wall-clock and error of parareal (``k`` iterations) and of a sequential exponential run.

    The exponential run uses ``delta_T / exp_ratio``. Both are measured against
    the same sequential fine solution on the same noise. ``cpu_seconds`` is the
    mean wall-clock per sample stack (per sample when ``batch == 1``); noise
    sampling and the reference solve are not timed.
    """
    ctx = _ctx(setup, study.base_seed)
    rows = []
    for t_end in study.t_end_list:
        tg = TimeGridSpec(t_end, study.delta_T, setup.j_sub, setup.rho_ref)
        exp_grid = TimeGridSpec(t_end, float(Fraction(study.delta_T) / study.exp_ratio), 1, 1)
        if Fraction(exp_grid.delta_T) <= Fraction(tg.dt):
            raise ValueError("the fine step must be finer than the exponential step")
        delta_ref = noise_step([tg, exp_grid], fine_kind=setup.fine_kind)
        cfg = PararealConfig(tg, k_max=k, fine_kind=setup.fine_kind)
        t_par = t_exp = 0.0
        sq_par, sq_exp = [], []
        for idx in study.sample_batches():
            path = sample_path(ctx.basis, study.base_seed, idx, t_end, delta_ref)
            path.finest_fields()
            r = run(ctx.op, ctx.spec, cfg, path, ctx.u0, keep_iterates=False)
            t_par += r.timings["initialize"] + r.timings["fine"] + r.timings["correction"]
            sq_par.append(r.errors[k])

            t = _time.perf_counter()
            ex = sequential(ctx.op, ctx.spec, exp_grid, path, ctx.u0, coarse_G)
            t_exp += _time.perf_counter() - t
            ex = ex[..., :: study.exp_ratio, :]
            sq_exp.append(ctx.op.norm(ex - r.reference) ** 2)
        e_par = mean_square_summary(np.concatenate(sq_par))[0]
        e_exp = mean_square_summary(np.concatenate(sq_exp))[0]
        n_batches = len(study.sample_batches())
        rows.append(EfficiencyRow("parareal", study.delta_T, float(t_end), e_par, t_par / n_batches))
        rows.append(EfficiencyRow("exponential", exp_grid.delta_T, float(t_end), e_exp, t_exp / n_batches))
    return rows


def linear_growth_slope(rows: Sequence[EfficiencyRow], method: str) -> float:
    """Log-log slope of CPU time against horizon; 1 means linear growth."""
    pts = [(r.t_end, r.cpu_seconds) for r in rows if r.method == method]
    x, y = np.log([p[0] for p in pts]), np.log([p[1] for p in pts])
    return float(np.polyfit(x, y, 1)[0])


# ---------------------------------------------------------------- CSV


CSV_COLUMNS = {
    "convergence": ("study_id", "drift_kind", "diffusion_kind", "sigma", "k", "delta_T", "mse", "mse_halfwidth",
                    "samples"),
    "orders": ("study_id", "k", "slope", "slope_residual", "expected_slope"),
    "damping": ("sigma", "k", "sup_error"),
    "longtime": ("t_end", "k", "sup_error"),
    "efficiency": ("method", "delta_T", "t_end", "error_l2", "cpu_seconds"),
    "costmodel": tuple(f.name for f in fields(CostModelParams)) + ("cost_parareal", "cost_exp", "efficiency"),
}


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(v).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: Path | str, kind: str, rows: Iterable[dict]) -> Path:
    cols = CSV_COLUMNS[kind]
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in cols])
    return path


def convergence_rows(report: ErrorReport) -> list[dict]:
    return [asdict(r) for r in report.rows]


def order_rows(report: ErrorReport) -> list[dict]:
    return [asdict(r) for r in report.orders]


def curve_rows(rows: Sequence[CurveRow], key_name: str) -> list[dict]:
    return [{key_name: r.key, "k": r.k, "sup_error": r.sup_error} for r in rows]


def cost_row(p: CostModelParams) -> dict:
    par, exp, eff = predict_cost(p)
    return {**asdict(p), "cost_parareal": par, "cost_exp": exp, "efficiency": eff}
