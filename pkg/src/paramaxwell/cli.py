"""Command-line entry point: ``paramaxwell <subcommand> [flags]``.

Exit codes: 0 success, 1 invalid input or configuration, 2 runtime failure,
3 selftest property failure.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from . import checks, harness
from ._parallel import num_threads
from .config import ConfigError, RunConfig, dump_config, parse_config
from .grid import build_operator
from .noise import build_basis, sample_path
from .parareal import run

SUBCOMMANDS = ("single-run", "converge", "damping", "longtime", "efficiency", "costmodel", "selftest")
_STUDY = {"converge": "converge", "damping": "damping", "longtime": "longtime", "efficiency": "efficiency"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="configuration file (key = value in [sections])")
    common.add_argument("--out", metavar="DIR", help="output directory (overrides run.output_dir)")
    common.add_argument("--seed", metavar="U64", type=int, help="base seed (overrides run.seed)")
    common.add_argument("--samples", metavar="M", type=int, help="Monte Carlo samples for the chosen study")
    common.add_argument("--threads", metavar="N", type=int, help="worker threads (overrides run.threads)")
    common.add_argument("--set", metavar="KEY=VALUE", action="append", default=[], dest="overrides",
                        help="override one setting, e.g. --set coefficients.sigma=8 (repeatable)")
    p = _Parser(prog="paramaxwell", description="Parareal runs and studies for a damped, noise-driven 2D Maxwell system.")
    sub = p.add_subparsers(dest="command", metavar="SUBCOMMAND", parser_class=_Parser)
    sub.required = True
    helps = {
        "single-run": "one parareal solve; per-iteration errors",
        "converge": "mean-square order study",
        "damping": "error against k for several damping coefficients",
        "longtime": "error against k for several horizons",
        "efficiency": "wall-clock of parareal against a sequential exponential run",
        "costmodel": "cost model prediction",
        "selftest": "invariant suite",
    }
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name, parents=[common], help=helps[name])
        if name == "selftest":
            sp.add_argument("--quick", action="store_true", help="smaller sample sizes")
    return p


def _load(args) -> RunConfig:
    overrides = list(args.overrides)
    if args.out is not None:
        overrides.append(f"run.output_dir={args.out}")
    if args.seed is not None:
        overrides.append(f"run.seed={args.seed}")
    if args.threads is not None:
        overrides.append(f"run.threads={args.threads}")
    if args.samples is not None:
        section = _STUDY.get(args.command)
        if section is None:
            raise ConfigError(f"--samples has no effect for {args.command}")
        overrides.append(f"{section}.samples={args.samples}")
    return parse_config(args.config, overrides)


def _prepare_out(cfg: RunConfig) -> Path:
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(dump_config(cfg), encoding="utf-8")
    return out


def _single_run(cfg: RunConfig, out: Path) -> None:
    setup = cfg.setup()
    grid = setup.grid()
    op = build_operator(grid, setup.coefficients())
    pcfg = cfg.parareal()
    tg = pcfg.time
    spec = setup.nonlinearity()
    path = None
    if not spec.deterministic:
        basis = build_basis(grid, setup.n_modes, setup.decay_r)
        step = tg.dt_ref if pcfg.fine_kind == "reference" else tg.dt
        path = sample_path(basis, cfg.seed, 0, tg.t_end, step)
    r = run(op, spec, pcfg, path, harness.initial_state(grid, cfg.seed), keep_iterates=False)
    times = tg.times()
    with (out / "single_run.csv").open("w", encoding="utf-8", newline="") as fh:
        fh.write("k,n,t,error,increment\n")
        for k in range(r.k_stop + 1):
            for n in range(tg.n_intervals + 1):
                fh.write(f"{k},{n},{float(times[n])!r},{float(np.sqrt(r.errors[k, n]))!r},"
                         f"{float(r.increments[k])!r}\n")
    for k in range(r.k_stop + 1):
        print(f"k={k:2d}  sup_n error {r.sup_error(k):.3e}")


def _converge(cfg: RunConfig, out: Path) -> None:
    report = harness.convergence_study(cfg.setup("converge"), cfg.study("converge"))
    harness.write_csv(out / "convergence.csv", "convergence", harness.convergence_rows(report))
    harness.write_csv(out / "orders.csv", "orders", harness.order_rows(report))
    for o in report.orders:
        print(f"{o.study_id:24s} k={o.k}  slope {o.slope:.3f}  (k/2 = {o.expected_slope:g})")


def _damping(cfg: RunConfig, out: Path) -> None:
    rows = harness.damping_study(cfg.setup("damping"), cfg.study("damping"))
    harness.write_csv(out / "damping.csv", "damping", harness.curve_rows(rows, "sigma"))


def _longtime(cfg: RunConfig, out: Path) -> None:
    rows = harness.longtime_study(cfg.setup("longtime"), cfg.study("longtime"))
    harness.write_csv(out / "longtime.csv", "longtime", harness.curve_rows(rows, "t_end"))


def _efficiency(cfg: RunConfig, out: Path) -> None:
    rows = harness.efficiency_study(cfg.setup("efficiency"), cfg.study("efficiency"), k=cfg["efficiency"]["k"])
    harness.write_csv(out / "efficiency.csv", "efficiency", [vars(r) for r in rows])
    for r in rows:
        print(f"{r.method:12s} T={r.t_end:<6g} error {r.error_l2:.3e}  {r.cpu_seconds:.3f} s")


def _costmodel(cfg: RunConfig, out: Path) -> None:
    params = [cfg.cost_params()]
    if cfg["costmodel"]["measure"]:
        eff = cfg.study("efficiency")
        params.append(harness.measure_costs(cfg.setup("efficiency"), eff, K=cfg["efficiency"]["k"],
                                            n_proc=cfg.threads))
    rows = [harness.cost_row(p) for p in params]
    harness.write_csv(out / "costmodel.csv", "costmodel", rows)
    for row in rows:
        print(f"cost_parareal {row['cost_parareal']:g}  cost_exp {row['cost_exp']:g}  "
              f"efficiency {row['efficiency']:g}")


def _selftest(cfg: RunConfig, out: Path, quick: bool) -> int:
    results = checks.run_all(quick=quick)
    with (out / "selftest.csv").open("w", encoding="utf-8", newline="") as fh:
        fh.write("property,passed,value,limit\n")
        for r in results:
            fh.write(f"{r.name},{str(r.passed).lower()},{r.value!r},{r.limit!r}\n")
    for r in results:
        print(r.line())
    return 0 if all(r.passed for r in results) else 3


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    try:
        cfg = _load(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1

    t0 = time.perf_counter()
    try:
        with num_threads(cfg.threads):
            out = _prepare_out(cfg)
            if args.command == "selftest":
                code = _selftest(cfg, out, args.quick)
            else:
                handler = {"single-run": _single_run, "converge": _converge, "damping": _damping,
                           "longtime": _longtime, "efficiency": _efficiency, "costmodel": _costmodel}
                handler[args.command](cfg, out)
                code = 0
    except (ValueError, ArithmeticError, OSError, MemoryError) as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return 2
    print(f"{args.command}: done in {time.perf_counter() - t0:.1f} s, outputs in {out}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
