"""Run configuration: INI-style ``key = value`` text in ``[sections]``.

Grammar (read with :mod:`configparser`, inline ``#``/``;`` comments allowed):

* numbers: ``0.5``, ``1e-3``, or powers of two written ``2^-6``;
* lists: comma separated, e.g. ``k_list = 2, 3, 4``;
* nonlinearity pairs: ``drift:diffusion`` items, e.g. ``pairs = u_plus_cos:sin, cos:identity``;
* booleans: ``true`` / ``false``.

Every key has a default (see :data:`DEFAULTS`); unknown sections or keys are
errors. :func:`dump_config` writes the effective configuration in the same
grammar so a run can be repeated from its echo.
"""

from __future__ import annotations

import configparser
import copy
import re
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

from .grid import GridSpec, MaxwellCoefficients
from .harness import CostModelParams, ProblemSetup, StudySpec
from .noise import build_basis, is_dyadic
from .parareal import PararealConfig
from .propagators import NonlinearitySpec, TimeGridSpec


class ConfigError(ValueError):
    """Malformed or invalid configuration."""


_P6 = 2.0**-6
DEFAULTS: dict[str, dict] = {
    "grid": {"nx": 16},
    "coefficients": {"eps": 1.0, "mu": 1.0, "sigma": 2.0},
    "noise": {"n_modes": 8, "decay_r": 2.0},
    "nonlinearity": {"drift": "u_plus_cos", "diffusion": "sin"},
    "time": {"t_end": 1.0, "delta_T": _P6, "j_sub": 4, "rho_ref": 16},
    "parareal": {"k_max": 3, "tol": 0.0, "fine_kind": "exponential"},
    "run": {"seed": 0, "threads": 1, "batch": 8, "output_dir": "out"},
    "converge": {
        "samples": 50, "t_end": 1.0, "j_sub": 4, "k_list": [2, 3, 4],
        "delta_T_list": [2.0**-6, 2.0**-7, 2.0**-8, 2.0**-9],
        "pairs": [("u_plus_cos", "sin"), ("cos", "identity")],
    },
    "damping": {"samples": 50, "t_end": 1.0, "delta_T": _P6, "j_sub": 4, "k_max": 10,
                "sigmas": [0.0, 2.0, 8.0, 32.0]},
    "longtime": {"samples": 16, "delta_T": _P6, "j_sub": 4, "k_max": 20, "t_end_list": [1.0, 10.0, 20.0]},
    "efficiency": {"samples": 10, "batch": 1, "delta_T": 2.0**-3, "j_sub": 16, "k": 2, "exp_ratio": 8,
                   "t_end_list": [1.0, 10.0, 50.0, 100.0]},
    "costmodel": {"K": 1, "T": 1.0, "delta_T": 0.1, "delta_t_fine": 0.01, "tau_G": 1.0, "tau_F_aux": 1.0,
                  "n_proc": 10, "tau_exp": 1.0, "delta_T_prime": 0.01, "measure": False},
}

_POW2 = re.compile(r"^\s*([+-]?\d+)\s*\^\s*([+-]?\d+)\s*$")


def _num(text: str) -> float:
    m = _POW2.match(text)
    if m:
        return float(Fraction(int(m.group(1))) ** int(m.group(2)))
    return float(text)


def _int(text: str) -> int:
    v = _num(text)
    if v != int(v):
        raise ValueError(f"expected an integer, got {text!r}")
    return int(v)


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("true", "yes", "1", "on"):
        return True
    if t in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"expected true or false, got {text!r}")


def _items(text: str) -> list[str]:
    return [p.strip() for p in text.split(",") if p.strip()]


def _pair(text: str) -> tuple[str, str]:
    if text.count(":") != 1:
        raise ValueError(f"expected drift:diffusion, got {text!r}")
    d, g = (p.strip() for p in text.split(":"))
    return d, g


def _parser_for(default):
    if isinstance(default, bool):
        return _bool
    if isinstance(default, int):
        return _int
    if isinstance(default, float):
        return _num
    if isinstance(default, str):
        return str.strip
    if isinstance(default, list):
        item = default[0]
        if isinstance(item, tuple):
            return lambda t: [_pair(p) for p in _items(t)]
        conv = _int if isinstance(item, int) else _num
        return lambda t: [conv(p) for p in _items(t)]
    raise TypeError(default)


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, list):
        return ", ".join(_format_item(x) for x in v)
    return str(v)


def _format_item(x) -> str:
    if isinstance(x, tuple):
        return f"{x[0]}:{x[1]}"
    return _format(x)


@dataclass
class RunConfig:
    """Validated configuration; ``values[section][key]`` holds typed values."""

    values: dict

    def __getitem__(self, section: str) -> dict:
        return self.values[section]

    @property
    def seed(self) -> int:
        return self.values["run"]["seed"]

    @property
    def threads(self) -> int:
        return self.values["run"]["threads"]

    @property
    def output_dir(self) -> Path:
        return Path(self.values["run"]["output_dir"])

    def setup(self, section: str | None = None) -> ProblemSetup:
        v = self.values
        j_sub = v[section]["j_sub"] if section and "j_sub" in v[section] else v["time"]["j_sub"]
        return ProblemSetup(
            nx=v["grid"]["nx"], eps=v["coefficients"]["eps"], mu=v["coefficients"]["mu"],
            sigma=v["coefficients"]["sigma"], n_modes=v["noise"]["n_modes"], decay_r=v["noise"]["decay_r"],
            drift=v["nonlinearity"]["drift"], diffusion=v["nonlinearity"]["diffusion"],
            j_sub=j_sub, rho_ref=v["time"]["rho_ref"], fine_kind=v["parareal"]["fine_kind"],
        )

    def time_grid(self) -> TimeGridSpec:
        t = self.values["time"]
        return TimeGridSpec(t["t_end"], t["delta_T"], t["j_sub"], t["rho_ref"])

    def parareal(self) -> PararealConfig:
        p = self.values["parareal"]
        return PararealConfig(self.time_grid(), p["k_max"], p["tol"], p["fine_kind"])

    def study(self, name: str) -> StudySpec:
        s = self.values[name]
        run = self.values["run"]
        kw = dict(samples=s["samples"], base_seed=run["seed"], batch=s.get("batch", run["batch"]))
        if name == "converge":
            kw.update(t_end=s["t_end"], k_list=tuple(s["k_list"]), coarse_steps=tuple(s["delta_T_list"]),
                      pairs=tuple(s["pairs"]))
        elif name == "damping":
            kw.update(t_end=s["t_end"], delta_T=s["delta_T"], k_max=s["k_max"], sigmas=tuple(s["sigmas"]))
        elif name == "longtime":
            kw.update(delta_T=s["delta_T"], k_max=s["k_max"], t_end_list=tuple(s["t_end_list"]))
        elif name == "efficiency":
            kw.update(delta_T=s["delta_T"], t_end_list=tuple(s["t_end_list"]), exp_ratio=s["exp_ratio"])
        else:
            raise KeyError(name)
        return StudySpec(**kw)

    def cost_params(self) -> CostModelParams:
        c = {k: v for k, v in self.values["costmodel"].items() if k != "measure"}
        return CostModelParams(**c)


def _check(field_name: str, fn):
    try:
        return fn()
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{field_name}: {exc}") from None


def validate(values: dict) -> RunConfig:
    """Build every domain object once so each field is checked by its owner."""
    cfg = RunConfig(values)
    v = values
    _check("grid.nx", lambda: GridSpec(v["grid"]["nx"]))
    c = v["coefficients"]
    if not c["sigma"] >= 0:
        raise ConfigError(f"coefficients.sigma = {c['sigma']} violates sigma >= 0")
    _check("coefficients", lambda: MaxwellCoefficients(c["eps"], c["mu"], c["sigma"]))
    _check("noise", lambda: build_basis(GridSpec(2), v["noise"]["n_modes"], v["noise"]["decay_r"]))
    _check("nonlinearity", lambda: NonlinearitySpec.parse(v["nonlinearity"]["drift"], v["nonlinearity"]["diffusion"]))
    for sec in ("time", "damping", "longtime", "efficiency"):
        dT = v[sec]["delta_T"]
        if not is_dyadic(dT):
            raise ConfigError(f"{sec}.delta_T = {dT} is not a power of two and does not align with the dyadic "
                              f"noise lattice")
    for i, dT in enumerate(v["converge"]["delta_T_list"]):
        if not is_dyadic(dT):
            raise ConfigError(f"converge.delta_T_list[{i}] = {dT} is not a power of two and does not align with "
                              f"the dyadic noise lattice")
    _check("time", cfg.time_grid)
    _check("parareal", cfg.parareal)
    run = v["run"]
    if not 0 <= run["seed"] < 2**64:
        raise ConfigError("run.seed must be an unsigned 64-bit integer")
    if run["threads"] < 1:
        raise ConfigError("run.threads must be >= 1")
    for name in ("converge", "damping", "longtime", "efficiency"):
        _check(name, lambda name=name: cfg.study(name))
        if "j_sub" in v[name]:
            _check(f"{name}.j_sub", lambda name=name: TimeGridSpec(1.0, 1.0, v[name]["j_sub"], 1))
    for d, g in v["converge"]["pairs"]:
        _check("converge.pairs", lambda d=d, g=g: NonlinearitySpec.parse(d, g))
    if len(v["converge"]["delta_T_list"]) < 3:
        raise ConfigError("converge.delta_T_list needs at least 3 entries for an order fit")
    if v["efficiency"]["k"] < 0:
        raise ConfigError("efficiency.k must be >= 0")
    if Fraction(v["efficiency"]["j_sub"]) <= v["efficiency"]["exp_ratio"]:
        raise ConfigError("efficiency.j_sub must exceed efficiency.exp_ratio so the reference is finer "
                          "than the exponential run")
    _check("costmodel", cfg.cost_params)
    return cfg


def _assign(values: dict, section: str, key: str, raw: str, where: str) -> None:
    if section not in DEFAULTS:
        raise ConfigError(f"{where}: unknown section [{section}]")
    if key not in DEFAULTS[section]:
        raise ConfigError(f"{where}: unknown key {key!r} in [{section}]")
    try:
        values[section][key] = _parser_for(DEFAULTS[section][key])(raw)
    except ValueError as exc:
        raise ConfigError(f"{where}: {section}.{key}: {exc}") from None


def _key_lines(text: str) -> dict[tuple[str, str], int]:
    lines, section = {}, None
    for no, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if s.startswith("[") and s.endswith("]"):
            section = s[1:-1].strip()
        elif section and s and s[0] not in "#;" and ("=" in s or ":" in s):
            key = re.split(r"[=:]", s, maxsplit=1)[0].strip()
            lines.setdefault((section, key), no)
    return lines


def parse_config_text(text: str, overrides: list[str] | tuple = ()) -> RunConfig:
    values = copy.deepcopy(DEFAULTS)
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"),
                                   delimiters=("=",), empty_lines_in_values=False)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError(f"line {exc.lineno}: expected a [section] header before {exc.line.strip()!r}") from None
    except configparser.ParsingError as exc:
        lineno, line = exc.errors[0]
        raise ConfigError(f"line {lineno}: cannot parse {line} (expected key = value)") from None
    except configparser.DuplicateSectionError as exc:
        raise ConfigError(f"line {exc.lineno}: duplicate section [{exc.section}]") from None
    except configparser.DuplicateOptionError as exc:
        raise ConfigError(f"line {exc.lineno}: duplicate key {exc.option!r} in [{exc.section}]") from None
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    lines = _key_lines(text)
    for section in cp.sections():
        if section not in DEFAULTS:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in cp.items(section):
            _assign(values, section, key, raw, f"line {lines.get((section, key), '?')}")
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        lhs, raw = item.split("=", 1)
        section, key = lhs.strip().split(".", 1)
        _assign(values, section.strip(), key.strip(), raw, f"--set {item}")
    return validate(values)


def parse_config(path: str | Path | None = None, overrides: list[str] | tuple = ()) -> RunConfig:
    """Read ``path`` (or only defaults when ``None``), apply ``section.key=value`` overrides, validate."""
    text = ""
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file {p} does not exist")
        text = p.read_text(encoding="utf-8")
    return parse_config_text(text, overrides)


def dump_config(cfg: RunConfig) -> str:
    out = []
    for section, keys in cfg.values.items():
        out.append(f"[{section}]")
        out.extend(f"{k} = {_format(v)}" for k, v in keys.items())
        out.append("")
    return "\n".join(out)
