import csv

import numpy as np
import pytest

from paramaxwell.cli import main
from paramaxwell.config import DEFAULTS, ConfigError, dump_config, parse_config, parse_config_text


def test_empty_file_gives_defaults(tmp_path):
    f = tmp_path / "empty.ini"
    f.write_text("")
    cfg = parse_config(f)
    assert cfg.values == DEFAULTS
    assert cfg.setup().sigma == 2.0 and cfg.study("converge").samples == 50


def test_grammar():
    cfg = parse_config_text(
        """
        [time]
        delta_T = 2^-5   # a power of two
        [converge]
        k_list = 1, 2
        pairs = cos:identity
        [costmodel]
        measure = true
        """.replace("        ", "")
    )
    assert cfg["time"]["delta_T"] == 2.0**-5
    assert cfg["converge"]["k_list"] == [1, 2]
    assert cfg["converge"]["pairs"] == [("cos", "identity")]
    assert cfg["costmodel"]["measure"] is True


def test_echo_round_trips():
    cfg = parse_config_text("[coefficients]\nsigma = 8\n[run]\nseed = 12345678901234\n")
    assert parse_config_text(dump_config(cfg)).values == cfg.values


@pytest.mark.parametrize(
    "text, fragment",
    [
        ("[coefficients]\nsigma = -1\n", "sigma >= 0"),
        ("[time]\ndelta_T = 0.3\n", "align"),
        ("[grid]\nnx = 16\nwidth = 3\n", "line 3: unknown key 'width'"),
        ("[colour]\nred = 1\n", "unknown section"),
        ("nx = 16\n", "line 1"),
        ("[grid]\nnx 16\n", "line 2"),
        ("[grid]\nnx = 1.5\n", "integer"),
        ("[nonlinearity]\ndrift = tanh\n", "nonlinearity"),
        ("[efficiency]\nj_sub = 8\nexp_ratio = 8\n", "finer"),
    ],
)
def test_validation_errors(text, fragment):
    with pytest.raises(ConfigError, match=fragment):
        parse_config_text(text)


def test_overrides():
    cfg = parse_config_text("", ["coefficients.sigma=8", "damping.sigmas = 0, 4"])
    assert cfg["coefficients"]["sigma"] == 8.0 and cfg["damping"]["sigmas"] == [0.0, 4.0]
    with pytest.raises(ConfigError):
        parse_config_text("", ["sigma=8"])


def test_missing_file():
    with pytest.raises(ConfigError, match="does not exist"):
        parse_config("/nonexistent/x.ini")


def test_costmodel_command(tmp_path):
    assert main(["costmodel", "--out", str(tmp_path)]) == 0
    with (tmp_path / "costmodel.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert float(rows[0]["cost_parareal"]) == 30.0
    assert float(rows[0]["cost_exp"]) == 100.0
    echo = (tmp_path / "config.ini").read_text()
    assert parse_config_text(echo).values == parse_config_text("", [f"run.output_dir={tmp_path}"]).values


def test_exit_codes(tmp_path, capsys):
    assert main(["transmogrify"]) == 1
    assert "usage" in capsys.readouterr().err
    assert main(["costmodel", "--set", "coefficients.sigma=-1", "--out", str(tmp_path)]) == 1
    assert main(["costmodel", "--samples", "3", "--out", str(tmp_path)]) == 1
    bad = tmp_path / "bad.ini"
    bad.write_text("[grid]\nnx = 16\n[grid]\nnx = 8\n")
    assert main(["costmodel", "--config", str(bad)]) == 1
    # non-finite growth is a runtime failure
    args = ["single-run", "--out", str(tmp_path), "--set", "nonlinearity.drift=linear(1e200)",
            "--set", "coefficients.sigma=0", "--set", "time.t_end=4", "--set", "time.delta_T=1"]
    with np.errstate(over="ignore", invalid="ignore"):
        assert main(args) == 2


def test_single_run_and_selftest(tmp_path):
    out = tmp_path / "s"
    assert main(["single-run", "--out", str(out), "--set", "grid.nx=6", "--set", "time.t_end=0.25",
                 "--set", "time.delta_T=2^-3"]) == 0
    with (out / "single_run.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 4 * 3
    assert main(["selftest", "--quick", "--out", str(out)]) == 0


def test_study_commands_write_csvs(tmp_path):
    small = ["--set", "grid.nx=6", "--set", "noise.n_modes=2", "--samples", "2"]
    assert main(["converge", "--out", str(tmp_path), *small, "--set", "converge.delta_T_list=2^-3,2^-4,2^-5",
                 "--set", "converge.k_list=1,2"]) == 0
    assert main(["damping", "--out", str(tmp_path), *small, "--set", "damping.k_max=2",
                 "--set", "damping.delta_T=2^-3"]) == 0
    assert main(["longtime", "--out", str(tmp_path), *small, "--set", "longtime.t_end_list=1,2",
                 "--set", "longtime.k_max=2", "--set", "longtime.delta_T=2^-3"]) == 0
    assert main(["efficiency", "--out", str(tmp_path), *small, "--set", "efficiency.t_end_list=1,2",
                 "--set", "efficiency.delta_T=2^-2"]) == 0
    for name in ("convergence", "orders", "damping", "longtime", "efficiency"):
        assert (tmp_path / f"{name}.csv").stat().st_size > 0


def test_converge_bytes_do_not_depend_on_threads(tmp_path):
    args = ["converge", "--set", "grid.nx=6", "--set", "noise.n_modes=3", "--samples", "4",
            "--set", "converge.delta_T_list=2^-3,2^-4,2^-5", "--set", "converge.k_list=1,2"]
    outs = []
    for threads in (1, 4):
        out = tmp_path / f"t{threads}"
        assert main([*args, "--threads", str(threads), "--out", str(out)]) == 0
        outs.append(out)
    for name in ("convergence.csv", "orders.csv"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
