import csv
from fractions import Fraction

import numpy as np
import pytest

from paramaxwell import harness
from paramaxwell.harness import (
    CostModelParams,
    ProblemSetup,
    StudySpec,
    estimate_order,
    mean_square_error,
    mean_square_summary,
    predict_cost,
)
from paramaxwell.parareal import PararealConfig, PararealRun
from paramaxwell.propagators import TimeGridSpec


def fake_run(errors, cfg=None):
    errors = np.asarray(errors, dtype=float)
    cfg = cfg or PararealConfig(TimeGridSpec(1.0, 0.5))
    return PararealRun(cfg, None, None, errors, np.zeros(errors.shape[0]))


def test_mean_square_error_examples():
    zero = fake_run(np.zeros((2, 3)))
    assert mean_square_error([zero], 1)[1] == 0.0
    # one sample, one known difference field with ||d||_H^2 = 0.36
    one = fake_run([[0.0, 0.36, 0.04]])
    assert mean_square_error([one], 0)[1] == pytest.approx(0.6)
    c = 0.25
    runs = [fake_run([[0.0, c**2, c**2 / 4]]) for _ in range(7)]
    assert mean_square_error(runs, 0)[1] == pytest.approx(c, rel=1e-15)


def test_mean_square_error_rejects_mixed_configs():
    a = fake_run(np.zeros((1, 3)))
    b = fake_run(np.zeros((1, 3)), PararealConfig(TimeGridSpec(1.0, 0.5), k_max=5))
    with pytest.raises(ValueError):
        mean_square_error([a, b], 0)
    with pytest.raises(ValueError):
        mean_square_error([], 0)


def test_mean_square_summary_half_width():
    rng = np.random.default_rng(0)
    sq = rng.exponential(size=(400, 3)) * np.array([0.0, 1.0, 4.0])
    rms, hw, n_star = mean_square_summary(sq)
    assert n_star == 2
    assert rms == pytest.approx(np.sqrt(sq[:, 2].mean()))
    want = 1.96 * sq[:, 2].std(ddof=1) / np.sqrt(400) / (2 * rms)
    assert hw == pytest.approx(want)
    assert mean_square_summary(sq[:1])[1] == 0.0


def test_order_fit_examples():
    steps = [2.0**-e for e in range(10, 14)]
    assert estimate_order([(d, d**1.5) for d in steps]).slope == pytest.approx(1.5, abs=1e-12)
    flat = estimate_order([(d, 0.7) for d in steps])
    assert abs(flat.slope) <= 1e-12
    fit = estimate_order([(d, 3 * d**2) for d in steps])
    assert fit.slope == pytest.approx(2.0, abs=1e-12)
    assert fit.intercept == pytest.approx(np.log2(3), abs=1e-12)
    assert fit.residual <= 1e-12


def test_order_fit_rejects_degenerate_input():
    with pytest.raises(ValueError):
        estimate_order([(0.5, 1.0), (0.25, 0.5)])
    with pytest.raises(ValueError):
        estimate_order([(0.5, 1.0), (0.5, 0.5), (0.25, 0.1)])
    with pytest.raises(ValueError):
        estimate_order([(0.5, 1.0), (0.25, 0.0), (0.125, 0.1)])


def test_cost_model_examples():
    base = dict(K=1, T=1.0, delta_T=0.1, delta_t_fine=0.01, tau_G=1.0, tau_F_aux=1.0, n_proc=10,
                tau_exp=1.0, delta_T_prime=0.01)
    par, exp, eff = predict_cost(CostModelParams(**base))
    assert par == 30.0 and exp == 100.0
    assert eff == pytest.approx(100 / 30, rel=1e-15)
    par0, _, _ = predict_cost(CostModelParams(**{**base, "K": 0}))
    assert par0 == 10.0


def test_cost_model_is_exact_on_dyadic_inputs():
    p = CostModelParams(K=3, T=8.0, delta_T=2.0**-3, delta_t_fine=2.0**-7, tau_G=2.0**-10, tau_F_aux=2.0**-12,
                        n_proc=4, tau_exp=2.0**-10, delta_T_prime=2.0**-6)
    par, exp, eff = predict_cost(p)
    want_par = 4 * 64 * Fraction(1, 1024) + 3 * 1024 * Fraction(1, 4096) / 4
    assert Fraction(par) == want_par
    assert Fraction(exp) == 512 * Fraction(1, 1024)
    assert eff == float(Fraction(exp) / want_par)


def test_cost_model_validation():
    with pytest.raises(ValueError):
        CostModelParams(-1, 1.0, 0.1, 0.01, 1.0, 1.0, 1, 1.0, 0.01)
    with pytest.raises(ValueError):
        CostModelParams(1, 1.0, 0.0, 0.01, 1.0, 1.0, 1, 1.0, 0.01)


def test_study_spec_validation():
    with pytest.raises(ValueError):
        StudySpec(samples=0)
    with pytest.raises(ValueError):
        StudySpec(coarse_steps=(0.1, 0.05, 0.025))
    with pytest.raises(ValueError):
        StudySpec(sigmas=(0.0, -2.0))
    assert [list(b) for b in StudySpec(samples=5, batch=2).sample_batches()] == [[0, 1], [2, 3], [4]]


SMALL = ProblemSetup(nx=6, n_modes=3, sigma=2.0)


def test_deterministic_control_beats_half_order():
    """Without noise the parareal error gains at least a full order per iteration."""
    study = StudySpec(samples=1, k_list=(1, 2), coarse_steps=(2.0**-3, 2.0**-4, 2.0**-5), t_end=1.0,
                      pairs=(("u_plus_cos", "zero"),))
    report = harness.convergence_study(SMALL, study)
    for k in (1, 2):
        assert report.order("u_plus_cos/zero", k).slope >= k


def test_convergence_study_rows():
    study = StudySpec(samples=3, batch=2, k_list=(1, 2), coarse_steps=(2.0**-3, 2.0**-4, 2.0**-5), t_end=0.5)
    report = harness.convergence_study(SMALL, study)
    assert len(report.rows) == 2 * 2 * 3 and len(report.orders) == 4
    assert all(r.mse >= 0 and r.mse_halfwidth >= 0 and r.samples == 3 for r in report.rows)


def test_damping_study_determinism():
    study = StudySpec(samples=2, sigmas=(0.0, 0.0, 8.0), t_end=0.5, delta_T=2.0**-3, k_max=3)
    rows = harness.damping_study(SMALL, study)
    first = [r.sup_error for r in rows if r.key == 0.0]
    assert first[:4] == first[4:]
    with pytest.raises(ValueError):
        harness.damping_study(SMALL, StudySpec(sigmas=(2.0, 8.0)))


def test_longtime_reaches_exactness_at_k_equal_n():
    study = StudySpec(samples=2, t_end_list=(0.5, 1.0), delta_T=2.0**-3, k_max=8)
    rows = harness.longtime_study(SMALL, study)
    for r in rows:
        n_int = int(r.key / 2.0**-3)
        if r.k >= n_int:
            assert r.worst_sample <= 1e-12


def test_efficiency_study_structure():
    study = StudySpec(samples=1, batch=1, delta_T=2.0**-2, t_end_list=(1.0, 2.0), exp_ratio=2)
    rows = harness.efficiency_study(SMALL.with_(j_sub=4), study, k=2)
    assert [(r.method, r.t_end) for r in rows] == [("parareal", 1.0), ("exponential", 1.0),
                                                   ("parareal", 2.0), ("exponential", 2.0)]
    assert all(r.cpu_seconds > 0 and r.error_l2 >= 0 for r in rows)
    with pytest.raises(ValueError):
        harness.efficiency_study(SMALL.with_(j_sub=2), study, k=2)


def test_measured_cost_parameters():
    study = StudySpec(samples=1, t_end=1.0, delta_T=2.0**-2, exp_ratio=2)
    p = harness.measure_costs(SMALL, study, K=2, calls=100)
    assert p.tau_G > 0 and p.tau_F_aux > 0 and p.tau_exp > 0
    assert p.delta_t_fine == 2.0**-4 and p.delta_T_prime == 2.0**-3


def test_csv_writer(tmp_path):
    report = harness.convergence_study(SMALL, StudySpec(samples=1, k_list=(1,), t_end=0.5,
                                                        coarse_steps=(2.0**-3, 2.0**-4, 2.0**-5)))
    path = harness.write_csv(tmp_path / "c.csv", "convergence", harness.convergence_rows(report))
    with path.open() as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == list(harness.CSV_COLUMNS["convergence"])
    assert len(rows) == 1 + len(report.rows)
    assert float(rows[1][6]) == report.rows[0].mse
