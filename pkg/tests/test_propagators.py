import numpy as np
import pytest

from paramaxwell.grid import GridSpec, MaxwellCoefficients, build_operator, semigroup_apply
from paramaxwell.noise import build_basis, sample_path
from paramaxwell.propagators import (
    NonlinearitySpec,
    TimeGridSpec,
    apply_diffusion,
    apply_drift,
    coarse_G,
    exponential_step,
    fine_F_exponential,
    fine_F_reference,
    parse_kind,
    DRIFT_KINDS,
)

GRID = GridSpec(8)


@pytest.fixture(scope="module")
def op():
    return build_operator(GRID, MaxwellCoefficients(sigma=1.0))


@pytest.fixture(scope="module")
def basis():
    return build_basis(GRID, 4)


def rand_state(seed=0, scale=0.5):
    return scale * np.random.default_rng(seed).standard_normal(GRID.dof)


QUIET = NonlinearitySpec("zero", "zero")


def test_parse_kind():
    assert parse_kind("cos", DRIFT_KINDS) == ("cos", 0.0)
    assert parse_kind(" linear( 0.5 ) ", DRIFT_KINDS) == ("linear", 0.5)
    for bad in ("linear", "cos(1)", "tanh", "constant(nan)"):
        with pytest.raises(ValueError):
            parse_kind(bad, DRIFT_KINDS)


def test_pointwise_examples():
    u = np.zeros(5)
    assert np.all(apply_drift(NonlinearitySpec("zero", "zero"), u) == 0)
    assert np.all(apply_drift(NonlinearitySpec("cos", "zero"), u) == 1)
    v = np.full(3, 0.5)
    np.testing.assert_array_equal(apply_drift(NonlinearitySpec("u_plus_cos", "zero"), v), 0.5 + np.cos(0.5))
    dW = np.random.default_rng(0).standard_normal(5)
    assert np.all(apply_diffusion(NonlinearitySpec("zero", "identity"), dW, np.zeros(5)) == 0)
    assert np.all(apply_diffusion(NonlinearitySpec("zero", "sin"), u, dW) == 0)
    np.testing.assert_array_equal(apply_diffusion(NonlinearitySpec.parse("zero", "constant(1)"), u, dW), dW)
    with pytest.raises(ValueError):
        apply_diffusion(NonlinearitySpec(), u, np.zeros(4))
    with pytest.raises(ValueError):
        apply_drift(NonlinearitySpec(), np.array([np.inf]))


def test_time_grid_validation():
    t = TimeGridSpec(1.0, 2.0**-4, 4, 2)
    assert t.n_intervals == 16 and t.dt == 2.0**-6 and t.dt_ref == 2.0**-7
    for bad in (dict(t_end=1.0, delta_T=0.3), dict(t_end=0.3, delta_T=0.25), dict(t_end=1.0, delta_T=0.5, j_sub=3)):
        with pytest.raises(ValueError):
            TimeGridSpec(**bad)


def test_quiet_step_is_the_semigroup(op):
    u = rand_state()
    got = exponential_step(op, QUIET, None, u, 0.0, 0.25)
    np.testing.assert_array_equal(got, semigroup_apply(op, 0.25, u))


def test_constant_drift_from_zero(op):
    spec = NonlinearitySpec.parse("constant(3)", "zero")
    got = exponential_step(op, spec, None, np.zeros(op.dof), 0.0, 0.125)
    np.testing.assert_allclose(got, op.semigroup_matrix(0.125) @ np.full(op.dof, 3 * 0.125), atol=1e-14)


def test_single_mode_additive_noise(op):
    b = build_basis(GRID, 1)
    p = sample_path(b, 3, 0, 1.0, 2.0**-4)
    spec = NonlinearitySpec.parse("zero", "constant(1)")
    got = exponential_step(op, spec, p, np.zeros(op.dof), 0.25, 0.5)
    beta = p.increments[0, 4:8].sum()
    table = np.concatenate([2 * np.sin(np.pi * x) * np.sin(np.pi * y) for x, y in
                            [(xx.ravel(), yy.ravel()) for xx, yy in GRID.coordinates()]])
    want = op.semigroup_matrix(0.25) @ (0.5 * beta * table)
    np.testing.assert_allclose(got, want, atol=1e-10)


def test_coarse_equals_fine_with_one_substep(op, basis):
    t = TimeGridSpec(0.5, 2.0**-3, 1, 1)
    p = sample_path(basis, 0, 0, 0.5, t.dt)
    u = rand_state(1)
    spec = NonlinearitySpec()
    for n in (1, 4):
        np.testing.assert_array_equal(coarse_G(op, spec, t, p, u, n), fine_F_exponential(op, spec, t, p, u, n))
        np.testing.assert_array_equal(fine_F_reference(op, spec, t, p, u, n), fine_F_exponential(op, spec, t, p, u, n))


def test_coarse_decay_with_strong_damping():
    op32 = build_operator(GRID, MaxwellCoefficients(sigma=32.0))
    t = TimeGridSpec(0.25, 2.0**-4)
    u = rand_state(2)
    out = coarse_G(op32, QUIET, t, None, u, 2)
    assert op32.norm(out) == pytest.approx(np.exp(-32 * 2.0**-4) * op32.norm(u), rel=1e-10)


def test_interval_index_checked(op, basis):
    t = TimeGridSpec(0.5, 2.0**-3)
    p = sample_path(basis, 0, 0, 0.5, t.dt)
    for n in (0, 5):
        with pytest.raises(ValueError):
            coarse_G(op, NonlinearitySpec(), t, p, rand_state(), n)


def test_fine_without_forcing_is_the_semigroup(op):
    t = TimeGridSpec(1.0, 2.0**-2, 8, 4)
    u = rand_state(3)
    want = op.semigroup_matrix(0.25) @ u
    for f in (fine_F_exponential, fine_F_reference):
        np.testing.assert_allclose(f(op, QUIET, t, None, u, 2), want, atol=1e-13)


def test_j4_equals_two_j2_halves(op, basis):
    dT = 2.0**-3
    p = sample_path(basis, 5, 0, 1.0, dT / 4)
    spec = NonlinearitySpec()
    u = rand_state(4)
    whole = fine_F_exponential(op, spec, TimeGridSpec(1.0, dT, 4, 1), p, u, 3)
    halves = TimeGridSpec(1.0, dT / 2, 2, 1)
    mid = fine_F_exponential(op, spec, halves, p, u, 5)
    np.testing.assert_array_equal(whole, fine_F_exponential(op, spec, halves, p, mid, 6))


def test_batched_intervals_match_one_by_one(op, basis):
    t = TimeGridSpec(0.5, 2.0**-3, 4, 1)
    p = sample_path(basis, 6, 0, 0.5, t.dt)
    spec = NonlinearitySpec("cos", "identity")
    us = np.stack([rand_state(s) for s in range(4)])
    batched = fine_F_exponential(op, spec, t, p, us, np.arange(1, 5))
    for i in range(4):
        # gemm and gemv may round differently; agreement is to the last bits
        np.testing.assert_allclose(batched[i], fine_F_exponential(op, spec, t, p, us[i], i + 1), rtol=0, atol=1e-14)


def test_reference_rejects_too_coarse_noise(op, basis):
    t = TimeGridSpec(0.5, 2.0**-3, 2, 4)
    p = sample_path(basis, 0, 0, 0.5, t.dt)
    with pytest.raises(ValueError, match="noise lattice"):
        fine_F_reference(op, NonlinearitySpec(), t, p, rand_state(), 1)


def test_reference_self_convergence(op, basis):
    """Successive oversampled references contract at a rate near sqrt(step) in mean square."""
    dT = 2.0**-2
    samples = list(range(24))
    p = sample_path(basis, 8, samples, dT, dT / 64)
    spec = NonlinearitySpec()
    u = rand_state(5)
    refs = {rho: fine_F_reference(op, spec, TimeGridSpec(dT, dT, 4, rho), p, u, 1) for rho in (2, 4, 8, 16)}
    diffs = [np.sqrt(np.mean(op.norm(refs[2 * r] - refs[r]) ** 2)) for r in (2, 4, 8)]
    assert diffs[0] > diffs[1] > diffs[2]
    rate = np.polyfit(np.log2([2.0, 4.0, 8.0]), np.log2(diffs), 1)[0]
    assert -1.2 < rate < -0.3


def test_deterministic_propagators_ignore_the_seed(op, basis):
    t = TimeGridSpec(0.5, 2.0**-3, 4, 1)
    spec = NonlinearitySpec("u_plus_cos", "zero")
    u = rand_state(7)
    a = fine_F_exponential(op, spec, t, sample_path(basis, 1, 0, 0.5, t.dt), u, 2)
    b = fine_F_exponential(op, spec, t, sample_path(basis, 2, 0, 0.5, t.dt), u, 2)
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(a, fine_F_exponential(op, spec, t, None, u, 2))


def test_lipschitz_stability(op, basis):
    t = TimeGridSpec(0.5, 2.0**-3, 1, 1)
    p = sample_path(basis, 3, 0, 0.5, t.dt)
    spec = NonlinearitySpec()
    u, v = rand_state(8), rand_state(9)
    dW = p.window_fields(np.int64(0), 1)
    lip = 1 + spec.drift_lipschitz * t.dt + spec.diffusion_lipschitz * np.max(np.abs(dW))
    diff = op.norm(coarse_G(op, spec, t, p, u, 1) - coarse_G(op, spec, t, p, v, 1))
    assert diff <= lip * op.norm(u - v)
