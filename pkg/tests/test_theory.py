import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import make_env, grid_box
from pflowlab.env import support_masses
from pflowlab.reward import RewardConfig, tilted_posterior
from pflowlab.theory import (
    LARGE_LAMBDA,
    SMALL_LAMBDA,
    TOL,
    RegularityParams,
    bound_derivative_q,
    calibrated_bound,
    calibration_sweep,
    exact_tv_tilted_vs_valid,
    lambda_star,
    log_lambda_grid,
    partition,
    regularity_check,
    tv_bound_thm1,
    verify_theorems,
)

# eps values inside the valid regime of each bundled env
VALID_EPS = {"t1": (0.3, 0.5), "r1": (0.2, 0.35), "r2": (0.2, 0.3)}


def bound_mp(s_v, q, lam):
    mpmath.mp.dps = 40
    s_v, q, lam = mpmath.mpf(s_v), mpmath.mpf(q), mpmath.mpf(lam)
    a = mpmath.e ** (-lam)
    z = q * s_v + a * (1 - q * s_v)
    return (q * abs(s_v - z) + (1 - q) * abs(a * s_v - z) + a * (1 - s_v)) / (2 * z)


def test_spot_value_against_high_precision():
    mpmath.mp.dps = 40
    want = bound_mp(0.5, 0.5, 1)
    # at this point the three terms sum to exp(-1), so the bound is exp(-1) / (2 Z)
    z = mpmath.mpf(0.25) + mpmath.e ** -1 * mpmath.mpf(0.75)
    assert abs(want - mpmath.e ** -1 / (2 * z)) < mpmath.mpf(10) ** -35
    assert abs(tv_bound_thm1(0.5, 0.5, 1.0) - float(want)) <= 1e-9
    assert tv_bound_thm1(0.5, 0.5, 1.0) == pytest.approx(0.34975540905, abs=1e-11)


@settings(max_examples=300)
@given(st.floats(1e-3, 1), st.floats(0, 1), st.floats(0, 30))
def test_bound_matches_high_precision(s_v, q, lam):
    assert tv_bound_thm1(s_v, q, lam) == pytest.approx(float(bound_mp(s_v, q, lam)), abs=1e-13)


def test_bound_limits_on_grid():
    for s_v in np.linspace(0.05, 1.0, 20):
        for q in np.linspace(0.0, 1.0, 21):
            assert tv_bound_thm1(s_v, q, 0.0) == pytest.approx(1 - s_v, abs=1e-15)
            assert abs(tv_bound_thm1(s_v, q, SMALL_LAMBDA) - (1 - s_v)) <= TOL.small_lambda_limit
            if q > 0:
                assert abs(tv_bound_thm1(s_v, q, LARGE_LAMBDA) - (1 - q)) <= TOL.large_lambda_limit
            else:
                # no vicinity mass: Z is exp(-lambda) and the bound never leaves 1 - s_v
                assert tv_bound_thm1(s_v, q, LARGE_LAMBDA) == pytest.approx(1 - s_v, abs=1e-15)


def test_bound_domain_errors():
    for args in ((0.5, 1.2, 1.0), (0.0, 0.5, 1.0), (0.5, 0.5, -1.0)):
        with pytest.raises(ValueError):
            tv_bound_thm1(*args)


def test_partition_identity():
    assert partition(0.5, 0.5, 1.0) == pytest.approx(0.25 + 0.75 * math.exp(-1), abs=1e-16)


def test_exact_tv_equals_bound_in_valid_regime(envs):
    for name, env in envs.items():
        for eps in VALID_EPS[name]:
            s = support_masses(env, eps)
            assert s.vicinity_within_valid
            for lam in log_lambda_grid():
                exact = exact_tv_tilted_vs_valid(env, RewardConfig(lam=lam, eps=eps))
                assert abs(exact - tv_bound_thm1(s.s_v, s.q, lam)) <= TOL.equality


def test_exact_tv_at_zero_lambda(envs):
    for env in envs.values():
        s = support_masses(env, 0.5)
        assert exact_tv_tilted_vs_valid(env, RewardConfig(lam=0.0, eps=0.5)) == pytest.approx(1 - s.s_v, abs=1e-14)


def test_expert_equals_golden_large_lambda_vanishes():
    boxes = [grid_box(0, 0, 100, 100), grid_box(500, 500, 600, 600), grid_box(0, 0, 95, 100)]
    env = make_env([(0,), (1,), (2,)], [[1.0]] * 3, [0.3, 0.5, 0.2], boxes=boxes, sigma=0.1)
    assert exact_tv_tilted_vs_valid(env, RewardConfig(lam=LARGE_LAMBDA, eps=env.sigma)) <= 1e-15


def test_lambda_star():
    assert lambda_star(0.5, 0.25) == pytest.approx(math.log(3), abs=1e-15)
    assert lambda_star(0.5, 0.25) == pytest.approx(1.098612, abs=1e-6)
    assert lambda_star(0.4, 0.0) == pytest.approx(math.log(1 / 0.4), abs=1e-15)
    assert lambda_star(0.3, 0.3) == math.inf
    with pytest.raises(ValueError):
        lambda_star(0.3, 0.4)


def test_calibration_identity(envs):
    for name, env in envs.items():
        for eps in VALID_EPS[name]:
            s = support_masses(env, eps)
            lam = lambda_star(s.s_v, s.s_b)
            if math.isfinite(lam):
                _, z = tilted_posterior(env, RewardConfig(lam=lam, eps=eps))
                assert abs(z - s.s_v) <= TOL.equality
                assert abs(tv_bound_thm1(s.s_v, s.q, lam) - calibrated_bound(s.s_v, s.q)) <= TOL.equality


def test_calibrated_bound_values():
    assert calibrated_bound(0.5, 0.5) == pytest.approx(1 / 3, abs=1e-16)
    assert calibrated_bound(0.4, 1.0) == 0.0
    assert calibrated_bound(0.4, 0.0) == pytest.approx(0.6, abs=1e-16)


def test_calibrated_bound_guarantee():
    rng = np.random.default_rng(0)
    for s_v, q in rng.uniform(1e-9, 1 - 1e-9, size=(10_000, 2)):
        assert calibrated_bound(s_v, q) < min(1 - s_v, 1 - q)


def test_derivative():
    assert bound_derivative_q(0.5, 0.5) == pytest.approx(-4 / 9, abs=1e-15)
    assert -1e-6 < bound_derivative_q(1 - 1e-4, 0.5) < 0
    h = 1e-6
    for s_v in np.linspace(0.05, 0.95, 19):
        for q in np.linspace(0.05, 0.95, 19):
            fd = (calibrated_bound(s_v, q + h) - calibrated_bound(s_v, q - h)) / (2 * h)
            d = bound_derivative_q(s_v, q)
            assert d < 0
            assert abs(d - fd) <= TOL.derivative_fd


def test_monotone_tightening_pairwise():
    qs = np.linspace(0, 1, 41)
    for s_v in np.linspace(0.05, 0.95, 10):
        vals = [calibrated_bound(s_v, q) for q in qs]
        assert all(a > b for a, b in zip(vals, vals[1:]))


def test_regularity_check(t1):
    p = RegularityParams(kappa=1.0, d_eff=2.0, sigma=0.4)
    assert regularity_check(0.0, p, 0.0)
    assert not regularity_check(0.99, p, 0.4) and regularity_check(1.0, p, 0.4)
    q = support_masses(t1, 0.3).q
    # (0.3 / 0.4)^2 = 0.5625 > q = 0.5
    assert not regularity_check(q, p, 0.3)
    assert regularity_check(q, RegularityParams(kappa=1.0, d_eff=3.0, sigma=0.4), 0.3)
    with pytest.raises(ValueError):
        RegularityParams(kappa=0.5, d_eff=1.0, sigma=0.4)
    with pytest.raises(ValueError):
        regularity_check(q, p, 0.5)


def test_sweep_shape_order_and_flags(t1):
    lams, epss = [0.1, 1.0, 5.0], [0.3, 0.7]
    rows = calibration_sweep(t1, lams, epss)
    assert [(r.lam, r.eps) for r in rows] == [(l, e) for l in lams for e in epss]
    assert [r.calibrated for r in rows] == [True, False] * 3
    assert calibration_sweep(t1, lams, epss, threads=4) == rows
    with pytest.raises(ValueError):
        calibration_sweep(t1, [], epss)


def test_sweep_cell_at_lambda_star(t1):
    lam = lambda_star(0.5, 0.25)
    (row,) = calibration_sweep(t1, [lam], [0.5])
    assert abs(row.bound - calibrated_bound(0.5, 0.5)) <= 1e-12
    assert abs(row.exact_tv - 1 / 3) <= 1e-12


def test_bound_argmin_near_lambda_star(envs):
    for name, env in envs.items():
        eps = VALID_EPS[name][-1]
        s = support_masses(env, eps)
        lam_s = lambda_star(s.s_v, s.s_b)
        grid = np.arange(0.0, 8.0, 0.1)
        rows = calibration_sweep(env, grid, [eps])
        best = grid[int(np.argmin([r.bound for r in rows]))]
        assert abs(best - lam_s) <= 0.1 + 1e-12


def test_calibrated_bound_non_increasing_in_eps(envs):
    for env in envs.values():
        prev = math.inf
        for eps in np.linspace(0, 1, 41):
            s = support_masses(env, eps)
            if not s.vicinity_within_valid:
                break
            cb = calibrated_bound(s.s_v, s.q)
            assert cb <= prev + 1e-15
            prev = cb


def test_verify_theorems_report(t1):
    checks, reports = verify_theorems(t1, log_lambda_grid(), [0.3, 0.5, 0.7])
    assert all(c.passed for c in checks)
    names = {c.name for c in checks}
    assert {"partition", "tv_equality", "proportionality", "calibration_identity", "calibrated_bound",
            "guarantee", "limit_small_lambda", "limit_large_lambda", "monotone_in_q"} <= names
    skipped = [c for c in checks if c.name == "tv_equality" and "skipped" in c.detail]
    assert len(skipped) == 20 and all(c.detail["eps"] == 0.7 for c in skipped)


def test_sweep_matches_unshared_cells(envs):
    from pflowlab.theory import _cell

    for env in envs.values():
        for r in calibration_sweep(env, [0.01, 1.0, 9.0], [0.0, 0.3, 0.5, 1.0]):
            ref = _cell(env, r.lam, r.eps, 10_000)
            assert r.calibrated == ref.calibrated
            for f in ("s_v", "s_b", "q", "z_lambda", "bound", "exact_tv"):
                assert getattr(r, f) == pytest.approx(getattr(ref, f), abs=1e-13), f
