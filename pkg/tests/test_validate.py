import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from risrobust.robust_statistical import ao_statistical
from risrobust.scenario import ChannelSet, SystemConfig, generate_channels
from risrobust.uncertainty import (BoundedErrorModel, StatisticalErrorModel,
                                   statistical_from_levels)
from risrobust.validate import (baseline_nonrobust, empirical_outage, oracle_report_csv,
                                oracle_suite, oracle_surrogate, oracle_trace_identity,
                                quantize_phases, rate, validate_solution, wilson_interval,
                                worst_case_margin)


def crandn(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def rand_channels(rng, K=3, M=3, N=2):
    G = crandn(rng, N, M)
    hR = crandn(rng, K, N)
    H = np.stack([np.diag(hR[k].conj()) @ G for k in range(K)])
    return ChannelSet(crandn(rng, K, M), G, hR, H)


def test_rate_single_user_unit_gain():
    ch = ChannelSet(np.array([[1.0 + 0j]]), np.zeros((1, 1)), np.ones((1, 1)), np.zeros((1, 1, 1)))
    assert rate(ch, np.array([[1.0 + 0j]]), np.ones(1), 1.0)[0] == pytest.approx(1.0)


def test_rate_zero_precoder(rng):
    ch = rand_channels(rng)
    np.testing.assert_array_equal(rate(ch, np.zeros((3, 3)), np.ones(2), 1.0), 0.0)


def test_rate_matches_scalar_loop(rng):
    ch = rand_channels(rng)
    W = crandn(rng, 3, 3)
    th = np.exp(1j * rng.uniform(0, 6.3, 2))
    r = rate(ch, W, th, 0.3)
    for k in range(3):
        # row k written out: z_i = sum_m conj(hD_km) W_mi + sum_n conj(theta_n) (H_k W)_ni
        z = [sum(np.conj(ch.hD[k, m]) * W[m, i] for m in range(3))
             + sum(np.conj(th[n]) * sum(ch.H[k, n, m] * W[m, i] for m in range(3)) for n in range(2))
             for i in range(3)]
        p = [abs(x) ** 2 for x in z]
        assert r[k] == pytest.approx(math.log2(1 + p[k] / (sum(p) - p[k] + 0.3)), abs=1e-12)


def test_outage_trivial_cases(rng):
    ch = rand_channels(rng, K=1, M=2)
    W = ch.hD.conj().T * 10.0
    th = np.ones(2)
    zero = StatisticalErrorModel([0.0], [0.0], [0.05], 2, 2)
    R = float(rate(ch, W, th, 1.0)[0]) - 0.1
    p, lo, hi = empirical_outage(W, th, ch, zero, R, 1.0, trials=500, rng=rng)
    assert p[0] == 0 and lo[0] == 0
    p, _, _ = empirical_outage(np.zeros((2, 1)), th, ch, zero, 1.0, 1.0, trials=500, rng=rng)
    assert p[0] == 1
    with pytest.raises(ValueError):
        empirical_outage(W, th, ch, zero, R, 1.0, trials=0)


def test_worst_case_trivial_cases(rng):
    ch = rand_channels(rng)
    W = crandn(rng, 3, 3)
    th = np.ones(2)
    zero = BoundedErrorModel(np.zeros(3), np.zeros(3), 2, 3)
    wc = worst_case_margin(W, th, ch, zero, 1.0, 1.0, samples=50, rng=rng)
    np.testing.assert_allclose(wc, rate(ch, W, th, 1.0), rtol=1e-12)
    ball = BoundedErrorModel(np.full(3, 0.1), np.zeros(3), 2, 3)
    np.testing.assert_array_equal(worst_case_margin(np.zeros((3, 3)), th, ch, ball, 1.0, 1.0,
                                                    samples=50, rng=rng), 0.0)


def test_wilson_interval():
    lo, hi = wilson_interval(0, 10_000)
    assert lo == 0 and 0 < hi < 5e-4
    lo, hi = wilson_interval(50, 100)
    assert lo < 0.5 < hi
    with pytest.raises(ValueError):
        wilson_interval(0, 0)


def test_report_csv_and_seed(rng):
    ch = rand_channels(rng)
    W = crandn(rng, 3, 3) * 3
    th = np.ones(2)
    st_ = StatisticalErrorModel(np.full(3, 0.01), np.zeros(3), np.full(3, 0.05), 2, 3)
    a = validate_solution(W, th, ch, 0.5, 1.0, statistical=st_, trials=200, seed=4)
    b = validate_solution(W, th, ch, 0.5, 1.0, statistical=st_, trials=200, seed=4)
    assert a.to_csv() == b.to_csv()
    lines = a.to_csv().splitlines()
    assert lines[0] == "user,nominal_rate,outage,outage_ci_lo,outage_ci_hi,worst_case_rate"
    assert len(lines) == 4 and lines[1].endswith(",")
    with pytest.raises(ValueError):
        validate_solution(W, th, ch, 0.5, 1.0, trials=0)


def test_oracle_suite_passes():
    res = oracle_suite(seed=0)
    assert all(r.passed for r in res), [(r.name, r.max_deviation) for r in res]
    assert max(r.max_deviation for r in res) < 1e-9
    csv = oracle_report_csv(res)
    assert csv.splitlines()[0].startswith("oracle")
    assert len(csv.splitlines()) == len(res) + 1


def test_oracle_spot_checks(rng):
    assert oracle_trace_identity(rng, draws=5).passed
    assert all(r.passed for r in oracle_surrogate(rng, draws=20))


def test_quantize_phases():
    grid = np.exp(2j * np.pi * np.arange(4) / 4)
    np.testing.assert_allclose(quantize_phases(grid, 2), grid, atol=1e-15)
    th = np.exp(1j * np.random.default_rng(0).uniform(-np.pi, np.pi, 50))
    for b in (1, 3, 8, 12):
        d = np.abs(np.angle(quantize_phases(th, b) / th))
        assert d.max() <= np.pi / 2 ** b + 1e-12
    with pytest.raises(ValueError):
        quantize_phases(th, 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 10), st.lists(st.floats(-10, 10), min_size=1, max_size=8))
def test_quantize_is_idempotent_and_unit(bits, phases):
    q = quantize_phases(np.exp(1j * np.array(phases)), bits)
    np.testing.assert_allclose(np.abs(q), 1.0, atol=1e-15)
    np.testing.assert_allclose(quantize_phases(q, bits), q, atol=1e-12)


def _baseline_instance(seed):
    cfg = SystemConfig(K=2)
    ch = generate_channels(cfg, np.random.default_rng(seed))
    return cfg, ch


def test_baseline_nonrobust_properties():
    bad = 0
    for seed in range(5):
        cfg, ch = _baseline_instance(seed)
        th0 = np.ones(ch.N, dtype=complex)
        base = baseline_nonrobust(ch, cfg.R_th, cfg.sigma2, np.random.default_rng(0), theta0=th0)
        exact = StatisticalErrorModel(np.zeros(2), np.zeros(2), np.full(2, 0.05), ch.N, ch.M)
        p0, _, _ = empirical_outage(base.W, base.theta, ch, exact, cfg.R_th - 1e-6, cfg.sigma2,
                                    trials=200, rng=np.random.default_rng(1))
        assert np.all(p0 == 0)
        noisy = statistical_from_levels(ch, 0.05)
        p, _, _ = empirical_outage(base.W, base.theta, ch, noisy, cfg.R_th, cfg.sigma2,
                                   trials=2000, rng=np.random.default_rng(2))
        bad += int(np.any(p > 0.05))
        robust = ao_statistical(ch, noisy, cfg.R_th, cfg.sigma2, theta0=th0,
                                rng=np.random.default_rng(0))
        assert base.trace[0]["power_w_step"] <= robust.trace[0]["power_w_step"] * (1 + 1e-6)
    assert bad >= 3
