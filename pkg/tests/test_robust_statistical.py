import numpy as np
import pytest

from risrobust.conic import ConicProgram, lift
from risrobust.robust_bounded import FCU, PCU, normalize, random_theta
from risrobust.robust_statistical import (DegenerateRecovery, StatisticalDesignParams,
                                          ao_statistical, bti_constraints, bti_margin, bti_terms,
                                          bti_terms_pcu, rank_one_project, rank_one_recover,
                                          rank_ratio, solve_scsie_fcu, solve_theta_scsie,
                                          solve_w_scsie, xi_matrix)
from risrobust.scenario import ChannelSet, SystemConfig, generate_channels
from risrobust.uncertainty import StatisticalErrorModel, statistical_from_levels
from risrobust.validate import bti_soundness, empirical_outage


def crandn(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def instance(seed=0, K=2, omega=0.01, wD=0.0, **kw):
    cfg = SystemConfig(K=K, **kw)
    ch = generate_channels(cfg, np.random.default_rng(seed))
    err = statistical_from_levels(ch, omega, wD)
    return cfg, ch, err


def test_xi_single_user(rng):
    W = crandn(rng, 3, 1)
    X = xi_matrix(W, 0, 2.0)
    np.testing.assert_allclose(X, W @ W.conj().T / 3.0, atol=1e-14)
    lam = np.linalg.eigvalsh(X)
    assert lam.min() >= -1e-14 and np.sum(lam > 1e-12) == 1


def test_xi_unit_rate_and_domain(rng):
    W = crandn(rng, 3, 3)
    Wm = W[:, 1:]
    np.testing.assert_allclose(xi_matrix(W, 0, 1.0),
                               np.outer(W[:, 0], W[:, 0].conj()) - Wm @ Wm.conj().T, atol=1e-14)
    with pytest.raises(ValueError):
        xi_matrix(W, 0, 0.0)


def test_xi_encodes_sinr(rng):
    for _ in range(200):
        W, h = crandn(rng, 3, 3), crandn(rng, 3)
        R = rng.uniform(0.5, 3.0)
        g = np.abs(h.conj() @ W) ** 2
        sinr = g[0] / (g[1:].sum() + 1.0)
        lhs = np.real(h.conj() @ xi_matrix(W, 0, R) @ h) - 1.0
        assert (lhs >= 0) == (sinr >= 2 ** R - 1)


def test_bti_terms_without_error(rng):
    W, a = crandn(rng, 3, 2), crandn(rng, 3)
    t = bti_terms(xi_matrix(W, 0, 1.0), a, 0.0)
    assert t.trace_term == 0 and np.all(t.frob_term == 0) and t.qvec_norm2 == 0
    assert bti_margin(xi_matrix(W, 0, 1.0), a, 0.0, 0.05) == pytest.approx(t.q_scalar)


def test_bti_terms_pcu_effective_channel(rng):
    hD, H, th = crandn(rng, 2), crandn(rng, 3, 2), np.exp(1j * rng.uniform(0, 6, 3))
    Xi = np.eye(2)
    t = bti_terms_pcu(Xi, hD, H, th, 0.1, 3)
    a = hD + H.conj().T @ th
    assert t.c == pytest.approx(0.3)
    assert t.q_scalar == pytest.approx(np.linalg.norm(a) ** 2 - 1.0)


def _bti_feasible(q0):
    prog = ConicProgram()
    # Xi = 0 gives Q = 0 and q = 0; the constant row equals -sigma2
    terms = bti_terms(np.zeros((2, 2)), np.ones(2), 1.0, sigma2=-q0)
    x, y = bti_constraints(prog, terms, 0.05)
    prog.minimize(x + y)
    return prog.solve()


def test_bti_rows_trivial_cases():
    rep = _bti_feasible(1.0)
    assert rep.ok and rep.objective == pytest.approx(0.0, abs=1e-6)
    assert _bti_feasible(-0.1).status == "infeasible"


def test_bti_sampling_soundness(rng):
    pmin, _ = bti_soundness(rng, instances=3, draws=20_000)
    assert pmin >= 0.95 - 0.01


def test_w_step_single_user_closed_form(rng):
    M, N = 3, 2
    hD = crandn(rng, 1, M) * 2
    ch = ChannelSet(hD, np.zeros((N, M)), np.ones((1, N)), np.zeros((1, N, M)))
    err = StatisticalErrorModel([0.0], [0.0], [0.05], N, M)
    Ps, obj = solve_w_scsie(ch, err, np.ones(N), 2.0)
    assert obj == pytest.approx(3.0 / np.linalg.norm(hD) ** 2, rel=1e-6)


def test_w_step_psd_and_rank_one():
    cfg, ch, err = instance(1)
    chn, errn = normalize(ch, cfg.sigma2, err)
    Ps, _ = solve_w_scsie(chn, errn, random_theta(np.random.default_rng(0), chn.N), cfg.R_th)
    for P in Ps:
        assert np.linalg.eigvalsh(P).min() >= -1e-8 * np.trace(P).real
        assert rank_ratio(P) >= 0.99


def test_rank_one_recovery_cases(rng):
    w = crandn(rng, 4)
    W, ratios, proj = rank_one_recover([np.outer(w, w.conj())], crandn(rng, 1, 4))
    assert not proj[0]
    np.testing.assert_allclose(np.outer(W[:, 0], W[:, 0].conj()), np.outer(w, w.conj()), atol=1e-10)
    for _ in range(100):
        F = crandn(rng, 4, 3)
        P = F @ F.conj().T
        h = crandn(rng, 4)
        Pt, _ = rank_one_project(P, h)
        assert np.trace(Pt).real <= np.trace(P).real * (1 + 1e-12)
        assert np.real(h.conj() @ Pt @ h) == pytest.approx(np.real(h.conj() @ P @ h), rel=1e-10)
    v = np.array([1.0, 0, 0, 0])
    with pytest.raises(DegenerateRecovery):
        rank_one_project(np.outer(v, v), np.array([0, 1.0, 0, 0]))


def test_theta_step_single_element():
    cfg, ch, err = instance(2, N_h=1, N_v=1)
    chn, errn = normalize(ch, cfg.sigma2, err)
    th0 = np.ones(1, dtype=complex)
    Ps, _ = solve_w_scsie(chn, errn, th0, cfg.R_th)
    W, _, _ = rank_one_recover(Ps, chn.effective(th0))
    th, info = solve_theta_scsie(chn, errn, W, th0, cfg.R_th)
    assert th.shape == (1,) and abs(abs(th[0]) - 1) < 1e-15
    assert info["selected_margin"] >= info["incumbent_margin"] - 1e-12


def test_theta_step_keeps_incumbent_feasible():
    cfg, ch, err = instance(3)
    chn, errn = normalize(ch, cfg.sigma2, err)
    th0 = random_theta(np.random.default_rng(5), chn.N)
    Ps, p0 = solve_w_scsie(chn, errn, th0, cfg.R_th)
    W, _, _ = rank_one_recover(Ps, chn.effective(th0))
    th, info = solve_theta_scsie(chn, errn, W, th0, cfg.R_th, rng=np.random.default_rng(1))
    np.testing.assert_allclose(np.abs(th), 1.0, atol=1e-14)
    assert info["selected_margin"] >= info["incumbent_margin"] - 1e-12
    # W stays feasible at the new theta, so the next precoder step cannot cost more
    assert info["selected_margin"] >= -1e-9
    _, p1 = solve_w_scsie(chn, errn, th, cfg.R_th)
    assert p1 <= p0 * (1 + 1e-6)


@pytest.mark.parametrize("scenario,wD", [(PCU, 0.0), (FCU, 0.02)])
def test_ao_statistical_monotone_and_outage(scenario, wD):
    cfg, ch, err = instance(4, wD=wD)
    sol = ao_statistical(ch, err, cfg.R_th, cfg.sigma2, scenario=scenario,
                         rng=np.random.default_rng(0))
    tr = sol.power_trace()
    assert np.all(np.diff(tr) <= 1e-6 * tr[:-1])
    p, lo, hi = empirical_outage(sol.W, sol.theta, ch, err, cfg.R_th, cfg.sigma2, trials=10_000,
                                 rng=np.random.default_rng(1))
    assert np.all(p <= 0.05)


def test_fcu_degenerates_to_pcu():
    cfg, ch, err = instance(5)
    th0 = random_theta(np.random.default_rng(7), ch.N)
    pcu = ao_statistical(ch, err, cfg.R_th, cfg.sigma2, scenario=PCU, theta0=th0,
                         rng=np.random.default_rng(0))
    fcu = solve_scsie_fcu(ch, err, cfg.R_th, cfg.sigma2, theta0=th0, rng=np.random.default_rng(0))
    assert fcu.power == pytest.approx(pcu.power, rel=1e-6)
    err_d = statistical_from_levels(ch, 0.01, 0.02)
    more = solve_scsie_fcu(ch, err_d, cfg.R_th, cfg.sigma2, theta0=th0, rng=np.random.default_rng(0))
    assert more.trace[0]["power_w_step"] >= fcu.trace[0]["power_w_step"] * (1 - 1e-6)


def test_params_validation():
    with pytest.raises(ValueError):
        StatisticalDesignParams(randomizations=0)
