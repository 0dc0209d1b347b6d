import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from risrobust.scenario import (SystemConfig, cascade, channels_from_text, channels_to_text,
                                config_from_text, config_to_text, doppler_shift, generate_channels,
                                noise_power_dbm, path_loss_db, steering_vector)


def test_steering_broadside_is_all_ones():
    np.testing.assert_allclose(steering_vector(0.0, 0.0, 2, 2, 0.5), np.ones(4))


def test_steering_single_element():
    assert np.allclose(steering_vector(0.7, -0.3, 1, 1, 0.5), [1.0])


def test_steering_half_wave_endfire():
    np.testing.assert_allclose(steering_vector(math.pi / 2, 0.0, 2, 1, 0.5), [1, -1], atol=1e-12)


@given(st.floats(-math.pi, math.pi), st.floats(-math.pi / 2, math.pi / 2),
       st.integers(1, 4), st.integers(1, 4))
def test_steering_unit_modulus(phi, delta, nh, nv):
    a = steering_vector(phi, delta, nh, nv)
    assert a.shape == (nh * nv,)
    np.testing.assert_allclose(np.abs(a), 1.0, atol=1e-12)


@pytest.mark.parametrize("args,expected", [((-30, 3.7, 1, 1), -30.0), ((-30, 2, 1, 10), -50.0),
                                           ((-30, 3, 1, 100), -90.0)])
def test_path_loss(args, expected):
    assert path_loss_db(*args) == pytest.approx(expected, abs=1e-12)


def test_path_loss_rejects_nonpositive_distance():
    with pytest.raises(ValueError):
        path_loss_db(-30, 2, 1, 0.0)


def test_doppler():
    assert doppler_shift(100, math.pi / 2, 0, 1.499) == pytest.approx(0.0, abs=1e-12)
    assert doppler_shift(100, 0, 0, 1.499) == pytest.approx(66.71, abs=5e-3)
    assert doppler_shift(0, 0.3, 0.2, 1.5) == 0.0


def test_noise_power():
    assert noise_power_dbm(200e6) == pytest.approx(-80.99, abs=5e-3)
    assert noise_power_dbm(10.0) - noise_power_dbm(1.0) == pytest.approx(10.0)
    with pytest.raises(ValueError):
        noise_power_dbm(0.0)


def test_noise_power_one_hertz():
    assert noise_power_dbm(1.0) == pytest.approx(-164.0, abs=1e-9)
    assert noise_power_dbm(10.0) == pytest.approx(-154.0, abs=1e-9)


def test_cascade_identities(rng):
    G = rng.standard_normal((3, 2)) + 1j * rng.standard_normal((3, 2))
    np.testing.assert_allclose(cascade(np.ones(3), G), G)
    np.testing.assert_allclose(cascade(np.ones(3), np.zeros((3, 2))), 0)
    h = rng.standard_normal(3) + 1j * rng.standard_normal(3)
    np.testing.assert_allclose(cascade(h, G), np.diag(h.conj()) @ G, atol=1e-14)
    with pytest.raises(ValueError):
        cascade(np.ones(2), G)


def test_channels_deterministic():
    cfg = SystemConfig()
    a = generate_channels(cfg, np.random.default_rng(5))
    b = generate_channels(cfg, np.random.default_rng(5))
    for x, y in ((a.hD, b.hD), (a.G, b.G), (a.hR, b.hR), (a.H, b.H)):
        assert np.array_equal(x, y)


def test_channels_los_limit():
    cfg = SystemConfig(kappa_db=400.0)
    ch = generate_channels(cfg, np.random.default_rng(0))
    for k in range(cfg.K):
        d = np.linalg.norm(np.subtract(cfg.user_pos[k], cfg.bs_pos))
        pl = 10 ** (path_loss_db(cfg.PL0_db, cfg.beta_D, cfg.d0, d) / 10)
        np.testing.assert_allclose(np.abs(ch.hD[k]), math.sqrt(pl), rtol=1e-9)


def test_channels_rayleigh_variance():
    cfg = SystemConfig(kappa_db=-400.0, M_h=100, M_v=100, K=1)
    ch = generate_channels(cfg, np.random.default_rng(0))
    d = np.linalg.norm(np.subtract(cfg.user_pos[0], cfg.bs_pos))
    pl = 10 ** (path_loss_db(cfg.PL0_db, cfg.beta_D, cfg.d0, d) / 10)
    assert np.mean(np.abs(ch.hD[0]) ** 2) / pl == pytest.approx(1.0, rel=0.05)


def test_cascade_matches_channel_set():
    ch = generate_channels(SystemConfig(K=3), np.random.default_rng(2))
    for k in range(3):
        np.testing.assert_allclose(ch.H[k], cascade(ch.hR[k], ch.G))


def test_config_rejects_bad_values():
    with pytest.raises(ValueError):
        SystemConfig(K=0)
    with pytest.raises(ValueError):
        SystemConfig(B=-1.0)
    with pytest.raises(ValueError):
        SystemConfig(K=2, user_pos=((1.0, 0.0, 2.0),))


def test_config_text_roundtrip():
    cfg = SystemConfig(K=3, R_th=2.5, kappa_db=1.25)
    back, extra = config_from_text(config_to_text(cfg, {"algo": "scsie-pcu"}))
    assert back == cfg
    assert extra == {"algo": "scsie-pcu"}


def test_channels_text_roundtrip_exact():
    ch = generate_channels(SystemConfig(), np.random.default_rng(9))
    back = channels_from_text(channels_to_text(ch))
    assert np.array_equal(back.H, ch.H) and np.array_equal(back.hD, ch.hD)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_effective_channel_definition(seed):
    ch = generate_channels(SystemConfig(), np.random.default_rng(seed))
    th = np.exp(1j * np.random.default_rng(seed).uniform(0, 2 * np.pi, ch.N))
    a = ch.effective(th)
    for k in range(ch.K):
        np.testing.assert_allclose(a[k], ch.hD[k] + ch.H[k].conj().T @ th, rtol=1e-12)
