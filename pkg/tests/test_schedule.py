import numpy as np
import pytest

from difftraffic.schedule import (
    NoiseSchedule,
    ScheduleError,
    cfg_combine,
    cosine_schedule,
    ddim_step,
    ddpm_step,
    forward_noise,
    posterior_mean,
    posterior_sigma,
)


def closed_form_alpha_bar(k, K, s=0.008):
    f = lambda x: np.cos(((x / K + s) / (1 + s)) * np.pi / 2) ** 2
    return f(k) / f(0)


def test_schedule_invariants():
    for K in (1, 4, 5, 100):
        sch = cosine_schedule(K)
        assert sch.alpha_bar[0] == 1.0
        assert np.all(np.diff(sch.alpha_bar) < 0)
        assert np.all(sch.beta > 0) and np.all(sch.beta <= 0.999)
        np.testing.assert_allclose(sch.alpha_bar[1:], np.cumprod(sch.alpha), rtol=1e-12)


def test_schedule_k4_closed_form():
    sch = cosine_schedule(4)
    assert abs(sch.alpha_bar[1] - closed_form_alpha_bar(1, 4)) < 1e-12
    assert abs(sch.alpha_bar[1] - 0.8469) < 5e-4


def test_schedule_rejects_bad_K():
    with pytest.raises(ScheduleError):
        cosine_schedule(0)


def test_forward_noise_zero_eps():
    sch = cosine_schedule(10)
    tau0 = np.ones((2, 3))
    out = forward_noise(tau0, 4, sch, np.zeros_like(tau0))
    np.testing.assert_allclose(out, np.sqrt(sch.alpha_bar[4]) * tau0)


def test_forward_noise_terminal_is_nearly_pure_noise():
    sch = cosine_schedule(100)
    rng = np.random.default_rng(0)
    tau0 = rng.normal(size=(4, 16, 2))
    eps = rng.normal(size=tau0.shape)
    out = forward_noise(tau0, 100, sch, eps)
    assert np.linalg.norm(out - eps) / np.linalg.norm(eps) < 0.02


def test_forward_noise_variance():
    sch = cosine_schedule(100)
    rng = np.random.default_rng(1)
    k = 37
    tau0 = rng.normal(scale=2.0, size=100_000)
    eps = rng.normal(size=tau0.shape)
    out = forward_noise(tau0, k, sch, eps)
    expected = sch.alpha_bar[k] * tau0.var() + (1 - sch.alpha_bar[k])
    assert abs(out.var() - expected) / expected < 0.02


def test_forward_noise_range_check():
    sch = cosine_schedule(5)
    with pytest.raises(ScheduleError):
        forward_noise(np.zeros(3), 6, sch, np.zeros(3))
    with pytest.raises(ScheduleError):
        forward_noise(np.zeros(3), 0, sch, np.zeros(3))


def test_posterior_mean_k1_returns_tau0_hat():
    sch = cosine_schedule(8)
    rng = np.random.default_rng(2)
    tau_k, tau0 = rng.normal(size=(2, 5)), rng.normal(size=(2, 5))
    np.testing.assert_allclose(posterior_mean(tau_k, tau0, 1, sch), tau0, rtol=1e-12)


def test_posterior_mean_independent_formula():
    sch = cosine_schedule(50)
    rng = np.random.default_rng(3)
    for k in (1, 7, 25, 50):
        tau_k = rng.normal(size=(3, 4))
        tau0 = rng.normal(size=(3, 4))
        ab, abp = sch.alpha_bar[k], sch.alpha_bar[k - 1]
        beta, alpha = sch.beta[k - 1], sch.alpha[k - 1]
        oracle = (np.sqrt(abp) * beta / (1 - ab)) * tau0 + (np.sqrt(alpha) * (1 - abp) / (1 - ab)) * tau_k
        np.testing.assert_allclose(posterior_mean(tau_k, tau0, k, sch), oracle, atol=1e-12)


def test_ddim_round_trip_recovers_clean_field():
    sch = cosine_schedule(20)
    rng = np.random.default_rng(4)
    tau0 = rng.normal(size=(2, 8, 2))
    eps = rng.normal(size=tau0.shape)
    tau = forward_noise(tau0, sch.K, sch, eps)
    # with a perfect tau0_hat oracle, eta=0 DDIM inverts the forward map
    for k in range(sch.K, 0, -1):
        tau = ddim_step(tau, tau0, k, sch, eta=0.0)
    np.testing.assert_allclose(tau, tau0, atol=1e-6)


def test_ddim_deterministic_bitwise():
    sch = cosine_schedule(10)
    rng = np.random.default_rng(5)
    tau_k, tau0 = rng.normal(size=(3, 2)), rng.normal(size=(3, 2))
    a = ddim_step(tau_k, tau0, 5, sch, eta=0.0)
    b = ddim_step(tau_k, tau0, 5, sch, eta=0.0)
    assert np.array_equal(a, b)


def test_ddim_eta1_mean_matches_ddpm_posterior():
    sch = cosine_schedule(30)
    rng = np.random.default_rng(6)
    tau_k, tau0 = rng.normal(size=(4,)), rng.normal(size=(4,))
    for k in (2, 10, 30):
        mean_ddim = ddim_step(tau_k, tau0, k, sch, eta=1.0, z=np.zeros(4))
        np.testing.assert_allclose(mean_ddim, posterior_mean(tau_k, tau0, k, sch), atol=1e-12)
        sig = posterior_sigma(k, sch)
        z = rng.normal(size=4)
        np.testing.assert_allclose(ddim_step(tau_k, tau0, k, sch, eta=1.0, z=z),
                                   mean_ddim + sig * z, atol=1e-12)


def test_ddpm_step_is_mean_plus_sigma_z():
    sch = cosine_schedule(12)
    rng = np.random.default_rng(7)
    tau_k, tau0, z = rng.normal(size=(3,)), rng.normal(size=(3,)), rng.normal(size=(3,))
    out = ddpm_step(tau_k, tau0, 6, sch, z)
    np.testing.assert_allclose(out, posterior_mean(tau_k, tau0, 6, sch) + posterior_sigma(6, sch) * z)


def test_cfg_combine_exactness():
    rng = np.random.default_rng(8)
    c, u = rng.normal(size=(2, 3)), rng.normal(size=(2, 3))
    assert np.array_equal(cfg_combine(c, u, 0.0), c)
    assert np.array_equal(cfg_combine(c, u, -1.0), u)
    np.testing.assert_allclose(cfg_combine(c, u, 1.0), 2 * c - u, rtol=1e-15)


def test_cfg_affine_identity():
    rng = np.random.default_rng(9)
    a = rng.normal(size=(4,))
    for w in (-1.0, 0.0, 0.5, 2.0, 7.5):
        np.testing.assert_allclose(cfg_combine(a, a, w), a, rtol=1e-12)


def test_cfg_shape_mismatch():
    with pytest.raises(ScheduleError):
        cfg_combine(np.zeros(3), np.zeros(4), 1.0)
