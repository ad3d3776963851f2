"""Noise schedule and the reverse-process arithmetic.

The denoiser predicts the clean field tau0_hat directly, so both the DDPM
posterior step and the DDIM step are expressed in terms of tau0_hat rather
than predicted noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseSchedule:
    """Cosine-schedule constants; index k runs 1..K, alpha_bar has entry 0 == 1."""

    beta: np.ndarray  # (K,), beta[k-1] is the step-k variance
    alpha: np.ndarray  # (K,), 1 - beta
    alpha_bar: np.ndarray  # (K+1,), cumulative product with alpha_bar[0] = 1

    @property
    def K(self) -> int:
        return len(self.beta)

    def validate(self):
        if np.any(self.beta <= 0.0) or np.any(self.beta > 0.999):
            raise ScheduleError("beta out of (0, 0.999]")
        if self.alpha_bar[0] != 1.0:
            raise ScheduleError("alpha_bar[0] must be 1")
        if np.any(np.diff(self.alpha_bar) >= 0.0):
            raise ScheduleError("alpha_bar must be strictly decreasing")
        return self


def cosine_schedule(K: int, s: float = 0.008) -> NoiseSchedule:
    """Cosine variance schedule: alpha_bar_k = f(k)/f(0), f(k) = cos^2(((k/K + s)/(1+s)) pi/2)."""
    if K < 1:
        raise ScheduleError("K must be >= 1")
    k = np.arange(K + 1, dtype=float)
    f = np.cos(((k / K + s) / (1.0 + s)) * (np.pi / 2.0)) ** 2
    alpha_bar = f / f[0]
    beta = np.minimum(1.0 - alpha_bar[1:] / alpha_bar[:-1], 0.999)
    alpha = 1.0 - beta
    # re-accumulate so that alpha_bar[k] == prod(alpha[:k]) exactly, beta cap included
    alpha_bar = np.concatenate([[1.0], np.cumprod(alpha)])
    return NoiseSchedule(beta=beta, alpha=alpha, alpha_bar=alpha_bar).validate()


def _check_k(k: int, schedule: NoiseSchedule):
    if not 1 <= k <= schedule.K:
        raise ScheduleError(f"diffusion step k={k} out of [1, {schedule.K}]")


def forward_noise(tau0, k: int, schedule: NoiseSchedule, eps):
    """tau_k = sqrt(abar_k) tau0 + sqrt(1 - abar_k) eps, elementwise."""
    _check_k(k, schedule)
    ab = schedule.alpha_bar[k]
    return np.sqrt(ab) * np.asarray(tau0, dtype=float) + np.sqrt(1.0 - ab) * np.asarray(eps, dtype=float)


def posterior_mean(tau_k, tau0_hat, k: int, schedule: NoiseSchedule):
    """Mean of q(tau_{k-1} | tau_k, tau0_hat) for an x0-predicting model."""
    _check_k(k, schedule)
    ab_k = schedule.alpha_bar[k]
    ab_prev = schedule.alpha_bar[k - 1]
    beta_k = schedule.beta[k - 1]
    alpha_k = schedule.alpha[k - 1]
    c0 = np.sqrt(ab_prev) * beta_k / (1.0 - ab_k)
    ck = np.sqrt(alpha_k) * (1.0 - ab_prev) / (1.0 - ab_k)
    return c0 * np.asarray(tau0_hat, dtype=float) + ck * np.asarray(tau_k, dtype=float)


def posterior_sigma(k: int, schedule: NoiseSchedule) -> float:
    """sqrt(beta_tilde_k) with beta_tilde_k = beta_k (1 - abar_{k-1}) / (1 - abar_k)."""
    _check_k(k, schedule)
    ab_k = schedule.alpha_bar[k]
    ab_prev = schedule.alpha_bar[k - 1]
    return float(np.sqrt(schedule.beta[k - 1] * (1.0 - ab_prev) / (1.0 - ab_k)))


def ddpm_step(tau_k, tau0_hat, k: int, schedule: NoiseSchedule, z):
    """One ancestral sampling step: posterior mean plus sqrt(beta_tilde) z."""
    return posterior_mean(tau_k, tau0_hat, k, schedule) + posterior_sigma(k, schedule) * np.asarray(z, dtype=float)


def ddim_step(tau_k, tau0_hat, k: int, schedule: NoiseSchedule, eta: float = 0.0, z=None):
    """One DDIM step (stride 1); eta=0 is the deterministic sampler."""
    _check_k(k, schedule)
    tau_k = np.asarray(tau_k, dtype=float)
    tau0_hat = np.asarray(tau0_hat, dtype=float)
    ab_k = schedule.alpha_bar[k]
    ab_prev = schedule.alpha_bar[k - 1]
    eps_hat = (tau_k - np.sqrt(ab_k) * tau0_hat) / np.sqrt(1.0 - ab_k)
    sigma = eta * np.sqrt((1.0 - ab_prev) / (1.0 - ab_k)) * np.sqrt(1.0 - ab_k / ab_prev)
    out = np.sqrt(ab_prev) * tau0_hat + np.sqrt(max(1.0 - ab_prev - sigma ** 2, 0.0)) * eps_hat
    if sigma > 0.0:
        if z is None:
            raise ScheduleError("eta > 0 requires a noise draw z")
        out = out + sigma * np.asarray(z, dtype=float)
    return out


def cfg_combine(tau0_cond, tau0_uncond, w: float):
    """Classifier-free combination (1 + w) cond - w uncond.

    w == 0 and w == -1 return the conditional/unconditional branch exactly
    (bitwise), matching the definition's limiting cases.
    """
    c = np.asarray(tau0_cond, dtype=float)
    u = np.asarray(tau0_uncond, dtype=float)
    if c.shape != u.shape:
        raise ScheduleError("cfg_combine shape mismatch")
    if w == 0.0:
        return c.copy()
    if w == -1.0:
        return u.copy()
    return (1.0 + w) * c - w * u
